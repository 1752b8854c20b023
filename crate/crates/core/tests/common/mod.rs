//! Helpers shared by the integration targets: the rubric fixture runner and
//! finite-difference gradient oracles.
#![allow(dead_code)]

use std::path::PathBuf;

use prefalign_core::align::{pair_loss, AlignMode, Generator, PreferencePair, RmScores};
use prefalign_core::format::ResponseGrammar;
use prefalign_core::grpo::{grpo_objective, sample_group, GrpoConfig, RolloutGroup};
use prefalign_core::policy::{Policy, PolicyInput, PolicyShape};
use prefalign_core::rng;
use prefalign_core::rubric::{final_verdict, hcr_reward, parse_fixture_line, scdr_reward, Fixture};
use prefalign_core::world::SyntheticVideo;
use rand::Rng;
use rand_distr::StandardNormal;

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub fn load_rubric_fixtures() -> Vec<(usize, Fixture)> {
    let path = fixture_path("rubric.txt");
    let text = std::fs::read_to_string(&path).expect("rubric fixture file");
    text.lines()
        .enumerate()
        .filter_map(|(i, l)| {
            parse_fixture_line(l)
                .unwrap_or_else(|e| panic!("line {}: {e}", i + 1))
                .map(|f| (i + 1, f))
        })
        .collect()
}

/// `Err` describes the first component that differs from the expectation.
pub fn check_fixture(grammar: &ResponseGrammar, fixture: &Fixture) -> Result<(), String> {
    match fixture {
        Fixture::Scdr {
            seq,
            label,
            expected,
        } => {
            let got = scdr_reward(grammar, seq, *label);
            (got == *expected)
                .then_some(())
                .ok_or_else(|| format!("expected {expected:?}, got {got:?}"))
        }
        Fixture::Hcr {
            seq_a,
            seq_b,
            y_gt,
            expected,
        } => {
            let got = hcr_reward(grammar, seq_a, seq_b, final_verdict(seq_b), *y_gt);
            (got == *expected)
                .then_some(())
                .ok_or_else(|| format!("expected {expected:?}, got {got:?}"))
        }
    }
}

pub fn small_shape() -> PolicyShape {
    PolicyShape {
        grammar: ResponseGrammar {
            n_dims: 2,
            rating_levels: 3,
            n_fillers: 1,
            max_len: 10,
        },
        n_buckets: 3,
    }
}

fn gaussian_policy(
    shape: PolicyShape,
    base: Option<&Policy>,
    scale: f64,
    r: &mut impl Rng,
) -> Policy {
    let mut p = match base {
        Some(b) => b.clone(),
        None => Policy::with_format_prior(shape, 3.0).expect("valid shape"),
    };
    for x in &mut p.params {
        *x += scale * r.sample::<f64, _>(StandardNormal);
    }
    p
}

fn random_input(shape: &PolicyShape, r: &mut impl Rng) -> PolicyInput {
    let d = shape.grammar.n_dims;
    let video = |r: &mut dyn rand::RngCore| (0..d).map(|_| r.random::<f64>()).collect::<Vec<_>>();
    if r.random::<bool>() {
        PolicyInput::Scdr {
            dim: r.random_range(0..d),
            video: video(r),
        }
    } else {
        PolicyInput::Hcr {
            a: video(r),
            b: video(r),
        }
    }
}

pub struct GrpoInstance {
    pub policy: Policy,
    pub reference: Policy,
    pub groups: Vec<RolloutGroup>,
    pub config: GrpoConfig,
}

/// Responses are sampled from a perturbed copy of the policy so that
/// importance ratios spread across both sides of the clip range.
pub fn grpo_instance(seed: u64) -> GrpoInstance {
    let shape = small_shape();
    let mut r = rng::stream(seed, "fd-grpo", 0);
    let policy = gaussian_policy(shape, None, 1.0, &mut r);
    let reference = gaussian_policy(shape, Some(&policy), 0.5, &mut r);
    let old = gaussian_policy(shape, Some(&policy), 0.4, &mut r);
    let config = GrpoConfig {
        group_size: 4,
        clip: 0.2,
        kl_coef: r.random_range(0.0..0.2),
        ..GrpoConfig::default()
    };
    let groups = (0..2)
        .map(|_| {
            let input = random_input(&shape, &mut r);
            let rewards: Vec<f64> = (0..config.group_size).map(|_| r.random::<f64>()).collect();
            let mut g = sample_group(&old, &input, &config, &mut r, |_| 0.0).expect("sampling");
            g.rewards = rewards;
            g.advantages =
                prefalign_core::grpo::compute_advantages(&g.rewards).expect("advantages");
            g
        })
        .collect();
    GrpoInstance {
        policy,
        reference,
        groups,
        config,
    }
}

/// Distance of the nearest importance ratio to a clip boundary, relative to it.
pub fn clip_margin(inst: &GrpoInstance) -> f64 {
    let mut margin = f64::INFINITY;
    for g in &inst.groups {
        for t in &g.responses {
            for (new, old) in inst.policy.token_logprobs(t).iter().zip(&t.logprobs) {
                let ratio = (new - old).exp();
                for bound in [1.0 - inst.config.clip, 1.0 + inst.config.clip] {
                    margin = margin.min((ratio - bound).abs() / bound);
                }
            }
        }
    }
    margin
}

pub struct FdResult {
    /// `max |analytic - numeric| / max(max |numeric|, 1e-8)`.
    pub rel_err: f64,
    pub clip_fraction: f64,
}

const FD_STEP: f64 = 1e-6;

fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = numeric.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-8);
    analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()))
        / scale
}

pub fn grpo_fd(inst: &GrpoInstance) -> FdResult {
    let obj = grpo_objective(&inst.policy, &inst.reference, &inst.groups, &inst.config)
        .expect("objective");
    let mut p = inst.policy.clone();
    let mut touched = vec![false; p.params.len()];
    for t in inst.groups.iter().flat_map(|g| &g.responses) {
        for f in t.contexts.iter().flatten() {
            touched[f.param..f.param + f.len]
                .iter_mut()
                .for_each(|x| *x = true);
        }
    }
    let mut numeric = vec![0.0; p.params.len()];
    for (i, n) in numeric.iter_mut().enumerate() {
        // Untouched parameters do not enter the objective at all.
        if !touched[i] {
            assert_eq!(obj.grad[i], 0.0, "gradient on an unused parameter");
            continue;
        }
        let x = p.params[i];
        p.params[i] = x + FD_STEP;
        let up = grpo_objective(&p, &inst.reference, &inst.groups, &inst.config)
            .unwrap()
            .loss;
        p.params[i] = x - FD_STEP;
        let down = grpo_objective(&p, &inst.reference, &inst.groups, &inst.config)
            .unwrap()
            .loss;
        p.params[i] = x;
        *n = (up - down) / (2.0 * FD_STEP);
    }
    FdResult {
        rel_err: max_rel_err(&obj.grad, &numeric),
        clip_fraction: obj.clip_fraction,
    }
}

pub struct PairInstance {
    pub pair: PreferencePair,
    pub model: Generator,
    pub reference: Generator,
    pub beta: f64,
    pub mode: AlignMode,
}

fn unit_vec(n: usize, r: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| r.random::<f64>()).collect()
}

pub fn random_scores(n: usize, r: &mut impl Rng) -> RmScores {
    RmScores {
        overall: r.random(),
        dims: unit_vec(n, r),
    }
}

pub fn pair_instance(seed: u64, mode: AlignMode) -> PairInstance {
    let (d, e) = (5, 4);
    let mut r = rng::stream(seed, "fd-pair", 0);
    let mut model = Generator::init(d, e, 0.1, seed).expect("generator");
    let mut reference = model.clone();
    for x in &mut model.params {
        *x += 0.3 * r.sample::<f64, _>(StandardNormal);
    }
    for x in &mut reference.params {
        *x += 0.3 * r.sample::<f64, _>(StandardNormal);
    }
    let video = |id, r: &mut dyn rand::RngCore| SyntheticVideo {
        video_id: id,
        prompt_id: 0,
        features: (0..d).map(|_| r.random::<f64>()).collect(),
    };
    let pair = PreferencePair {
        prompt_id: 0,
        embedding: (0..e).map(|_| r.sample::<f64, _>(StandardNormal)).collect(),
        winner: video(0, &mut r),
        loser: video(1, &mut r),
        scores_w: random_scores(d, &mut r),
        scores_l: random_scores(d, &mut r),
    };
    PairInstance {
        pair,
        model,
        reference,
        beta: r.random_range(0.5..10.0),
        mode,
    }
}

pub fn pair_fd(inst: &PairInstance) -> f64 {
    let eval = |m: &Generator| {
        pair_loss(&inst.pair, m, &inst.reference, inst.beta, inst.mode).expect("pair loss")
    };
    let analytic = eval(&inst.model).grad;
    let mut m = inst.model.clone();
    let numeric: Vec<f64> = (0..m.params.len())
        .map(|i| {
            let x = m.params[i];
            m.params[i] = x + FD_STEP;
            let up = eval(&m).loss;
            m.params[i] = x - FD_STEP;
            let down = eval(&m).loss;
            m.params[i] = x;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect();
    max_rel_err(&analytic, &numeric)
}
