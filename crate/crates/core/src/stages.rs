//! Reward-model training stages over the synthetic world: single-dimension
//! rating with reasoning, then pairwise comparison with per-dimension blocks.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::{ResponseGrammar, Token, TokenSeq};
use crate::grpo::{GrpoTrainer, StepMetrics};
use crate::metrics::PrefRecord;
use crate::policy::{Policy, PolicyInput, Trajectory};
use crate::rng;
use crate::rubric::{final_verdict, hcr_reward, scdr_reward};
use crate::world::{oracle_preference, DimInstance, SyntheticVideo, Verdict, WorldConfig};

/// Every fifth prompt is held out from training.
pub fn is_heldout(prompt_id: u64) -> bool {
    prompt_id % 5 == 4
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScdrObjective {
    /// Format, accuracy and self-critic rewards with format gating.
    Full,
    /// Accuracy of the first rating token only; structure is not rewarded.
    AnswerOnly,
}

impl ScdrObjective {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "full" => Some(ScdrObjective::Full),
            "answer-only" => Some(ScdrObjective::AnswerOnly),
            _ => None,
        }
    }
}

pub fn scdr_input(inst: &DimInstance) -> PolicyInput {
    PolicyInput::Scdr {
        dim: inst.dim.0,
        video: inst.video.features.clone(),
    }
}

/// First rating token anywhere in the response.
pub fn lenient_answer(seq: &TokenSeq) -> Option<u8> {
    seq.tokens().iter().find_map(|t| match t {
        Token::Rate(k) => Some(*k),
        _ => None,
    })
}

pub fn scdr_reward_value(
    grammar: &ResponseGrammar,
    objective: ScdrObjective,
    seq: &TokenSeq,
    label: u8,
) -> f64 {
    match objective {
        ScdrObjective::Full => scdr_reward(grammar, seq, label).total() as f64,
        ScdrObjective::AnswerOnly => (lenient_answer(seq) == Some(label)) as u8 as f64,
    }
}

/// Greedy rating for one instance; 0 when the response yields none.
pub fn predict_rating(policy: &Policy, inst: &DimInstance, objective: ScdrObjective) -> Result<u8> {
    let seq = policy.greedy(&scdr_input(inst))?.seq();
    Ok(match objective {
        ScdrObjective::Full => policy
            .shape
            .grammar
            .parse_scdr(&seq)
            .map_or(0, |p| p.answer),
        ScdrObjective::AnswerOnly => lenient_answer(&seq).unwrap_or(0),
    })
}

pub fn scdr_accuracy(
    policy: &Policy,
    instances: &[DimInstance],
    objective: ScdrObjective,
) -> Result<f64> {
    let preds = instances
        .iter()
        .map(|i| predict_rating(policy, i, objective))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<u8> = instances.iter().map(|i| i.label).collect();
    crate::metrics::dim_accuracy(&preds, &labels)
}

fn draw_batch<'a, T>(items: &'a [T], size: usize, seed: u64, label: &str, step: u64) -> Vec<&'a T> {
    let mut r = rng::stream(seed, label, step);
    (0..size)
        .map(|_| &items[r.random_range(0..items.len())])
        .collect()
}

/// Trains until `trainer.step == until`. Step `s` draws its batch and
/// rollouts from streams keyed by `s`, so a resumed run replays exactly.
pub fn run_scdr(
    trainer: &mut GrpoTrainer,
    train: &[DimInstance],
    objective: ScdrObjective,
    until: u64,
    seed: u64,
    mut on_step: impl FnMut(&GrpoTrainer, &StepMetrics) -> Result<()>,
) -> Result<()> {
    if train.is_empty() {
        return Err(Error::Input("no training instances".into()));
    }
    let grammar = trainer.policy.shape.grammar;
    while trainer.step < until {
        let s = trainer.step;
        let batch = draw_batch(train, trainer.config.batch_size, seed, "scdr-batch", s);
        let inputs: Vec<PolicyInput> = batch.iter().map(|i| scdr_input(i)).collect();
        let mut r = rng::stream(seed, "scdr-rollout", s);
        let m = trainer.train_step(&inputs, &mut r, |i, t: &Trajectory| {
            scdr_reward_value(&grammar, objective, &t.seq(), batch[i].label)
        })?;
        on_step(trainer, &m)?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairInstance {
    pub a: SyntheticVideo,
    pub b: SyntheticVideo,
    pub label: Verdict,
}

/// All within-prompt pairs `(i, j)`, `i < j` in corpus order, labelled by the oracle.
pub fn make_pairs(corpus: &[SyntheticVideo], config: &WorldConfig) -> Result<Vec<PairInstance>> {
    let mut out = Vec::new();
    let mut start = 0;
    while start < corpus.len() {
        let prompt = corpus[start].prompt_id;
        let end = start
            + corpus[start..]
                .iter()
                .take_while(|v| v.prompt_id == prompt)
                .count();
        for i in start..end {
            for j in i + 1..end {
                out.push(PairInstance {
                    a: corpus[i].clone(),
                    b: corpus[j].clone(),
                    label: oracle_preference(&corpus[i], &corpus[j], config)?,
                });
            }
        }
        start = end;
    }
    Ok(out)
}

pub fn hcr_input(pair: &PairInstance) -> PolicyInput {
    PolicyInput::Hcr {
        a: pair.a.features.clone(),
        b: pair.b.features.clone(),
    }
}

pub fn hcr_reward_value(grammar: &ResponseGrammar, traj: &Trajectory, label: Verdict) -> f64 {
    let b = traj.second_section();
    hcr_reward(grammar, &traj.first_section(), &b, final_verdict(&b), label).total()
}

pub fn predict_verdict(policy: &Policy, pair: &PairInstance) -> Result<Option<Verdict>> {
    let traj = policy.greedy(&hcr_input(pair))?;
    Ok(final_verdict(&traj.second_section()))
}

pub fn pair_records(policy: &Policy, pairs: &[PairInstance]) -> Result<Vec<PrefRecord>> {
    pairs
        .iter()
        .map(|p| {
            Ok(PrefRecord {
                prediction: predict_verdict(policy, p)?,
                label: p.label,
            })
        })
        .collect()
}

pub fn run_hcr(
    trainer: &mut GrpoTrainer,
    train: &[PairInstance],
    until: u64,
    seed: u64,
    mut on_step: impl FnMut(&GrpoTrainer, &StepMetrics) -> Result<()>,
) -> Result<()> {
    if train.is_empty() {
        return Err(Error::Input("no training pairs".into()));
    }
    let grammar = trainer.policy.shape.grammar;
    while trainer.step < until {
        let s = trainer.step;
        let batch = draw_batch(train, trainer.config.batch_size, seed, "hcr-batch", s);
        let inputs: Vec<PolicyInput> = batch.iter().map(|p| hcr_input(p)).collect();
        let mut r = rng::stream(seed, "hcr-rollout", s);
        let m = trainer.train_step(&inputs, &mut r, |i, t: &Trajectory| {
            hcr_reward_value(&grammar, t, batch[i].label)
        })?;
        on_step(trainer, &m)?;
    }
    Ok(())
}
