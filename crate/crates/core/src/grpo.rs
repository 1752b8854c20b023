//! Group-relative policy optimization for the toy policy.
//!
//! Rewards of the `G` responses sampled for one input are normalized
//! within the group; every token of a response carries that response's
//! advantage. The loss is the negated clipped surrogate plus an exact
//! categorical KL penalty against a frozen reference policy, both averaged
//! per token, then per response, then per group.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{self, OptimConfig, OptimState};
use crate::policy::{Policy, PolicyInput, Trajectory};
use crate::rng::StreamRng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrpoConfig {
    pub group_size: usize,
    pub clip: f64,
    pub kl_coef: f64,
    pub batch_size: usize,
    /// Gradient steps taken on each sampled batch.
    pub epochs: usize,
    pub optim: OptimConfig,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        GrpoConfig {
            group_size: 8,
            clip: 0.2,
            kl_coef: 0.07,
            batch_size: 16,
            epochs: 1,
            optim: OptimConfig::default(),
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 {
            return Err(Error::Config("group size must be at least 2".into()));
        }
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return Err(Error::Config(format!(
                "clip range {} outside (0, 1)",
                self.clip
            )));
        }
        if !(self.kl_coef >= 0.0 && self.kl_coef.is_finite()) {
            return Err(Error::Config(format!(
                "negative KL coefficient {}",
                self.kl_coef
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config(
                "batch size and epochs must be positive".into(),
            ));
        }
        self.optim.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RolloutGroup {
    pub input: PolicyInput,
    /// Sampled responses; each keeps the log-probabilities recorded while sampling.
    pub responses: Vec<Trajectory>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
}

/// Samples `group_size` responses for one input and scores them.
pub fn sample_group(
    policy: &Policy,
    input: &PolicyInput,
    config: &GrpoConfig,
    rng: &mut StreamRng,
    reward: impl Fn(&Trajectory) -> f64,
) -> Result<RolloutGroup> {
    let responses = (0..config.group_size)
        .map(|_| policy.sample(input, rng))
        .collect::<Result<Vec<_>>>()?;
    let rewards: Vec<f64> = responses.iter().map(reward).collect();
    let advantages = compute_advantages(&rewards)?;
    Ok(RolloutGroup {
        input: input.clone(),
        responses,
        rewards,
        advantages,
    })
}

/// `(r_i - mean) / std` with the population standard deviation; a constant
/// group has no signal and maps to zeros.
///
/// Computed as `(G r_i - sum) / sqrt(G * sum_j (G r_j - sum)^2)`, which is
/// bit-for-bit invariant to shifts and power-of-two scalings whenever the
/// rewards and the shift lie on a lattice the float format represents exactly.
pub fn compute_advantages(rewards: &[f64]) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(Error::Input(format!(
            "a group needs at least 2 rewards, got {}",
            rewards.len()
        )));
    }
    if let Some(r) = rewards.iter().find(|r| !r.is_finite()) {
        return Err(Error::Input(format!("non-finite reward {r}")));
    }
    let first = rewards[0];
    if rewards.iter().all(|r| *r == first) {
        return Ok(vec![0.0; rewards.len()]);
    }
    let g = rewards.len() as f64;
    let sum: f64 = rewards.iter().sum();
    let centred: Vec<f64> = rewards.iter().map(|r| g * r - sum).collect();
    let ss: f64 = centred.iter().map(|c| c * c).sum();
    if ss == 0.0 {
        return Ok(vec![0.0; rewards.len()]);
    }
    let scale = g.sqrt() / ss.sqrt();
    Ok(centred.iter().map(|c| c * scale).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Objective {
    pub loss: f64,
    pub grad: Vec<f64>,
    /// Mean per-token KL to the reference.
    pub kl: f64,
    /// Fraction of tokens whose clipped branch was selected.
    pub clip_fraction: f64,
}

/// Loss and analytic gradient of the clipped, KL-regularized objective.
pub fn grpo_objective(
    policy: &Policy,
    reference: &Policy,
    groups: &[RolloutGroup],
    config: &GrpoConfig,
) -> Result<Objective> {
    if policy.shape != reference.shape {
        return Err(Error::Input("policy and reference shapes differ".into()));
    }
    if groups.is_empty() {
        return Err(Error::Input("empty batch".into()));
    }
    let vocab = policy.shape.vocab();
    let n_params = policy.params.len();
    let mut grad = vec![0.0; n_params];
    let mut loss = 0.0;
    let mut kl_total = 0.0;
    let mut tokens = 0usize;
    let mut clipped = 0usize;
    let mut lp = vec![0.0; vocab];
    let mut lq = vec![0.0; vocab];
    let mut dz = vec![0.0; vocab];
    let mut probs = vec![0.0; vocab];
    let (lo, hi) = (1.0 - config.clip, 1.0 + config.clip);
    let per_group = 1.0 / groups.len() as f64;
    for group in groups {
        if group.responses.len() != group.advantages.len() || group.responses.is_empty() {
            return Err(Error::Input(
                "group responses and advantages differ in length".into(),
            ));
        }
        let per_response = per_group / group.responses.len() as f64;
        for (traj, adv) in group.responses.iter().zip(&group.advantages) {
            if traj.is_empty()
                || traj.logprobs.len() != traj.len()
                || traj.contexts.len() != traj.len()
            {
                return Err(Error::Input(
                    "trajectory bookkeeping is inconsistent".into(),
                ));
            }
            let w = per_response / traj.len() as f64;
            for ((tok, feats), old) in traj.tokens.iter().zip(&traj.contexts).zip(&traj.logprobs) {
                if feats
                    .iter()
                    .any(|f| f.param + f.len > n_params || f.vocab + f.len > vocab)
                {
                    return Err(Error::Input(
                        "trajectory context does not fit the policy".into(),
                    ));
                }
                let a =
                    policy.shape.grammar.index_of(*tok).ok_or_else(|| {
                        Error::Input(format!("token {tok} outside the vocabulary"))
                    })?;
                policy.log_probs(feats, &mut lp);
                reference.log_probs(feats, &mut lq);
                let ratio = (lp[a] - old).exp();
                let unclipped = ratio * adv;
                let clipped_obj = ratio.clamp(lo, hi) * adv;
                let use_unclipped = unclipped <= clipped_obj;
                probs.iter_mut().zip(&lp).for_each(|(p, l)| *p = l.exp());
                let kl: f64 = (0..vocab).map(|j| probs[j] * (lp[j] - lq[j])).sum();
                loss += w * (-unclipped.min(clipped_obj) + config.kl_coef * kl);
                kl_total += kl;
                tokens += 1;
                if !use_unclipped {
                    clipped += 1;
                }
                for j in 0..vocab {
                    let p = probs[j];
                    let mut d = config.kl_coef * p * (lp[j] - lq[j] - kl);
                    if use_unclipped {
                        let onehot = if j == a { 1.0 } else { 0.0 };
                        d -= adv * ratio * (onehot - p);
                    }
                    dz[j] = w * d;
                }
                for f in feats {
                    for i in 0..f.len {
                        grad[f.param + i] += dz[f.vocab + i];
                    }
                }
            }
        }
    }
    if !loss.is_finite() {
        return Err(Error::Training(format!("non-finite objective {loss}")));
    }
    Ok(Objective {
        loss,
        grad,
        kl: kl_total / tokens as f64,
        clip_fraction: clipped as f64 / tokens as f64,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub mean_reward: f64,
    pub loss: f64,
    pub kl: f64,
    pub grad_norm: f64,
}

/// One optimizer update of `policy` on a sampled batch.
pub fn grpo_step(
    policy: &mut Policy,
    reference: &Policy,
    groups: &[RolloutGroup],
    config: &GrpoConfig,
    state: &mut OptimState,
) -> Result<Objective> {
    let obj = grpo_objective(policy, reference, groups, config)?;
    optim::step(&config.optim, state, &mut policy.params, &obj.grad)?;
    Ok(obj)
}

/// A policy under training with its frozen reference and optimizer state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrpoTrainer {
    pub config: GrpoConfig,
    pub policy: Policy,
    pub reference: Policy,
    pub optim: OptimState,
    pub step: u64,
}

impl GrpoTrainer {
    /// Starts a stage: the reference is a frozen copy of `policy`.
    pub fn new(policy: Policy, config: GrpoConfig) -> Result<Self> {
        config.validate()?;
        let n = policy.params.len();
        Ok(GrpoTrainer {
            config,
            reference: policy.clone(),
            policy,
            optim: OptimState::new(n),
            step: 0,
        })
    }

    /// Samples one group per input, then takes `epochs` updates on the batch.
    pub fn train_step(
        &mut self,
        inputs: &[PolicyInput],
        rng: &mut StreamRng,
        reward: impl Fn(usize, &Trajectory) -> f64,
    ) -> Result<StepMetrics> {
        let groups = inputs
            .iter()
            .enumerate()
            .map(|(i, x)| sample_group(&self.policy, x, &self.config, rng, |t| reward(i, t)))
            .collect::<Result<Vec<_>>>()?;
        let n_rewards: usize = groups.iter().map(|g| g.rewards.len()).sum();
        let mean_reward =
            groups.iter().flat_map(|g| g.rewards.iter()).sum::<f64>() / n_rewards as f64;
        let mut first = None;
        for _ in 0..self.config.epochs {
            let obj = grpo_step(
                &mut self.policy,
                &self.reference,
                &groups,
                &self.config,
                &mut self.optim,
            )?;
            first.get_or_insert(obj);
        }
        let obj = first.expect("at least one epoch");
        let metrics = StepMetrics {
            step: self.step,
            mean_reward,
            loss: obj.loss,
            kl: obj.kl,
            grad_norm: obj.grad.iter().map(|g| g * g).sum::<f64>().sqrt(),
        };
        self.step += 1;
        Ok(metrics)
    }
}
