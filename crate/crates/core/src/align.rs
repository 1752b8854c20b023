//! Preference alignment of a toy video generator.
//!
//! The generator maps a prompt embedding linearly to a predicted feature
//! vector; sampling adds the world's correlated noise and clamps to `[0, 1]`.
//! A video's implicit reward is its squared prediction error under the
//! trained model minus that under the frozen reference, so lower is better
//! and the reference itself scores zero.

use std::fmt;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::Token;
use crate::optim::{self, OptimConfig, OptimState};
use crate::policy::{Policy, PolicyInput};
use crate::rng::{self, StreamRng};
use crate::world::{
    dot, prompt_embedding, quantize, write_file, LatentSampler, SyntheticVideo, WorldConfig,
    CAMERA_MOTION, OBJECT_MOTION,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub n_dims: usize,
    pub embed_dim: usize,
    /// Sampling noise scale; the loss only sees unclamped predictions.
    pub noise: f64,
    /// Row-major `n_dims x embed_dim` weights followed by `n_dims` biases.
    pub params: Vec<f64>,
}

impl Generator {
    /// Small random weights around a mid-range bias.
    pub fn init(n_dims: usize, embed_dim: usize, noise: f64, seed: u64) -> Result<Self> {
        if n_dims == 0 || embed_dim == 0 || !(noise >= 0.0 && noise.is_finite()) {
            return Err(Error::Config(format!(
                "invalid generator shape {n_dims}x{embed_dim}, noise {noise}"
            )));
        }
        let mut r = rng::stream(seed, "generator-init", 0);
        let mut params: Vec<f64> = (0..n_dims * embed_dim)
            .map(|_| 0.05 * r.sample::<f64, _>(StandardNormal))
            .collect();
        params.extend(std::iter::repeat_n(0.5, n_dims));
        Ok(Generator {
            n_dims,
            embed_dim,
            noise,
            params,
        })
    }

    fn bias_base(&self) -> usize {
        self.n_dims * self.embed_dim
    }

    pub fn predict(&self, embedding: &[f64]) -> Vec<f64> {
        let b = self.bias_base();
        (0..self.n_dims)
            .map(|d| {
                let row = &self.params[d * self.embed_dim..(d + 1) * self.embed_dim];
                dot(row, embedding) + self.params[b + d]
            })
            .collect()
    }

    /// Clamped prediction plus `noise` times a correlated latent draw.
    pub fn sample(
        &self,
        embedding: &[f64],
        sampler: &LatentSampler,
        rng: &mut StreamRng,
    ) -> Vec<f64> {
        let z = sampler.sample(rng);
        self.predict(embedding)
            .iter()
            .zip(&z)
            .map(|(m, z)| (m + self.noise * z).clamp(0.0, 1.0))
            .collect()
    }

    /// Accumulates `dL/dmu` for one embedding into a parameter gradient.
    fn backprop(&self, embedding: &[f64], dmu: &[f64], scale: f64, grad: &mut [f64]) {
        let b = self.bias_base();
        for d in 0..self.n_dims {
            for e in 0..self.embed_dim {
                grad[d * self.embed_dim + e] += scale * dmu[d] * embedding[e];
            }
            grad[b + d] += scale * dmu[d];
        }
    }
}

/// Scores a reward model assigns to one video. Per-dimension scores are
/// normalized ratings in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RmScores {
    pub overall: f64,
    pub dims: Vec<f64>,
}

impl RmScores {
    pub fn object_motion(&self) -> f64 {
        self.dims[OBJECT_MOTION]
    }

    pub fn camera_motion(&self) -> f64 {
        self.dims[CAMERA_MOTION]
    }
}

pub trait Scorer {
    fn score(&self, video: &SyntheticVideo) -> Result<RmScores>;
}

impl<S: Scorer + ?Sized> Scorer for Box<S> {
    fn score(&self, video: &SyntheticVideo) -> Result<RmScores> {
        (**self).score(video)
    }
}

pub fn score_videos(scorer: &dyn Scorer, videos: &[SyntheticVideo]) -> Result<Vec<RmScores>> {
    videos.iter().map(|v| scorer.score(v)).collect()
}

fn rating_scores(video: &SyntheticVideo, levels: u8) -> Vec<f64> {
    video
        .features
        .iter()
        .map(|f| quantize(*f, levels) as f64 / levels as f64)
        .collect()
}

/// Ground truth: overall score is the oracle utility, per-dimension scores
/// the noise-free oracle ratings.
#[derive(Clone, Debug)]
pub struct OracleScorer {
    pub world: WorldConfig,
}

impl Scorer for OracleScorer {
    fn score(&self, video: &SyntheticVideo) -> Result<RmScores> {
        Ok(RmScores {
            overall: self.world.utility(video),
            dims: rating_scores(video, self.world.rating_levels),
        })
    }
}

/// Overall score is a fixed weighting of the raw features; per-dimension
/// scores are oracle ratings. Weights concentrated on static dimensions
/// model a scorer that rewards visual quality over motion.
#[derive(Clone, Debug)]
pub struct WeightedScorer {
    pub weights: Vec<f64>,
    pub rating_levels: u8,
}

pub const STATIC_DOMINATED_WEIGHTS: [f64; 5] = [0.02, 0.02, 0.32, 0.32, 0.32];

impl Scorer for WeightedScorer {
    fn score(&self, video: &SyntheticVideo) -> Result<RmScores> {
        if self.weights.len() != video.features.len() {
            return Err(Error::Input("scorer weights do not match the video".into()));
        }
        Ok(RmScores {
            overall: dot(&self.weights, &video.features),
            dims: rating_scores(video, self.rating_levels),
        })
    }
}

/// Wraps a scorer and reports identical motion scores for every video.
#[derive(Clone, Debug)]
pub struct EqualMotion<S>(pub S);

impl<S: Scorer> Scorer for EqualMotion<S> {
    fn score(&self, video: &SyntheticVideo) -> Result<RmScores> {
        let mut s = self.0.score(video)?;
        s.dims[OBJECT_MOTION] = 0.5;
        s.dims[CAMERA_MOTION] = 0.5;
        Ok(s)
    }
}

/// A trained reward-model policy: per-dimension scores come from the
/// ratings in its greedy per-dimension blocks for the video (0 when a
/// dimension has no block); the overall score weights them.
#[derive(Clone, Debug)]
pub struct PolicyScorer {
    pub policy: Policy,
    pub overall_weights: Vec<f64>,
}

impl Scorer for PolicyScorer {
    fn score(&self, video: &SyntheticVideo) -> Result<RmScores> {
        let g = self.policy.shape.grammar;
        let traj = self.policy.greedy(&PolicyInput::Hcr {
            a: video.features.clone(),
            b: video.features.clone(),
        })?;
        let mut dims = vec![0.0; g.n_dims];
        let mut current = None;
        for t in &traj.first_section().0 {
            match t {
                Token::OpenDim => current = None,
                Token::DimMark(d) => current = Some(*d as usize),
                Token::Rate(k) => {
                    if let Some(d) = current {
                        dims[d] = *k as f64 / g.rating_levels as f64;
                    }
                }
                _ => {}
            }
        }
        Ok(RmScores {
            overall: dot(&self.overall_weights, &dims),
            dims,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub prompt_id: u64,
    pub embedding: Vec<f64>,
    pub winner: SyntheticVideo,
    pub loser: SyntheticVideo,
    pub scores_w: RmScores,
    pub scores_l: RmScores,
}

/// Indices `(best, worst)` by overall score, ties to the lowest index;
/// `None` when all scores are equal.
pub fn select_pair(scores: &[RmScores]) -> Option<(usize, usize)> {
    let mut best = 0;
    let mut worst = 0;
    for (i, s) in scores.iter().enumerate() {
        if s.overall > scores[best].overall {
            best = i;
        }
        if s.overall < scores[worst].overall {
            worst = i;
        }
    }
    (scores.get(best)?.overall > scores[worst].overall).then_some((best, worst))
}

pub fn construct_pair(
    prompt_id: u64,
    embedding: &[f64],
    candidates: &[SyntheticVideo],
    scores: &[RmScores],
) -> Option<PreferencePair> {
    let (w, l) = select_pair(scores)?;
    Some(PreferencePair {
        prompt_id,
        embedding: embedding.to_vec(),
        winner: candidates[w].clone(),
        loser: candidates[l].clone(),
        scores_w: scores[w].clone(),
        scores_l: scores[l].clone(),
    })
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn dpo_reward(
    model: &Generator,
    reference: &Generator,
    embedding: &[f64],
    video: &[f64],
) -> f64 {
    sq_dist(video, &model.predict(embedding)) - sq_dist(video, &reference.predict(embedding))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(x))` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Re-weighting from motion-score differences (winner minus loser).
pub fn motion_weights(s_w_om: f64, s_l_om: f64, s_w_cm: f64, s_l_cm: f64) -> (f64, f64) {
    let w_w = 0.5 + sigmoid((s_w_om - s_l_om) + (s_w_cm - s_l_cm));
    (w_w, 2.0 - w_w)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AlignMode {
    /// Regress onto winners only.
    Sft,
    /// Unweighted pairwise preference loss.
    Dpo,
    /// Pairwise loss with motion-corrective weights.
    Mcdpo,
}

impl AlignMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sft" => Some(AlignMode::Sft),
            "dpo" => Some(AlignMode::Dpo),
            "mcdpo" => Some(AlignMode::Mcdpo),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AlignMode::Sft => "sft",
            AlignMode::Dpo => "dpo",
            AlignMode::Mcdpo => "mcdpo",
        }
    }
}

impl fmt::Display for AlignMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub fn pair_weights(pair: &PreferencePair, mode: AlignMode) -> (f64, f64) {
    match mode {
        AlignMode::Mcdpo => motion_weights(
            pair.scores_w.object_motion(),
            pair.scores_l.object_motion(),
            pair.scores_w.camera_motion(),
            pair.scores_l.camera_motion(),
        ),
        AlignMode::Dpo | AlignMode::Sft => (1.0, 1.0),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairLoss {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub w_w: f64,
}

/// `-log sigmoid(-beta (w_w r_w - w_l r_l))` and its gradient; `Sft`
/// instead uses the squared error to the winner.
pub fn pair_loss(
    pair: &PreferencePair,
    model: &Generator,
    reference: &Generator,
    beta: f64,
    mode: AlignMode,
) -> Result<PairLoss> {
    let mut grad = vec![0.0; model.params.len()];
    let (loss, w_w) = accumulate_pair(pair, model, reference, beta, mode, 1.0, &mut grad)?;
    Ok(PairLoss { loss, grad, w_w })
}

fn accumulate_pair(
    pair: &PreferencePair,
    model: &Generator,
    reference: &Generator,
    beta: f64,
    mode: AlignMode,
    scale: f64,
    grad: &mut [f64],
) -> Result<(f64, f64)> {
    let x = &pair.embedding;
    let mu = model.predict(x);
    let vw = &pair.winner.features;
    let vl = &pair.loser.features;
    let (loss, dmu, w_w) = if mode == AlignMode::Sft {
        let dmu: Vec<f64> = mu.iter().zip(vw).map(|(m, v)| 2.0 * (m - v)).collect();
        (sq_dist(vw, &mu), dmu, 1.0)
    } else {
        let mu_ref = reference.predict(x);
        let (w_w, w_l) = pair_weights(pair, mode);
        let r_w = sq_dist(vw, &mu) - sq_dist(vw, &mu_ref);
        let r_l = sq_dist(vl, &mu) - sq_dist(vl, &mu_ref);
        let z = beta * (w_w * r_w - w_l * r_l);
        let s = sigmoid(z);
        let dmu: Vec<f64> = (0..mu.len())
            .map(|d| -2.0 * beta * s * (w_w * (vw[d] - mu[d]) - w_l * (vl[d] - mu[d])))
            .collect();
        (softplus(z), dmu, w_w)
    };
    if !loss.is_finite() || dmu.iter().any(|g| !g.is_finite()) {
        return Err(Error::Training(format!(
            "non-finite loss for prompt {}",
            pair.prompt_id
        )));
    }
    model.backprop(x, &dmu, scale, grad);
    Ok((loss * scale, w_w))
}

/// Mean loss and gradient over a batch of pairs.
pub fn batch_loss(
    pairs: &[&PreferencePair],
    model: &Generator,
    reference: &Generator,
    beta: f64,
    mode: AlignMode,
) -> Result<PairLoss> {
    if pairs.is_empty() {
        return Err(Error::Input("empty pair batch".into()));
    }
    let scale = 1.0 / pairs.len() as f64;
    let mut grad = vec![0.0; model.params.len()];
    let mut loss = 0.0;
    let mut w_sum = 0.0;
    for p in pairs {
        let (l, w) = accumulate_pair(p, model, reference, beta, mode, scale, &mut grad)?;
        loss += l;
        w_sum += w;
    }
    Ok(PairLoss {
        loss,
        grad,
        w_w: w_sum * scale,
    })
}

/// Mean motion intensity of generated samples.
pub fn dynamic_degree(
    model: &Generator,
    embeddings: &[Vec<f64>],
    n_samples: usize,
    sampler: &LatentSampler,
    rng: &mut StreamRng,
) -> Result<f64> {
    if n_samples == 0 || embeddings.is_empty() {
        return Err(Error::Input(
            "dynamic degree needs prompts and samples".into(),
        ));
    }
    let mut total = 0.0;
    for e in embeddings {
        for _ in 0..n_samples {
            let v = model.sample(e, sampler, rng);
            total += 0.5 * (v[OBJECT_MOTION] + v[CAMERA_MOTION]);
        }
    }
    Ok(total / (embeddings.len() * n_samples) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignConfig {
    pub mode: AlignMode,
    pub beta: f64,
    pub steps: u64,
    pub n_candidates: usize,
    pub n_prompts: usize,
    pub embed_dim: usize,
    pub noise: f64,
    /// Pairs per step; 0 uses every pair.
    pub batch_size: usize,
    /// Samples per prompt when measuring generated outputs.
    pub eval_samples: usize,
    pub optim: OptimConfig,
}

impl Default for AlignConfig {
    fn default() -> Self {
        AlignConfig {
            mode: AlignMode::Mcdpo,
            beta: 5.0,
            steps: 600,
            n_candidates: 4,
            n_prompts: 400,
            embed_dim: 4,
            noise: 0.25,
            batch_size: 0,
            eval_samples: 2,
            optim: OptimConfig {
                lr: 0.03,
                ..OptimConfig::default()
            },
        }
    }
}

impl AlignConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_candidates < 2 {
            return Err(Error::Config(
                "need at least 2 candidates per prompt".into(),
            ));
        }
        if self.n_prompts == 0 || self.embed_dim == 0 || self.eval_samples == 0 {
            return Err(Error::Config(
                "prompt, embedding and sample counts must be positive".into(),
            ));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!(
                "beta must be positive, got {}",
                self.beta
            )));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config(format!("invalid noise {}", self.noise)));
        }
        self.optim.validate()
    }
}

/// Samples `n_candidates` videos per prompt from `reference`, scores them
/// and keeps the best/worst pair of every non-degenerate prompt.
pub fn build_pairs(
    reference: &Generator,
    world: &WorldConfig,
    scorer: &dyn Scorer,
    config: &AlignConfig,
) -> Result<Vec<PreferencePair>> {
    let sampler = LatentSampler::new(world)?;
    let mut pairs = Vec::new();
    for prompt in 0..config.n_prompts as u64 {
        let emb = prompt_embedding(world.seed, prompt, config.embed_dim);
        let mut r = rng::stream(world.seed, "candidates", prompt);
        let candidates: Vec<SyntheticVideo> = (0..config.n_candidates)
            .map(|i| SyntheticVideo {
                video_id: prompt * config.n_candidates as u64 + i as u64,
                prompt_id: prompt,
                features: reference.sample(&emb, &sampler, &mut r),
            })
            .collect();
        let scores = score_videos(scorer, &candidates)?;
        if let Some(p) = construct_pair(prompt, &emb, &candidates, &scores) {
            pairs.push(p);
        }
    }
    if pairs.is_empty() {
        return Err(Error::Config(
            "every prompt produced a degenerate pair".into(),
        ));
    }
    Ok(pairs)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignMetrics {
    pub step: u64,
    pub loss: f64,
    pub w_w_mean: f64,
    pub dynamic_degree: f64,
    pub overall_score_mean: f64,
}

/// Dynamic degree and mean overall score of generated samples. Every call
/// draws the same noise, so successive measurements differ only through
/// the model.
pub fn measure(
    model: &Generator,
    world: &WorldConfig,
    scorer: &dyn Scorer,
    embeddings: &[Vec<f64>],
    n_samples: usize,
) -> Result<(f64, f64)> {
    let sampler = LatentSampler::new(world)?;
    let mut r = rng::stream(world.seed, "measure", 0);
    let mut dd = 0.0;
    let mut overall = 0.0;
    for (i, e) in embeddings.iter().enumerate() {
        for _ in 0..n_samples {
            let v = SyntheticVideo {
                video_id: i as u64,
                prompt_id: i as u64,
                features: model.sample(e, &sampler, &mut r),
            };
            dd += v.motion_mean();
            overall += scorer.score(&v)?.overall;
        }
    }
    let n = (embeddings.len() * n_samples) as f64;
    Ok((dd / n, overall / n))
}

/// Trains `model` on fixed pairs against a frozen copy of its initial
/// state. Returns one metric record per step plus the initial state as step 0.
pub fn align_run(
    model: &mut Generator,
    pairs: &[PreferencePair],
    world: &WorldConfig,
    scorer: &dyn Scorer,
    config: &AlignConfig,
    mut on_step: impl FnMut(&AlignMetrics) -> Result<()>,
) -> Result<Vec<AlignMetrics>> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(Error::Config("no preference pairs to train on".into()));
    }
    let reference = model.clone();
    let embeddings: Vec<Vec<f64>> = pairs.iter().map(|p| p.embedding.clone()).collect();
    let mut state = OptimState::new(model.params.len());
    let mut history = Vec::with_capacity(config.steps as usize + 1);
    let all: Vec<&PreferencePair> = pairs.iter().collect();
    let (dd0, s0) = measure(model, world, scorer, &embeddings, config.eval_samples)?;
    let initial = batch_loss(&all, model, &reference, config.beta, config.mode)?;
    let m0 = AlignMetrics {
        step: 0,
        loss: initial.loss,
        w_w_mean: initial.w_w,
        dynamic_degree: dd0,
        overall_score_mean: s0,
    };
    on_step(&m0)?;
    history.push(m0);
    for step in 1..=config.steps {
        let batch: Vec<&PreferencePair> =
            if config.batch_size == 0 || config.batch_size >= pairs.len() {
                all.clone()
            } else {
                let mut r = rng::stream(world.seed, "align-batch", step);
                (0..config.batch_size)
                    .map(|_| &pairs[r.random_range(0..pairs.len())])
                    .collect()
            };
        let out = batch_loss(&batch, model, &reference, config.beta, config.mode)?;
        optim::step(&config.optim, &mut state, &mut model.params, &out.grad)?;
        let (dd, s) = measure(model, world, scorer, &embeddings, config.eval_samples)?;
        let m = AlignMetrics {
            step,
            loss: out.loss,
            w_w_mean: out.w_w,
            dynamic_degree: dd,
            overall_score_mean: s,
        };
        on_step(&m)?;
        history.push(m);
    }
    Ok(history)
}

/// Writes pairs as CSV rows
/// `prompt_id,video_id_w,video_id_l,s_w,s_l,s_w_om,s_l_om,s_w_cm,s_l_cm`.
pub fn write_pairs(path: &Path, pairs: &[PreferencePair]) -> Result<()> {
    let mut out =
        String::from("prompt_id,video_id_w,video_id_l,s_w,s_l,s_w_om,s_l_om,s_w_cm,s_l_cm\n");
    for p in pairs {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            p.prompt_id,
            p.winner.video_id,
            p.loser.video_id,
            p.scores_w.overall,
            p.scores_l.overall,
            p.scores_w.object_motion(),
            p.scores_l.object_motion(),
            p.scores_w.camera_motion(),
            p.scores_l.camera_motion()
        ));
    }
    write_file(path, out.as_bytes())
}
