//! Synthetic video world.
//!
//! A video is a point in a small quality-feature space. Latent features are
//! drawn from a correlated Gaussian (motion dimensions negatively coupled
//! with the static ones) and squashed into `[0, 1]` by the standard normal
//! CDF. A linear utility over the features acts as the ground-truth human
//! preference oracle.

use std::fmt;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};

/// Names of the supported quality dimensions, in index order.
pub const DIMENSION_NAMES: [&str; 5] = [
    "object_motion",
    "camera_motion",
    "visual_quality",
    "semantic_alignment",
    "temporal_consistency",
];

/// Indices of the object- and camera-motion dimensions.
pub const OBJECT_MOTION: usize = 0;
pub const CAMERA_MOTION: usize = 1;

/// Index of one quality dimension.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DimensionId(pub usize);

impl DimensionId {
    pub fn name(self) -> &'static str {
        DIMENSION_NAMES.get(self.0).copied().unwrap_or("unknown")
    }

    pub fn is_motion(self) -> bool {
        self.0 == OBJECT_MOTION || self.0 == CAMERA_MOTION
    }

    pub fn all(n_dims: usize) -> impl Iterator<Item = DimensionId> {
        (0..n_dims).map(DimensionId)
    }
}

impl fmt::Display for DimensionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Three-way preference outcome between video `A` and video `B`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    A,
    B,
    Tie,
}

impl Verdict {
    pub const ALL: [Verdict; 3] = [Verdict::A, Verdict::B, Verdict::Tie];

    /// Relabels A as B and vice versa; ties are fixed.
    pub fn swap(self) -> Verdict {
        match self {
            Verdict::A => Verdict::B,
            Verdict::B => Verdict::A,
            Verdict::Tie => Verdict::Tie,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::A => "A",
            Verdict::B => "B",
            Verdict::Tie => "TIE",
        }
    }

    pub fn parse(s: &str) -> Option<Verdict> {
        match s {
            "A" => Some(Verdict::A),
            "B" => Some(Verdict::B),
            "TIE" => Some(Verdict::Tie),
            _ => None,
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticVideo {
    pub video_id: u64,
    pub prompt_id: u64,
    /// Latent per-dimension quality, each in `[0, 1]`.
    pub features: Vec<f64>,
}

impl SyntheticVideo {
    pub fn motion_mean(&self) -> f64 {
        0.5 * (self.features[OBJECT_MOTION] + self.features[CAMERA_MOTION])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub n_dims: usize,
    /// Latent correlation between every motion dimension and every static one.
    pub motion_quality_corr: f64,
    /// Latent correlation among dimensions of the same group (motion/static).
    pub within_group_corr: f64,
    /// Probability that an ordinal label is perturbed by one level.
    pub label_noise: f64,
    /// Utility gap below which the oracle declares a tie.
    pub tie_epsilon: f64,
    pub oracle_weights: Vec<f64>,
    pub rating_levels: u8,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        let static_w = 0.5 / 3.0;
        WorldConfig {
            n_dims: 5,
            motion_quality_corr: -0.6,
            within_group_corr: 0.8,
            label_noise: 0.0,
            tie_epsilon: 0.005,
            oracle_weights: vec![0.25, 0.25, static_w, static_w, static_w],
            rating_levels: 5,
            seed: 0,
        }
    }
}

impl WorldConfig {
    pub fn dims(&self) -> impl Iterator<Item = DimensionId> {
        DimensionId::all(self.n_dims)
    }

    /// Target correlation matrix of the latent Gaussian.
    pub fn latent_correlation(&self) -> DMatrix<f64> {
        let n = self.n_dims;
        DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                1.0
            } else if DimensionId(i).is_motion() == DimensionId(j).is_motion() {
                self.within_group_corr
            } else {
                self.motion_quality_corr
            }
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(3..=DIMENSION_NAMES.len()).contains(&self.n_dims) {
            return bad(format!(
                "n_dims must be in 3..={}, got {}",
                DIMENSION_NAMES.len(),
                self.n_dims
            ));
        }
        if !(self.motion_quality_corr > -1.0 && self.motion_quality_corr <= 0.0) {
            return bad(format!(
                "motion_quality_corr must be in (-1, 0], got {}",
                self.motion_quality_corr
            ));
        }
        if !(self.within_group_corr >= 0.0 && self.within_group_corr < 1.0) {
            return bad(format!(
                "within_group_corr must be in [0, 1), got {}",
                self.within_group_corr
            ));
        }
        if !(0.0..=1.0).contains(&self.label_noise) {
            return bad(format!(
                "label_noise must be in [0, 1], got {}",
                self.label_noise
            ));
        }
        if !(self.tie_epsilon > 0.0 && self.tie_epsilon.is_finite()) {
            return bad(format!("tie_epsilon must be > 0, got {}", self.tie_epsilon));
        }
        if self.rating_levels < 2 {
            return bad(format!(
                "rating_levels must be >= 2, got {}",
                self.rating_levels
            ));
        }
        if self.oracle_weights.len() != self.n_dims {
            return bad(format!(
                "oracle_weights has {} entries for {} dimensions",
                self.oracle_weights.len(),
                self.n_dims
            ));
        }
        if self
            .oracle_weights
            .iter()
            .any(|w| !w.is_finite() || *w < 0.0)
        {
            return bad("oracle_weights must be finite and non-negative".into());
        }
        let sum: f64 = self.oracle_weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return bad(format!("oracle_weights must sum to 1, got {sum}"));
        }
        if self.oracle_weights[OBJECT_MOTION] <= 0.0 || self.oracle_weights[CAMERA_MOTION] <= 0.0 {
            return bad("oracle_weights must be positive on motion dimensions".into());
        }
        LatentSampler::new(self).map(|_| ())
    }

    /// Utility of a video under the oracle weights.
    pub fn utility(&self, video: &SyntheticVideo) -> f64 {
        dot(&self.oracle_weights, &video.features)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Draws latent Gaussian vectors with the world's correlation structure.
#[derive(Clone, Debug)]
pub struct LatentSampler {
    factor: DMatrix<f64>,
}

impl LatentSampler {
    /// Factors the latent correlation as `V sqrt(L)`, which also covers the
    /// singular (PSD but not PD) case.
    pub fn new(config: &WorldConfig) -> Result<Self> {
        let corr = config.latent_correlation();
        let eig = SymmetricEigen::new(corr);
        let min = eig
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        if min < -1e-12 {
            return Err(Error::Config(format!(
                "latent correlation is not positive semi-definite (min eigenvalue {min:.6}); \
                 lower |motion_quality_corr| or raise within_group_corr"
            )));
        }
        let n = config.n_dims;
        let mut factor = eig.eigenvectors.clone();
        for j in 0..n {
            let s = eig.eigenvalues[j].max(0.0).sqrt();
            for i in 0..n {
                factor[(i, j)] *= s;
            }
        }
        Ok(LatentSampler { factor })
    }

    pub fn dims(&self) -> usize {
        self.factor.nrows()
    }

    pub fn sample(&self, rng: &mut StreamRng) -> Vec<f64> {
        let n = self.dims();
        let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        (0..n)
            .map(|i| (0..n).map(|j| self.factor[(i, j)] * z[j]).sum())
            .collect()
    }
}

/// Standard normal CDF; the monotone squashing from latent to feature space.
pub fn squash(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

pub fn generate_corpus(
    config: &WorldConfig,
    n_prompts: usize,
    videos_per_prompt: usize,
) -> Result<Vec<SyntheticVideo>> {
    if n_prompts == 0 || videos_per_prompt == 0 {
        return Err(Error::Input("corpus counts must be >= 1".into()));
    }
    config.validate()?;
    let sampler = LatentSampler::new(config)?;
    let mut rng = rng::stream(config.seed, "corpus", 0);
    let mut corpus = Vec::with_capacity(n_prompts * videos_per_prompt);
    for prompt in 0..n_prompts {
        for _ in 0..videos_per_prompt {
            let latent = sampler.sample(&mut rng);
            corpus.push(SyntheticVideo {
                video_id: corpus.len() as u64,
                prompt_id: prompt as u64,
                features: latent.into_iter().map(squash).collect(),
            });
        }
    }
    Ok(corpus)
}

/// Noise-free ordinal rating of a feature value: equal-width bins over `[0, 1]`.
pub fn quantize(feature: f64, levels: u8) -> u8 {
    let levels = levels as usize;
    let bin = ((feature * levels as f64).floor().max(0.0) as usize).min(levels - 1);
    (bin + 1) as u8
}

/// Ground-truth ordinal label for one dimension of one video.
///
/// With probability `label_noise` the label moves one level up or down
/// (clamped to the valid range).
pub fn oracle_dim_score(
    video: &SyntheticVideo,
    dim: DimensionId,
    config: &WorldConfig,
    rng: &mut StreamRng,
) -> u8 {
    let label = quantize(video.features[dim.0], config.rating_levels);
    if config.label_noise > 0.0 && rng.random::<f64>() < config.label_noise {
        if rng.random::<bool>() {
            (label + 1).min(config.rating_levels)
        } else {
            label.saturating_sub(1).max(1)
        }
    } else {
        label
    }
}

pub fn oracle_preference(
    a: &SyntheticVideo,
    b: &SyntheticVideo,
    config: &WorldConfig,
) -> Result<Verdict> {
    if a.prompt_id != b.prompt_id {
        return Err(Error::Input(format!(
            "cannot compare videos of different prompts ({} vs {})",
            a.prompt_id, b.prompt_id
        )));
    }
    let gap = config.utility(a) - config.utility(b);
    Ok(if gap.abs() < config.tie_epsilon {
        Verdict::Tie
    } else if gap > 0.0 {
        Verdict::A
    } else {
        Verdict::B
    })
}

/// A single-aspect labelled instance.
#[derive(Clone, Debug, PartialEq)]
pub struct DimInstance {
    pub video: SyntheticVideo,
    pub dim: DimensionId,
    pub label: u8,
}

/// Splits every video into one instance per dimension, labelled by the oracle.
pub fn factorize(corpus: &[SyntheticVideo], config: &WorldConfig) -> Vec<DimInstance> {
    let mut rng = rng::stream(config.seed, "factorize", 0);
    let mut out = Vec::with_capacity(corpus.len() * config.n_dims);
    for video in corpus {
        for dim in config.dims() {
            let label = oracle_dim_score(video, dim, config, &mut rng);
            out.push(DimInstance {
                video: video.clone(),
                dim,
                label,
            });
        }
    }
    out
}

/// Pearson correlation matrix; `None` marks entries touching a constant dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub n: usize,
    pub entries: Vec<Option<f64>>,
}

impl CorrelationMatrix {
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.entries[i * self.n + j]
    }

    /// Mean of the defined motion-vs-static entries.
    pub fn motion_static_mean(&self) -> Option<f64> {
        let mut vals = Vec::new();
        for i in 0..self.n {
            for j in 0..self.n {
                if DimensionId(i).is_motion() && !DimensionId(j).is_motion() {
                    vals.extend(self.get(i, j));
                }
            }
        }
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    }
}

pub fn correlation_matrix(corpus: &[SyntheticVideo]) -> Result<CorrelationMatrix> {
    if corpus.len() < 3 {
        return Err(Error::Input(format!(
            "correlation needs at least 3 videos, got {}",
            corpus.len()
        )));
    }
    let n = corpus[0].features.len();
    if corpus.iter().any(|v| v.features.len() != n) {
        return Err(Error::Input(
            "videos have inconsistent dimensionality".into(),
        ));
    }
    let count = corpus.len() as f64;
    let means: Vec<f64> = (0..n)
        .map(|d| corpus.iter().map(|v| v.features[d]).sum::<f64>() / count)
        .collect();
    let mut cov = vec![0.0; n * n];
    for v in corpus {
        for i in 0..n {
            let di = v.features[i] - means[i];
            for j in i..n {
                cov[i * n + j] += di * (v.features[j] - means[j]);
            }
        }
    }
    let mut entries = vec![None; n * n];
    for i in 0..n {
        for j in i..n {
            let (vi, vj) = (cov[i * n + i], cov[j * n + j]);
            if vi <= 0.0 || vj <= 0.0 {
                continue;
            }
            let r = if i == j {
                1.0
            } else {
                (cov[i * n + j] / (vi * vj).sqrt()).clamp(-1.0, 1.0)
            };
            entries[i * n + j] = Some(r);
            entries[j * n + i] = Some(r);
        }
    }
    Ok(CorrelationMatrix { n, entries })
}

/// Fixed pseudo-random embedding attached to a prompt id.
pub fn prompt_embedding(seed: u64, prompt_id: u64, dim: usize) -> Vec<f64> {
    let mut rng = rng::stream(seed, "prompt-embedding", prompt_id);
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

/// Writes the corpus as CSV: header `video_id,prompt_id,<dimension names>`.
pub fn write_corpus(path: &Path, corpus: &[SyntheticVideo], n_dims: usize) -> Result<()> {
    let mut out = String::new();
    out.push_str("video_id,prompt_id");
    for d in DimensionId::all(n_dims) {
        out.push(',');
        out.push_str(d.name());
    }
    out.push('\n');
    for v in corpus {
        out.push_str(&format!("{},{}", v.video_id, v.prompt_id));
        for f in &v.features {
            out.push_str(&format!(",{f}"));
        }
        out.push('\n');
    }
    write_file(path, out.as_bytes())
}

pub fn read_corpus(path: &Path) -> Result<Vec<SyntheticVideo>> {
    let malformed = |line: usize, msg: String| Error::Malformed {
        what: "corpus",
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.len() < 2 || &header[0] != "video_id" || &header[1] != "prompt_id" {
        return Err(malformed(
            1,
            "header must start with video_id,prompt_id".into(),
        ));
    }
    for (d, name) in header.iter().skip(2).enumerate() {
        if DIMENSION_NAMES.get(d) != Some(&name) {
            return Err(malformed(
                1,
                format!("unexpected dimension column `{name}`"),
            ));
        }
    }
    let n_dims = header.len() - 2;
    let mut corpus = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| malformed(line, e.to_string()))?;
        if record.len() != n_dims + 2 {
            return Err(malformed(line, format!("expected {} fields", n_dims + 2)));
        }
        let int = |s: &str| s.parse::<u64>().map_err(|e| malformed(line, e.to_string()));
        let features = record
            .iter()
            .skip(2)
            .map(|s| s.parse::<f64>().map_err(|e| malformed(line, e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        corpus.push(SyntheticVideo {
            video_id: int(&record[0])?,
            prompt_id: int(&record[1])?,
            features,
        });
    }
    Ok(corpus)
}

/// Writes factorized instances as CSV `video_id,dim,label`.
pub fn write_instances(path: &Path, instances: &[DimInstance]) -> Result<()> {
    let mut out = String::from("video_id,dim,label\n");
    for inst in instances {
        out.push_str(&format!(
            "{},{},{}\n",
            inst.video.video_id,
            inst.dim.name(),
            inst.label
        ));
    }
    write_file(path, out.as_bytes())
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Malformed {
            what: "csv",
            path: path.to_path_buf(),
            line: 0,
            msg: format!("{other:?}"),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn video(prompt: u64, features: Vec<f64>) -> SyntheticVideo {
        SyntheticVideo {
            video_id: 0,
            prompt_id: prompt,
            features,
        }
    }

    #[test]
    fn default_config_is_valid() {
        WorldConfig::default().validate().unwrap();
    }

    #[test]
    fn rejects_non_psd_coupling() {
        let cfg = WorldConfig {
            within_group_corr: 0.0,
            motion_quality_corr: -0.9,
            ..WorldConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        assert!(generate_corpus(&cfg, 2, 2).is_err());
    }

    #[test]
    fn rejects_bad_weights() {
        let mut cfg = WorldConfig::default();
        cfg.oracle_weights[2] += 1e-6;
        assert!(cfg.validate().is_err());
        let cfg = WorldConfig {
            oracle_weights: vec![0.0, 0.5, 0.5, 0.0, 0.0],
            ..WorldConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn quantize_bins() {
        assert_eq!(quantize(0.0, 5), 1);
        assert_eq!(quantize(0.999, 5), 5);
        assert_eq!(quantize(1.0, 5), 5);
        // Bin edges for 5 levels are 0.2, 0.4, 0.6, 0.8; 0.5 lies in [0.4, 0.6).
        assert_eq!(quantize(0.5, 5), 3);
        assert_eq!(quantize(0.2, 5), 2);
        assert_eq!(quantize(0.19999, 5), 1);
    }

    #[test]
    fn oracle_dim_score_noise_free() {
        let cfg = WorldConfig::default();
        let mut rng = rng::stream(0, "t", 0);
        let v = video(0, vec![0.0, 0.999, 0.5, 0.1, 0.1]);
        assert_eq!(oracle_dim_score(&v, DimensionId(0), &cfg, &mut rng), 1);
        assert_eq!(oracle_dim_score(&v, DimensionId(1), &cfg, &mut rng), 5);
        assert_eq!(oracle_dim_score(&v, DimensionId(2), &cfg, &mut rng), 3);
    }

    #[test]
    fn oracle_dim_score_noise_stays_in_range_and_moves_one_level() {
        let cfg = WorldConfig {
            label_noise: 1.0,
            ..WorldConfig::default()
        };
        let mut rng = rng::stream(0, "t", 0);
        for f in [0.0, 0.3, 0.5, 0.99] {
            let v = video(0, vec![f; 5]);
            for _ in 0..50 {
                let clean = quantize(f, 5) as i32;
                let l = oracle_dim_score(&v, DimensionId(0), &cfg, &mut rng) as i32;
                assert!((1..=5).contains(&l));
                assert!((l - clean).abs() <= 1);
            }
        }
    }

    #[test]
    fn oracle_preference_cases() {
        let cfg = WorldConfig::default();
        let a = video(1, vec![0.3, 0.4, 0.5, 0.6, 0.7]);
        assert_eq!(oracle_preference(&a, &a, &cfg).unwrap(), Verdict::Tie);

        // One-hot weights on object motion: u(a) = 0.9, u(b) = 0.2.
        let one_hot = WorldConfig {
            oracle_weights: vec![1.0, 0.0, 0.0, 0.0, 0.0],
            tie_epsilon: 0.05,
            ..WorldConfig::default()
        };
        let a = video(1, vec![0.9, 0.0, 0.0, 0.0, 0.0]);
        let b = video(1, vec![0.2, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(oracle_preference(&a, &b, &one_hot).unwrap(), Verdict::A);
        assert_eq!(oracle_preference(&b, &a, &one_hot).unwrap(), Verdict::B);

        // Gap of exactly two epsilons is not a tie.
        let a = video(1, vec![0.2 + 2.0 * 0.05, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(oracle_preference(&a, &b, &one_hot).unwrap(), Verdict::A);

        let other = video(2, vec![0.1; 5]);
        assert!(matches!(
            oracle_preference(&a, &other, &cfg),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn factorize_cardinality_and_bijection() {
        let cfg = WorldConfig::default();
        let corpus = generate_corpus(&cfg, 1, 2).unwrap();
        let inst = factorize(&corpus, &cfg);
        assert_eq!(inst.len(), 10);
        let mut seen = std::collections::HashSet::new();
        for i in &inst {
            assert!(seen.insert((i.video.video_id, i.dim)));
            assert!((1..=5).contains(&i.label));
        }
    }

    #[test]
    fn factorize_replays_oracle() {
        let cfg = WorldConfig {
            label_noise: 0.3,
            seed: 11,
            ..WorldConfig::default()
        };
        let corpus = generate_corpus(&cfg, 3, 4).unwrap();
        let inst = factorize(&corpus, &cfg);
        let mut rng = rng::stream(cfg.seed, "factorize", 0);
        let mut k = 0;
        for v in &corpus {
            for d in cfg.dims() {
                assert_eq!(inst[k].label, oracle_dim_score(v, d, &cfg, &mut rng));
                k += 1;
            }
        }
    }

    #[test]
    fn corpus_is_deterministic() {
        let cfg = WorldConfig {
            seed: 99,
            ..WorldConfig::default()
        };
        let a = generate_corpus(&cfg, 5, 3).unwrap();
        let b = generate_corpus(&cfg, 5, 3).unwrap();
        assert_eq!(a, b);
        assert!(a
            .iter()
            .all(|v| v.features.iter().all(|f| (0.0..=1.0).contains(f))));
    }

    #[test]
    fn independent_world_has_no_coupling() {
        let cfg = WorldConfig {
            motion_quality_corr: 0.0,
            within_group_corr: 0.0,
            seed: 3,
            ..WorldConfig::default()
        };
        let corpus = generate_corpus(&cfg, 1000, 4).unwrap();
        let m = correlation_matrix(&corpus).unwrap();
        assert!(m.motion_static_mean().unwrap().abs() < 0.1);
    }

    #[test]
    fn coupled_world_matches_copula_rank_correlation() {
        let cfg = WorldConfig {
            seed: 5,
            ..WorldConfig::default()
        };
        let corpus = generate_corpus(&cfg, 2500, 4).unwrap();
        let m = correlation_matrix(&corpus).unwrap();
        // For uniform marginals of a Gaussian copula, Pearson equals Spearman:
        // (6 / pi) * asin(rho / 2).
        let expected = 6.0 / std::f64::consts::PI * (-0.6f64 / 2.0).asin();
        for i in 0..2 {
            for j in 2..5 {
                let r = m.get(i, j).unwrap();
                assert!((-0.7..=-0.5).contains(&r), "entry ({i},{j}) = {r}");
                assert!((r - expected).abs() < 0.03, "entry ({i},{j}) = {r}");
            }
        }
    }

    #[test]
    fn correlation_matrix_shape_and_degenerate_case() {
        let cfg = WorldConfig::default();
        let corpus = generate_corpus(&cfg, 10, 2).unwrap();
        let m = correlation_matrix(&corpus).unwrap();
        for i in 0..5 {
            assert_eq!(m.get(i, i), Some(1.0));
            for j in 0..5 {
                assert_eq!(m.get(i, j), m.get(j, i));
                let r = m.get(i, j).unwrap();
                assert!((-1.0..=1.0).contains(&r));
            }
        }
        let dup = vec![corpus[0].clone(); 4];
        let m = correlation_matrix(&dup).unwrap();
        assert!(m.entries.iter().all(Option::is_none));
        assert!(correlation_matrix(&corpus[..2]).is_err());
    }

    #[test]
    fn corpus_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.csv");
        let cfg = WorldConfig::default();
        let corpus = generate_corpus(&cfg, 4, 3).unwrap();
        write_corpus(&path, &corpus, cfg.n_dims).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(
            "video_id,prompt_id,object_motion,camera_motion,visual_quality,\
             semantic_alignment,temporal_consistency\n"
        ));
        assert_eq!(read_corpus(&path).unwrap(), corpus);
    }
}
