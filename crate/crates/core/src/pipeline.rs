//! End-to-end orchestration: configuration, stage commands, artifacts.
//!
//! Output layout under the run directory:
//!
//! ```text
//! config.txt
//! world/{corpus.csv, instances.csv, pairs.csv, correlation.json}
//! scdr/{checkpoint.json, metrics.jsonl, eval.jsonl, curve.csv}
//! hcr/{checkpoint.json, metrics.jsonl, eval.jsonl, curve.csv}
//! align/<mode>/{generator.json, pairs.csv, metrics.jsonl, curve.csv}
//! align/report.json
//! eval/{report.json, curves/*.csv}
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::align::{
    align_run, build_pairs, write_pairs, AlignConfig, AlignMetrics, AlignMode, EqualMotion,
    Generator, OracleScorer, PolicyScorer, Scorer, WeightedScorer, STATIC_DOMINATED_WEIGHTS,
};
use crate::error::{Error, Result};
use crate::grpo::{GrpoConfig, GrpoTrainer, StepMetrics};
use crate::metrics::{preference_accuracy, summarize_run, PrefRecord, RunReport, TieMode};
use crate::optim::{OptimConfig, OptimizerKind};
use crate::policy::{Policy, PolicyShape};
use crate::stages::{
    is_heldout, make_pairs, pair_records, run_hcr, run_scdr, scdr_accuracy, PairInstance,
    ScdrObjective,
};
use crate::world::{
    correlation_matrix, factorize, generate_corpus, read_corpus, write_corpus, write_file,
    write_instances, CorrelationMatrix, DimInstance, SyntheticVideo, WorldConfig,
};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "PREFALIGN_OUT";

const CHECKPOINT_FORMAT: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScorerKind {
    /// Oracle utility and ratings.
    Oracle,
    /// Fixed feature weighting (`align.overall_weights`).
    Weighted,
    /// The trained pairwise reward-model checkpoint.
    Rm,
}

impl ScorerKind {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "oracle" => Some(ScorerKind::Oracle),
            "weighted" => Some(ScorerKind::Weighted),
            "rm" => Some(ScorerKind::Rm),
            _ => None,
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            ScorerKind::Oracle => "oracle",
            ScorerKind::Weighted => "weighted",
            ScorerKind::Rm => "rm",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub world: WorldConfig,
    pub n_prompts: usize,
    pub videos_per_prompt: usize,
    pub shape: PolicyShape,
    pub prior_strength: f64,
    pub grpo: GrpoConfig,
    /// Whether the optimizer learning rate decays linearly over each stage.
    pub lr_decay: bool,
    pub eval_every: u64,
    pub scdr_steps: u64,
    pub scdr_objective: ScdrObjective,
    pub hcr_steps: u64,
    pub hcr_from_scratch: bool,
    pub hcr_target_tau: f64,
    pub align: AlignConfig,
    pub scorer: ScorerKind,
    pub overall_weights: Vec<f64>,
    /// Run every alignment mode on the same pairs and write a comparison.
    pub align_compare: bool,
    /// Report identical motion scores for every video.
    pub equal_motion: bool,
    pub stage_scdr: bool,
    pub stage_hcr: bool,
    pub stage_align: bool,
}

impl RunConfig {
    /// Laptop-scale defaults.
    pub fn desk() -> Self {
        RunConfig {
            seed: 0,
            out: default_out_root(),
            world: WorldConfig::default(),
            n_prompts: 200,
            videos_per_prompt: 4,
            shape: PolicyShape::default(),
            prior_strength: 4.5,
            grpo: GrpoConfig::default(),
            lr_decay: false,
            eval_every: 50,
            scdr_steps: 2000,
            scdr_objective: ScdrObjective::Full,
            hcr_steps: 1000,
            hcr_from_scratch: false,
            hcr_target_tau: 0.85,
            align: AlignConfig::default(),
            scorer: ScorerKind::Weighted,
            overall_weights: STATIC_DOMINATED_WEIGHTS.to_vec(),
            align_compare: true,
            equal_motion: false,
            stage_scdr: true,
            stage_hcr: true,
            stage_align: true,
        }
    }

    /// Optimizer settings reported for the full-size models. At this scale
    /// they barely move the toy parameters; they are kept for reference runs.
    pub fn paper() -> Self {
        let mut c = RunConfig::desk();
        c.grpo = GrpoConfig {
            group_size: 8,
            kl_coef: 0.07,
            batch_size: 16,
            epochs: 2,
            optim: OptimConfig {
                lr: 1e-6,
                ..OptimConfig::default()
            },
            ..c.grpo
        };
        c.lr_decay = true;
        c.align.beta = 2500.0;
        c.align.batch_size = 8;
        c.align.optim.lr = 6e-6;
        c.align.optim.decay_steps = None;
        c.align.steps = (20 * c.align.n_prompts / 8) as u64;
        c
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(RunConfig::desk()),
            "paper" => Ok(RunConfig::paper()),
            _ => Err(Error::Config(format!(
                "unknown profile `{name}` (desk, paper)"
            ))),
        }
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = || Error::Config(format!("invalid value `{value}` for `{key}`"));
        let f = || value.parse::<f64>().map_err(|_| bad());
        let u = || value.parse::<u64>().map_err(|_| bad());
        let z = || value.parse::<usize>().map_err(|_| bad());
        let b = || value.parse::<bool>().map_err(|_| bad());
        let list = || -> Result<Vec<f64>> {
            value
                .split(',')
                .map(|x| x.trim().parse::<f64>().map_err(|_| bad()))
                .collect()
        };
        match key {
            "seed" => self.seed = u()?,
            "out" => self.out = PathBuf::from(value),
            "world.n_prompts" => self.n_prompts = z()?,
            "world.videos_per_prompt" => self.videos_per_prompt = z()?,
            "world.n_dims" => {
                let n = z()?;
                self.world.n_dims = n;
                self.shape.grammar.n_dims = n;
            }
            "world.motion_quality_corr" => self.world.motion_quality_corr = f()?,
            "world.within_group_corr" => self.world.within_group_corr = f()?,
            "world.label_noise" => self.world.label_noise = f()?,
            "world.tie_epsilon" => self.world.tie_epsilon = f()?,
            "world.oracle_weights" => self.world.oracle_weights = list()?,
            "world.rating_levels" => {
                let k = value.parse::<u8>().map_err(|_| bad())?;
                self.world.rating_levels = k;
                self.shape.grammar.rating_levels = k;
            }
            "policy.n_fillers" => {
                self.shape.grammar.n_fillers = value.parse().map_err(|_| bad())?
            }
            "policy.max_len" => self.shape.grammar.max_len = z()?,
            "policy.n_buckets" => self.shape.n_buckets = z()?,
            "policy.prior_strength" => self.prior_strength = f()?,
            "grpo.group_size" => self.grpo.group_size = z()?,
            "grpo.clip" => self.grpo.clip = f()?,
            "grpo.kl_coef" => self.grpo.kl_coef = f()?,
            "grpo.batch_size" => self.grpo.batch_size = z()?,
            "grpo.epochs" => self.grpo.epochs = z()?,
            "grpo.lr" => self.grpo.optim.lr = f()?,
            "grpo.weight_decay" => self.grpo.optim.weight_decay = f()?,
            "grpo.optimizer" => self.grpo.optim.kind = parse_optimizer(value).ok_or_else(bad)?,
            "grpo.lr_decay" => self.lr_decay = b()?,
            "eval_every" => self.eval_every = u()?,
            "scdr.steps" => self.scdr_steps = u()?,
            "scdr.objective" => {
                self.scdr_objective = ScdrObjective::parse(value).ok_or_else(bad)?
            }
            "hcr.steps" => self.hcr_steps = u()?,
            "hcr.from_scratch" => self.hcr_from_scratch = b()?,
            "hcr.target_tau" => self.hcr_target_tau = f()?,
            "align.mode" => self.align.mode = AlignMode::parse(value).ok_or_else(bad)?,
            "align.beta" => self.align.beta = f()?,
            "align.steps" => self.align.steps = u()?,
            "align.n_candidates" => self.align.n_candidates = z()?,
            "align.n_prompts" => self.align.n_prompts = z()?,
            "align.embed_dim" => self.align.embed_dim = z()?,
            "align.noise" => self.align.noise = f()?,
            "align.batch_size" => self.align.batch_size = z()?,
            "align.eval_samples" => self.align.eval_samples = z()?,
            "align.lr" => self.align.optim.lr = f()?,
            "align.optimizer" => self.align.optim.kind = parse_optimizer(value).ok_or_else(bad)?,
            "align.scorer" => self.scorer = ScorerKind::parse(value).ok_or_else(bad)?,
            "align.overall_weights" => self.overall_weights = list()?,
            "align.compare" => self.align_compare = b()?,
            "align.equal_motion" => self.equal_motion = b()?,
            "stages.scdr" => self.stage_scdr = b()?,
            "stages.hcr" => self.stage_hcr = b()?,
            "stages.align" => self.stage_align = b()?,
            _ => return Err(Error::Config(format!("unknown configuration key `{key}`"))),
        }
        Ok(())
    }

    /// Applies a flat configuration document: one `key = value` per line,
    /// `#` starts a comment. A `profile = ...` line must come first if present.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "line {}: expected `key = value`, got `{raw}`",
                    i + 1
                ))
            })?;
            let (k, v) = (k.trim(), v.trim());
            if k == "profile" {
                let out = self.out.clone();
                *self = RunConfig::profile(v)?;
                self.out = out;
            } else {
                self.set(k, v)
                    .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut c = RunConfig::desk();
        c.apply_text(&text)?;
        Ok(c)
    }

    /// Finalizes derived fields and checks every sub-configuration.
    pub fn validate(&mut self) -> Result<()> {
        self.world.seed = self.seed;
        self.world.validate()?;
        self.shape.validate()?;
        self.grpo.validate()?;
        self.align.validate()?;
        if self.n_prompts < 5 || self.videos_per_prompt < 2 {
            return Err(Error::Config(
                "need at least 5 prompts and 2 videos per prompt".into(),
            ));
        }
        if self.shape.grammar.n_dims != self.world.n_dims
            || self.shape.grammar.rating_levels != self.world.rating_levels
        {
            return Err(Error::Config("policy and world dimensions disagree".into()));
        }
        if self.overall_weights.len() != self.world.n_dims {
            return Err(Error::Config(format!(
                "align.overall_weights has {} entries for {} dimensions",
                self.overall_weights.len(),
                self.world.n_dims
            )));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be positive".into()));
        }
        Ok(())
    }

    /// Canonical `key = value` listing, sorted by key.
    pub fn render(&self) -> String {
        let join = |v: &[f64]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        let opt = |k: OptimizerKind| match k {
            OptimizerKind::AdamW => "adamw",
            OptimizerKind::Sgd => "sgd",
        };
        let mut m: BTreeMap<&str, String> = BTreeMap::new();
        m.insert("seed", self.seed.to_string());
        m.insert("out", self.out.display().to_string());
        m.insert("world.n_prompts", self.n_prompts.to_string());
        m.insert(
            "world.videos_per_prompt",
            self.videos_per_prompt.to_string(),
        );
        m.insert("world.n_dims", self.world.n_dims.to_string());
        m.insert(
            "world.motion_quality_corr",
            self.world.motion_quality_corr.to_string(),
        );
        m.insert(
            "world.within_group_corr",
            self.world.within_group_corr.to_string(),
        );
        m.insert("world.label_noise", self.world.label_noise.to_string());
        m.insert("world.tie_epsilon", self.world.tie_epsilon.to_string());
        m.insert("world.oracle_weights", join(&self.world.oracle_weights));
        m.insert("world.rating_levels", self.world.rating_levels.to_string());
        m.insert("policy.n_fillers", self.shape.grammar.n_fillers.to_string());
        m.insert("policy.max_len", self.shape.grammar.max_len.to_string());
        m.insert("policy.n_buckets", self.shape.n_buckets.to_string());
        m.insert("policy.prior_strength", self.prior_strength.to_string());
        m.insert("grpo.group_size", self.grpo.group_size.to_string());
        m.insert("grpo.clip", self.grpo.clip.to_string());
        m.insert("grpo.kl_coef", self.grpo.kl_coef.to_string());
        m.insert("grpo.batch_size", self.grpo.batch_size.to_string());
        m.insert("grpo.epochs", self.grpo.epochs.to_string());
        m.insert("grpo.lr", self.grpo.optim.lr.to_string());
        m.insert(
            "grpo.weight_decay",
            self.grpo.optim.weight_decay.to_string(),
        );
        m.insert("grpo.optimizer", opt(self.grpo.optim.kind).into());
        m.insert("grpo.lr_decay", self.lr_decay.to_string());
        m.insert("eval_every", self.eval_every.to_string());
        m.insert("scdr.steps", self.scdr_steps.to_string());
        m.insert(
            "scdr.objective",
            match self.scdr_objective {
                ScdrObjective::Full => "full",
                ScdrObjective::AnswerOnly => "answer-only",
            }
            .into(),
        );
        m.insert("hcr.steps", self.hcr_steps.to_string());
        m.insert("hcr.from_scratch", self.hcr_from_scratch.to_string());
        m.insert("hcr.target_tau", self.hcr_target_tau.to_string());
        m.insert("align.mode", self.align.mode.to_string());
        m.insert("align.beta", self.align.beta.to_string());
        m.insert("align.steps", self.align.steps.to_string());
        m.insert("align.n_candidates", self.align.n_candidates.to_string());
        m.insert("align.n_prompts", self.align.n_prompts.to_string());
        m.insert("align.embed_dim", self.align.embed_dim.to_string());
        m.insert("align.noise", self.align.noise.to_string());
        m.insert("align.batch_size", self.align.batch_size.to_string());
        m.insert("align.eval_samples", self.align.eval_samples.to_string());
        m.insert("align.lr", self.align.optim.lr.to_string());
        m.insert("align.optimizer", opt(self.align.optim.kind).into());
        m.insert("align.scorer", self.scorer.as_str().into());
        m.insert("align.overall_weights", join(&self.overall_weights));
        m.insert("align.compare", self.align_compare.to_string());
        m.insert("align.equal_motion", self.equal_motion.to_string());
        m.insert("stages.scdr", self.stage_scdr.to_string());
        m.insert("stages.hcr", self.stage_hcr.to_string());
        m.insert("stages.align", self.stage_align.to_string());
        let mut s = String::new();
        for (k, v) in m {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// Digest of every setting that shapes a training trajectory. Step
    /// budgets, evaluation cadence and the output path are excluded so runs
    /// can be extended and re-evaluated.
    pub fn training_hash(&self) -> String {
        let mut h = Sha256::new();
        for line in self.render().lines() {
            let key = line.split(" = ").next().unwrap_or("");
            if matches!(key, "out" | "eval_every" | "hcr.target_tau")
                || key.ends_with(".steps")
                || key.starts_with("stages.")
            {
                continue;
            }
            h.update(line.as_bytes());
            h.update(b"\n");
        }
        h.finalize()[..8]
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    fn stage_grpo(&self, steps: u64) -> GrpoConfig {
        let mut g = self.grpo;
        g.optim.decay_steps = self.lr_decay.then_some(steps * g.epochs as u64);
        g
    }
}

fn parse_optimizer(s: &str) -> Option<OptimizerKind> {
    match s {
        "adamw" => Some(OptimizerKind::AdamW),
        "sgd" => Some(OptimizerKind::Sgd),
        _ => None,
    }
}

pub fn default_out_root() -> PathBuf {
    std::env::var_os(OUT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

/// Paths of every artifact under a run directory.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Layout {
            root: root.to_path_buf(),
        }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.txt")
    }

    pub fn corpus(&self) -> PathBuf {
        self.root.join("world/corpus.csv")
    }

    pub fn instances(&self) -> PathBuf {
        self.root.join("world/instances.csv")
    }

    pub fn pair_labels(&self) -> PathBuf {
        self.root.join("world/pairs.csv")
    }

    pub fn correlation(&self) -> PathBuf {
        self.root.join("world/correlation.json")
    }

    pub fn stage(&self, stage: &str, file: &str) -> PathBuf {
        self.root.join(stage).join(file)
    }

    pub fn align_mode(&self, mode: AlignMode, file: &str) -> PathBuf {
        self.root.join("align").join(mode.as_str()).join(file)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint<T> {
    pub format: u32,
    pub config_hash: String,
    pub state: T,
}

pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Input(format!("cannot serialize {}: {e}", path.display())))?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

pub fn load_json<T: DeserializeOwned>(path: &Path, what: &'static str) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Malformed {
        what,
        path: path.to_path_buf(),
        line: e.line(),
        msg: e.to_string(),
    })
}

fn load_checkpoint<T: DeserializeOwned>(path: &Path, cfg: &RunConfig) -> Result<T> {
    let ck: Checkpoint<T> = load_json(path, "checkpoint")?;
    if ck.format != CHECKPOINT_FORMAT {
        return Err(Error::Malformed {
            what: "checkpoint",
            path: path.to_path_buf(),
            line: 0,
            msg: format!("unsupported format {}", ck.format),
        });
    }
    if ck.config_hash != cfg.training_hash() {
        return Err(Error::Config(format!(
            "checkpoint {} was produced under a different configuration",
            path.display()
        )));
    }
    Ok(ck.state)
}

fn save_checkpoint<T: Serialize>(path: &Path, cfg: &RunConfig, state: T) -> Result<()> {
    save_json(
        path,
        &Checkpoint {
            format: CHECKPOINT_FORMAT,
            config_hash: cfg.training_hash(),
            state,
        },
    )
}

fn json_line<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string(value).expect("metric records serialize");
    s.push('\n');
    s
}

/// JSONL records kept in memory and flushed as a whole file.
struct Stream {
    path: PathBuf,
    text: String,
}

impl Stream {
    /// Opens a stream, keeping existing records whose `step` is below
    /// `keep_below` (resume) or none.
    fn open(path: PathBuf, keep_below: Option<u64>) -> Result<Self> {
        let mut text = String::new();
        if let (Some(limit), true) = (keep_below, path.exists()) {
            let old = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            for line in old.lines() {
                let step = serde_json::from_str::<serde_json::Value>(line)
                    .ok()
                    .and_then(|v| v.get("step").and_then(|s| s.as_u64()));
                if matches!(step, Some(s) if s < limit) {
                    text.push_str(line);
                    text.push('\n');
                }
            }
        }
        Ok(Stream { path, text })
    }

    fn push<T: Serialize>(&mut self, value: &T) {
        self.text.push_str(&json_line(value));
    }

    fn flush(&self) -> Result<()> {
        write_file(&self.path, self.text.as_bytes())
    }
}

/// Converts a JSONL stream into CSV with the given columns, one row per record.
pub fn jsonl_to_csv(stream: &str, columns: &[&str]) -> String {
    let mut out = columns.join(",");
    out.push('\n');
    for line in stream.lines().filter(|l| !l.trim().is_empty()) {
        let Ok(v) = serde_json::from_str::<serde_json::Value>(line) else {
            continue;
        };
        let row: Vec<String> = columns
            .iter()
            .map(|c| match v.get(*c) {
                Some(serde_json::Value::String(s)) => s.clone(),
                Some(x) => x.to_string(),
                None => String::new(),
            })
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

const GRPO_COLUMNS: [&str; 5] = ["step", "mean_reward", "loss", "kl", "grad_norm"];
const ALIGN_COLUMNS: [&str; 5] = [
    "step",
    "loss",
    "w_w_mean",
    "dynamic_degree",
    "overall_score_mean",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldSummary {
    pub videos: usize,
    pub instances: usize,
    pub pairs: usize,
    pub motion_static_corr: Option<f64>,
}

pub fn cmd_gen_world(cfg: &RunConfig) -> Result<WorldSummary> {
    let mut cfg = cfg.clone();
    cfg.validate()?;
    let layout = Layout::new(&cfg.out);
    write_file(&layout.config(), cfg.render().as_bytes())?;
    let corpus = generate_corpus(&cfg.world, cfg.n_prompts, cfg.videos_per_prompt)?;
    let instances = factorize(&corpus, &cfg.world);
    let pairs = make_pairs(&corpus, &cfg.world)?;
    write_corpus(&layout.corpus(), &corpus, cfg.world.n_dims)?;
    write_instances(&layout.instances(), &instances)?;
    let mut labels = String::from("video_id_a,video_id_b,label\n");
    for p in &pairs {
        let _ = writeln!(labels, "{},{},{}", p.a.video_id, p.b.video_id, p.label);
    }
    write_file(&layout.pair_labels(), labels.as_bytes())?;
    let corr = correlation_matrix(&corpus)?;
    save_json(&layout.correlation(), &corr)?;
    Ok(WorldSummary {
        videos: corpus.len(),
        instances: instances.len(),
        pairs: pairs.len(),
        motion_static_corr: corr.motion_static_mean(),
    })
}

/// Reads the corpus written by `gen-world`, split into (train, held-out).
pub fn load_split(cfg: &RunConfig) -> Result<(Vec<SyntheticVideo>, Vec<SyntheticVideo>)> {
    let path = Layout::new(&cfg.out).corpus();
    if !path.exists() {
        return Err(Error::Input(format!(
            "corpus not found at {}; run gen-world first",
            path.display()
        )));
    }
    let corpus = read_corpus(&path)?;
    if corpus
        .first()
        .is_some_and(|v| v.features.len() != cfg.world.n_dims)
    {
        return Err(Error::Config(format!(
            "corpus at {} does not have {} dimensions",
            path.display(),
            cfg.world.n_dims
        )));
    }
    Ok(corpus.into_iter().partition(|v| !is_heldout(v.prompt_id)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScdrEval {
    pub step: u64,
    pub dim_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HcrEval {
    pub step: u64,
    pub tau: f64,
    pub diff: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub steps: u64,
    pub initial: f64,
    pub last: f64,
    /// First evaluated step reaching the stage target, if any.
    pub steps_to_target: Option<u64>,
}

fn grpo_trainer(
    layout: &Layout,
    stage: &str,
    cfg: &RunConfig,
    steps: u64,
    resume: bool,
    init: impl FnOnce() -> Result<Policy>,
) -> Result<GrpoTrainer> {
    let ck = layout.stage(stage, "checkpoint.json");
    if resume && ck.exists() {
        let mut t: GrpoTrainer = load_checkpoint(&ck, cfg)?;
        t.config = cfg.stage_grpo(steps);
        Ok(t)
    } else {
        GrpoTrainer::new(init()?, cfg.stage_grpo(steps))
    }
}

pub fn heldout_instances(cfg: &RunConfig, heldout: &[SyntheticVideo]) -> Vec<DimInstance> {
    factorize(heldout, &cfg.world)
}

pub fn cmd_train_scdr(cfg: &RunConfig, resume: bool) -> Result<StageSummary> {
    let mut cfg = cfg.clone();
    cfg.validate()?;
    let layout = Layout::new(&cfg.out);
    let (train, test) = load_split(&cfg)?;
    let train = factorize(&train, &cfg.world);
    let test = heldout_instances(&cfg, &test);
    let mut trainer = grpo_trainer(&layout, "scdr", &cfg, cfg.scdr_steps, resume, || {
        Policy::with_format_prior(cfg.shape, cfg.prior_strength)
    })?;
    let objective = cfg.scdr_objective;
    let start = trainer.step;
    let mut metrics = Stream::open(layout.stage("scdr", "metrics.jsonl"), Some(start))?;
    let mut evals = Stream::open(layout.stage("scdr", "eval.jsonl"), Some(start + 1))?;
    let mut history = Vec::new();
    let mut evaluate = |t: &GrpoTrainer, evals: &mut Stream| -> Result<()> {
        let e = ScdrEval {
            step: t.step,
            dim_accuracy: scdr_accuracy(&t.policy, &test, objective)?,
        };
        evals.push(&e);
        history.push((e.step, e.dim_accuracy));
        Ok(())
    };
    if start == 0 {
        evaluate(&trainer, &mut evals)?;
    }
    let every = cfg.eval_every;
    let until = cfg.scdr_steps;
    run_scdr(
        &mut trainer,
        &train,
        objective,
        until,
        cfg.seed,
        |t, m: &StepMetrics| {
            metrics.push(m);
            if t.step % every == 0 || t.step == until {
                evaluate(t, &mut evals)?;
            }
            Ok(())
        },
    )?;
    metrics.flush()?;
    evals.flush()?;
    write_file(
        &layout.stage("scdr", "curve.csv"),
        jsonl_to_csv(&metrics.text, &GRPO_COLUMNS).as_bytes(),
    )?;
    save_checkpoint(&layout.stage("scdr", "checkpoint.json"), &cfg, &trainer)?;
    summarize_history(&evals.text, "dim_accuracy", 0.9, trainer.step)
}

fn summarize_history(evals: &str, field: &str, target: f64, steps: u64) -> Result<StageSummary> {
    let points: Vec<(u64, f64)> = evals
        .lines()
        .filter_map(|l| serde_json::from_str::<serde_json::Value>(l).ok())
        .filter_map(|v| Some((v.get("step")?.as_u64()?, v.get(field)?.as_f64()?)))
        .collect();
    let (first, last) = match (points.first(), points.last()) {
        (Some(f), Some(l)) => (f.1, l.1),
        _ => return Err(Error::Undefined("no evaluation records".into())),
    };
    Ok(StageSummary {
        steps,
        initial: first,
        last,
        steps_to_target: points.iter().find(|p| p.1 >= target).map(|p| p.0),
    })
}

pub fn heldout_pairs(cfg: &RunConfig, heldout: &[SyntheticVideo]) -> Result<Vec<PairInstance>> {
    make_pairs(heldout, &cfg.world)
}

fn load_policy(path: &Path, cfg: &RunConfig) -> Result<Policy> {
    if !path.exists() {
        return Err(Error::Input(format!(
            "checkpoint not found at {}",
            path.display()
        )));
    }
    let t: GrpoTrainer = load_checkpoint(path, cfg)?;
    Ok(t.policy)
}

pub fn cmd_train_hcr(cfg: &RunConfig, resume: bool) -> Result<StageSummary> {
    let mut cfg = cfg.clone();
    cfg.validate()?;
    let layout = Layout::new(&cfg.out);
    let (train, test) = load_split(&cfg)?;
    let train = make_pairs(&train, &cfg.world)?;
    let test = heldout_pairs(&cfg, &test)?;
    let mut trainer = grpo_trainer(&layout, "hcr", &cfg, cfg.hcr_steps, resume, || {
        let mut p = Policy::with_format_prior(cfg.shape, cfg.prior_strength)?;
        if !cfg.hcr_from_scratch {
            let ck = layout.stage("scdr", "checkpoint.json");
            if !ck.exists() {
                return Err(Error::Input(format!(
                    "single-dimension checkpoint not found at {}; train it first or set hcr.from_scratch",
                    ck.display()
                )));
            }
            p.transfer_content(&load_policy(&ck, &cfg)?)?;
        }
        Ok(p)
    })?;
    let start = trainer.step;
    let mut metrics = Stream::open(layout.stage("hcr", "metrics.jsonl"), Some(start))?;
    let mut evals = Stream::open(layout.stage("hcr", "eval.jsonl"), Some(start + 1))?;
    let evaluate = |t: &GrpoTrainer, evals: &mut Stream| -> Result<()> {
        let recs = pair_records(&t.policy, &test)?;
        evals.push(&HcrEval {
            step: t.step,
            tau: preference_accuracy(&recs, TieMode::Tau)?,
            diff: preference_accuracy(&recs, TieMode::Diff)?,
        });
        Ok(())
    };
    if start == 0 {
        evaluate(&trainer, &mut evals)?;
    }
    let every = cfg.eval_every;
    let until = cfg.hcr_steps;
    run_hcr(&mut trainer, &train, until, cfg.seed, |t, m| {
        metrics.push(m);
        if t.step % every == 0 || t.step == until {
            evaluate(t, &mut evals)?;
        }
        Ok(())
    })?;
    metrics.flush()?;
    evals.flush()?;
    write_file(
        &layout.stage("hcr", "curve.csv"),
        jsonl_to_csv(&metrics.text, &GRPO_COLUMNS).as_bytes(),
    )?;
    save_checkpoint(&layout.stage("hcr", "checkpoint.json"), &cfg, &trainer)?;
    summarize_history(&evals.text, "tau", cfg.hcr_target_tau, trainer.step)
}

fn make_scorer(cfg: &RunConfig, layout: &Layout) -> Result<Box<dyn Scorer>> {
    let inner = base_scorer(cfg, layout)?;
    Ok(if cfg.equal_motion {
        Box::new(EqualMotion(inner))
    } else {
        inner
    })
}

fn base_scorer(cfg: &RunConfig, layout: &Layout) -> Result<Box<dyn Scorer>> {
    Ok(match cfg.scorer {
        ScorerKind::Oracle => Box::new(OracleScorer {
            world: cfg.world.clone(),
        }),
        ScorerKind::Weighted => Box::new(WeightedScorer {
            weights: cfg.overall_weights.clone(),
            rating_levels: cfg.world.rating_levels,
        }),
        ScorerKind::Rm => Box::new(PolicyScorer {
            policy: load_policy(&layout.stage("hcr", "checkpoint.json"), cfg)?,
            overall_weights: cfg.overall_weights.clone(),
        }),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignOutcome {
    pub mode: AlignMode,
    pub pairs: usize,
    pub initial: AlignMetrics,
    pub last: AlignMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignReport {
    pub scorer: String,
    pub outcomes: Vec<AlignOutcome>,
}

/// Runs the configured alignment mode (or every mode when comparing)
/// against pairs built from the initial generator.
pub fn cmd_align(cfg: &RunConfig) -> Result<AlignReport> {
    let mut cfg = cfg.clone();
    cfg.validate()?;
    let layout = Layout::new(&cfg.out);
    let scorer = make_scorer(&cfg, &layout)?;
    let init = Generator::init(
        cfg.world.n_dims,
        cfg.align.embed_dim,
        cfg.align.noise,
        cfg.seed,
    )?;
    let pairs = build_pairs(&init, &cfg.world, scorer.as_ref(), &cfg.align)?;
    let modes: Vec<AlignMode> = if cfg.align_compare {
        vec![AlignMode::Sft, AlignMode::Dpo, AlignMode::Mcdpo]
    } else {
        vec![cfg.align.mode]
    };
    let mut outcomes = Vec::new();
    for mode in modes {
        let ac = AlignConfig {
            mode,
            ..cfg.align.clone()
        };
        let mut model = init.clone();
        let mut stream = Stream::open(layout.align_mode(mode, "metrics.jsonl"), None)?;
        let history = align_run(&mut model, &pairs, &cfg.world, scorer.as_ref(), &ac, |m| {
            stream.push(m);
            Ok(())
        })?;
        stream.flush()?;
        write_file(
            &layout.align_mode(mode, "curve.csv"),
            jsonl_to_csv(&stream.text, &ALIGN_COLUMNS).as_bytes(),
        )?;
        write_pairs(&layout.align_mode(mode, "pairs.csv"), &pairs)?;
        save_json(&layout.align_mode(mode, "generator.json"), &model)?;
        outcomes.push(AlignOutcome {
            mode,
            pairs: pairs.len(),
            initial: history[0],
            last: *history.last().expect("history has the initial record"),
        });
    }
    let report = AlignReport {
        scorer: cfg.scorer.as_str().into(),
        outcomes,
    };
    save_json(&layout.root.join("align/report.json"), &report)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config_hash: String,
    pub correlation: CorrelationMatrix,
    pub motion_static_corr: Option<f64>,
    /// Oracle verdicts scored against the oracle labels of the held-out pairs.
    pub oracle_tau: f64,
    pub scdr_dim_accuracy: Option<f64>,
    pub hcr_tau: Option<f64>,
    pub hcr_diff: Option<f64>,
    pub align: Vec<AlignOutcome>,
    /// Per metric stream (relative path), the summary of its numeric fields.
    pub streams: BTreeMap<String, RunReport>,
}

/// Recomputes held-out metrics from saved artifacts. Every enabled stage's
/// artifacts must exist.
pub fn cmd_eval(cfg: &RunConfig) -> Result<EvalReport> {
    let mut cfg = cfg.clone();
    cfg.validate()?;
    let layout = Layout::new(&cfg.out);
    let (_, test) = load_split(&cfg)?;
    let corpus = read_corpus(&layout.corpus())?;
    let correlation = correlation_matrix(&corpus)?;
    let pairs = heldout_pairs(&cfg, &test)?;
    let oracle: Vec<PrefRecord> = pairs
        .iter()
        .map(|p| {
            Ok(PrefRecord {
                prediction: Some(crate::world::oracle_preference(&p.a, &p.b, &cfg.world)?),
                label: p.label,
            })
        })
        .collect::<Result<_>>()?;
    let mut streams = BTreeMap::new();
    let mut read_stream = |rel: String, columns: &[&str]| -> Result<()> {
        let path = layout.root.join(&rel);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let csv = jsonl_to_csv(&text, columns);
        let name = rel.trim_end_matches(".jsonl").replace('/', "_");
        write_file(
            &layout.root.join("eval/curves").join(format!("{name}.csv")),
            csv.as_bytes(),
        )?;
        streams.insert(rel, summarize_run(&text));
        Ok(())
    };
    let mut report = EvalReport {
        config_hash: cfg.training_hash(),
        motion_static_corr: correlation.motion_static_mean(),
        correlation,
        oracle_tau: preference_accuracy(&oracle, TieMode::Tau)?,
        scdr_dim_accuracy: None,
        hcr_tau: None,
        hcr_diff: None,
        align: Vec::new(),
        streams: BTreeMap::new(),
    };
    if cfg.stage_scdr {
        let p = load_policy(&layout.stage("scdr", "checkpoint.json"), &cfg)?;
        let inst = heldout_instances(&cfg, &test);
        report.scdr_dim_accuracy = Some(scdr_accuracy(&p, &inst, cfg.scdr_objective)?);
        read_stream("scdr/metrics.jsonl".into(), &GRPO_COLUMNS)?;
    }
    if cfg.stage_hcr {
        let p = load_policy(&layout.stage("hcr", "checkpoint.json"), &cfg)?;
        let recs = pair_records(&p, &pairs)?;
        report.hcr_tau = Some(preference_accuracy(&recs, TieMode::Tau)?);
        report.hcr_diff = Some(preference_accuracy(&recs, TieMode::Diff)?);
        read_stream("hcr/metrics.jsonl".into(), &GRPO_COLUMNS)?;
    }
    if cfg.stage_align {
        let path = layout.root.join("align/report.json");
        if !path.exists() {
            return Err(Error::Input(format!(
                "alignment report not found at {}",
                path.display()
            )));
        }
        let ar: AlignReport = load_json(&path, "alignment report")?;
        for o in &ar.outcomes {
            read_stream(format!("align/{}/metrics.jsonl", o.mode), &ALIGN_COLUMNS)?;
        }
        report.align = ar.outcomes;
    }
    report.streams = streams;
    save_json(&layout.root.join("eval/report.json"), &report)?;
    Ok(report)
}

/// Every enabled stage in order, then evaluation.
pub fn cmd_run_all(cfg: &RunConfig) -> Result<EvalReport> {
    cmd_gen_world(cfg)?;
    if cfg.stage_scdr {
        cmd_train_scdr(cfg, false)?;
    }
    if cfg.stage_hcr {
        cmd_train_hcr(cfg, false)?;
    }
    if cfg.stage_align {
        cmd_align(cfg)?;
    }
    cmd_eval(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_round_trips_through_apply() {
        let mut c = RunConfig::paper();
        c.seed = 17;
        c.overall_weights = vec![0.1, 0.1, 0.2, 0.3, 0.3];
        let mut d = RunConfig::desk();
        d.apply_text(&c.render()).unwrap();
        assert_eq!(d, c);
        assert_eq!(d.training_hash(), c.training_hash());
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        let mut c = RunConfig::desk();
        assert_eq!(c.set("nope", "1").unwrap_err().kind(), "config");
        assert_eq!(c.set("align.mode", "ppo").unwrap_err().kind(), "config");
        let err = c.apply_text("seed = 1\ngrpo.clip = x\n").unwrap_err();
        assert!(err.to_string().contains("line 2"));
    }

    #[test]
    fn profiles_and_comments() {
        let mut c = RunConfig::desk();
        c.apply_text("# paper optimizer settings\nprofile = paper\nalign.beta = 7 # override\n")
            .unwrap();
        assert_eq!(c.grpo.optim.lr, 1e-6);
        assert_eq!(c.align.beta, 7.0);
        assert!(RunConfig::profile("huge").is_err());
    }

    #[test]
    fn step_budgets_do_not_change_the_training_hash() {
        let a = RunConfig::desk();
        let mut b = a.clone();
        b.scdr_steps += 10;
        b.out = PathBuf::from("/elsewhere");
        assert_eq!(a.training_hash(), b.training_hash());
        b.grpo.clip = 0.3;
        assert_ne!(a.training_hash(), b.training_hash());
    }

    #[test]
    fn csv_from_jsonl() {
        let s = "{\"step\":0,\"loss\":1.5}\n{\"step\":1}\n";
        assert_eq!(jsonl_to_csv(s, &["step", "loss"]), "step,loss\n0,1.5\n1,\n");
    }
}
