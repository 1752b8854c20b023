use std::fs;
use std::path::Path;

use prefalign_core::align::AlignMode;
use prefalign_core::pipeline::{
    cmd_align, cmd_eval, cmd_gen_world, cmd_train_hcr, cmd_train_scdr, Layout, RunConfig,
    ScorerKind,
};

fn quick(out: &Path) -> RunConfig {
    let mut c = RunConfig::desk();
    c.out = out.to_path_buf();
    c.n_prompts = 50;
    c.scdr_steps = 20;
    c.hcr_steps = 10;
    c.eval_every = 10;
    c.align.steps = 30;
    c.align.n_prompts = 40;
    c
}

fn read(path: impl AsRef<Path>) -> String {
    fs::read_to_string(path.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()))
}

#[test]
fn gen_world_writes_requested_sizes_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick(dir.path());
    let s = cmd_gen_world(&cfg).unwrap();
    let layout = Layout::new(dir.path());
    let corpus = read(layout.corpus());
    let instances = read(layout.instances());
    assert_eq!(corpus.lines().count(), 1 + 50 * 4);
    assert_eq!(instances.lines().count(), 1 + 50 * 4 * 5);
    assert_eq!(read(layout.pair_labels()).lines().count(), 1 + 50 * 6);
    assert_eq!((s.videos, s.instances, s.pairs), (200, 1000, 300));
    cmd_gen_world(&cfg).unwrap();
    assert_eq!(read(layout.corpus()), corpus);
    assert_eq!(read(layout.instances()), instances);
}

#[test]
fn stages_require_their_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick(dir.path());
    let err = cmd_train_scdr(&cfg, false).unwrap_err();
    assert_eq!(err.kind(), "input");
    assert!(err.to_string().contains("corpus.csv"), "{err}");

    cmd_gen_world(&cfg).unwrap();
    let err = cmd_train_hcr(&cfg, false).unwrap_err();
    assert!(err.to_string().contains("scdr/checkpoint.json"), "{err}");

    let mut rm = cfg.clone();
    rm.scorer = ScorerKind::Rm;
    assert!(cmd_align(&rm)
        .unwrap_err()
        .to_string()
        .contains("hcr/checkpoint.json"));

    let err = cmd_eval(&cfg).unwrap_err();
    assert!(err.to_string().contains("scdr/checkpoint.json"), "{err}");
}

#[test]
fn untrained_rater_is_at_chance() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quick(dir.path());
    cfg.n_prompts = 200;
    cfg.scdr_steps = 0;
    cmd_gen_world(&cfg).unwrap();
    let s = cmd_train_scdr(&cfg, false).unwrap();
    assert!((s.last - 0.2).abs() < 0.1, "{}", s.last);
}

#[test]
fn resumed_training_replays_the_same_metrics() {
    let straight = tempfile::tempdir().unwrap();
    let cfg = quick(straight.path());
    cmd_gen_world(&cfg).unwrap();
    cmd_train_scdr(&cfg, false).unwrap();

    let split = tempfile::tempdir().unwrap();
    let mut half = quick(split.path());
    half.scdr_steps = 10;
    cmd_gen_world(&half).unwrap();
    cmd_train_scdr(&half, false).unwrap();
    let mut rest = half.clone();
    rest.scdr_steps = 20;
    cmd_train_scdr(&rest, true).unwrap();

    let (a, b) = (Layout::new(straight.path()), Layout::new(split.path()));
    for file in [
        "metrics.jsonl",
        "eval.jsonl",
        "checkpoint.json",
        "curve.csv",
    ] {
        assert_eq!(
            read(a.stage("scdr", file)),
            read(b.stage("scdr", file)),
            "{file} differs"
        );
    }
    assert_eq!(read(a.stage("scdr", "metrics.jsonl")).lines().count(), 20);
}

#[test]
fn resume_rejects_a_changed_configuration() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick(dir.path());
    cmd_gen_world(&cfg).unwrap();
    cmd_train_scdr(&cfg, false).unwrap();
    let mut other = cfg.clone();
    other.grpo.clip = 0.3;
    assert_eq!(cmd_train_scdr(&other, true).unwrap_err().kind(), "config");
}

#[test]
fn equal_motion_scores_make_the_weighted_loss_plain() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quick(dir.path());
    cfg.equal_motion = true;
    let report = cmd_align(&cfg).unwrap();
    let layout = Layout::new(dir.path());
    assert_eq!(
        read(layout.align_mode(AlignMode::Dpo, "metrics.jsonl")),
        read(layout.align_mode(AlignMode::Mcdpo, "metrics.jsonl"))
    );
    assert_eq!(report.outcomes.len(), 3);
}

#[test]
fn single_mode_alignment_writes_only_that_mode() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quick(dir.path());
    cfg.align_compare = false;
    cfg.align.mode = AlignMode::Sft;
    let report = cmd_align(&cfg).unwrap();
    assert_eq!(report.outcomes.len(), 1);
    let layout = Layout::new(dir.path());
    assert!(layout.align_mode(AlignMode::Sft, "generator.json").exists());
    assert!(!layout.align_mode(AlignMode::Dpo, "metrics.jsonl").exists());
}

#[test]
fn evaluation_is_consistent_with_its_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick(dir.path());
    cmd_gen_world(&cfg).unwrap();
    cmd_train_scdr(&cfg, false).unwrap();
    cmd_train_hcr(&cfg, false).unwrap();
    cmd_align(&cfg).unwrap();
    let report = cmd_eval(&cfg).unwrap();
    assert_eq!(report.oracle_tau, 1.0);
    assert!(report.scdr_dim_accuracy.is_some() && report.hcr_tau.is_some());
    assert_eq!(report.align.len(), 3);

    let layout = Layout::new(dir.path());
    let first = read(layout.root.join("eval/report.json"));
    cmd_eval(&cfg).unwrap();
    assert_eq!(read(layout.root.join("eval/report.json")), first);

    for (stream, csv) in [
        ("scdr/metrics.jsonl", "eval/curves/scdr_metrics.csv"),
        ("hcr/metrics.jsonl", "eval/curves/hcr_metrics.csv"),
        (
            "align/dpo/metrics.jsonl",
            "eval/curves/align_dpo_metrics.csv",
        ),
        (
            "align/mcdpo/metrics.jsonl",
            "eval/curves/align_mcdpo_metrics.csv",
        ),
    ] {
        let events = read(layout.root.join(stream)).lines().count();
        assert_eq!(
            read(layout.root.join(csv)).lines().count(),
            events + 1,
            "{csv}"
        );
        assert_eq!(report.streams[stream].lines, events);
    }
}

#[test]
fn hcr_from_scratch_needs_no_first_stage() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quick(dir.path());
    cfg.hcr_from_scratch = true;
    cmd_gen_world(&cfg).unwrap();
    let s = cmd_train_hcr(&cfg, false).unwrap();
    assert_eq!(s.steps, 10);
    let events = read(Layout::new(dir.path()).stage("hcr", "eval.jsonl"));
    assert_eq!(events.lines().count(), 2);
}
