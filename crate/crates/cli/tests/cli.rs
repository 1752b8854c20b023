use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn prefalign(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_prefalign"))
        .args(args)
        .current_dir(dir)
        .env_remove("PREFALIGN_OUT")
        .output()
        .expect("binary runs")
}

fn error_line(out: &Output) -> serde_json::Value {
    assert!(!out.status.success());
    let stderr = String::from_utf8(out.stderr.clone()).unwrap();
    assert_eq!(stderr.lines().count(), 1, "{stderr}");
    serde_json::from_str(stderr.trim()).expect("machine-readable error")
}

#[test]
fn gen_world_reports_sizes_as_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = prefalign(
        &[
            "gen-world",
            "--out",
            "run",
            "--seed",
            "3",
            "--set",
            "world.n_prompts=10",
        ],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["videos"], 40);
    assert!(dir.path().join("run/world/corpus.csv").exists());
    let config = fs::read_to_string(dir.path().join("run/config.txt")).unwrap();
    assert!(config.contains("seed = 3\n"));
}

#[test]
fn config_file_then_flags_are_applied_in_order() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("run.conf"),
        "# small world\nseed = 1\nworld.n_prompts = 10\nworld.videos_per_prompt = 3\n",
    )
    .unwrap();
    let out = prefalign(
        &[
            "gen-world",
            "--config",
            "run.conf",
            "--seed",
            "9",
            "--out",
            "r",
        ],
        dir.path(),
    );
    assert!(out.status.success());
    let config = fs::read_to_string(dir.path().join("r/config.txt")).unwrap();
    assert!(config.contains("seed = 9\n") && config.contains("world.videos_per_prompt = 3\n"));
}

#[test]
fn output_root_defaults_to_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_prefalign"))
        .args(["gen-world", "--set", "world.n_prompts=5"])
        .current_dir(dir.path())
        .env("PREFALIGN_OUT", "from-env")
        .status()
        .unwrap();
    assert!(status.success());
    assert!(dir.path().join("from-env/world/corpus.csv").exists());
}

#[test]
fn failures_print_one_json_line() {
    let dir = tempfile::tempdir().unwrap();
    let e = error_line(&prefalign(&["gen-world", "--set", "bogus=1"], dir.path()));
    assert_eq!(e["error"], "config");

    let e = error_line(&prefalign(&["train-scdr", "--out", "empty"], dir.path()));
    assert_eq!(e["error"], "input");
    assert!(e["message"].as_str().unwrap().contains("corpus.csv"));

    let e = error_line(&prefalign(
        &["eval", "--config", "missing.conf"],
        dir.path(),
    ));
    assert_eq!(e["error"], "io");
    assert!(e["message"].as_str().unwrap().contains("missing.conf"));

    let e = error_line(&prefalign(&["gen-world", "--profile", "huge"], dir.path()));
    assert_eq!(e["error"], "config");
}

#[test]
fn pairwise_stage_needs_a_checkpoint_unless_told_otherwise() {
    let dir = tempfile::tempdir().unwrap();
    let small = [
        "--out",
        "r",
        "--set",
        "world.n_prompts=10",
        "--set",
        "hcr.steps=2",
    ];
    assert!(
        prefalign(&[&["gen-world"][..], &small].concat(), dir.path())
            .status
            .success()
    );
    let e = error_line(&prefalign(
        &[&["train-hcr"][..], &small].concat(),
        dir.path(),
    ));
    assert!(e["message"]
        .as_str()
        .unwrap()
        .contains("scdr/checkpoint.json"));
    let ok = prefalign(
        &[&["train-hcr", "--from-scratch"][..], &small].concat(),
        dir.path(),
    );
    assert!(
        ok.status.success(),
        "{}",
        String::from_utf8_lossy(&ok.stderr)
    );
}
