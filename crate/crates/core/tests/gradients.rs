mod common;

use prefalign_core::align::AlignMode;

#[test]
fn grpo_gradient_matches_central_differences() {
    let mut checked = 0;
    let mut clipped = 0;
    let mut seed = 0;
    while checked < 120 {
        seed += 1;
        let inst = common::grpo_instance(seed);
        // A ratio on a clip boundary makes the objective non-differentiable.
        if common::clip_margin(&inst) < 1e-4 {
            continue;
        }
        let r = common::grpo_fd(&inst);
        assert!(
            r.rel_err < 1e-4,
            "seed {seed}: relative error {}",
            r.rel_err
        );
        checked += 1;
        clipped += (r.clip_fraction > 0.0) as usize;
    }
    assert!(
        clipped >= 20,
        "only {clipped} instances exercised the clipped branch"
    );
}

#[test]
fn pair_loss_gradient_matches_central_differences() {
    for seed in 0..150u64 {
        let mode = [AlignMode::Dpo, AlignMode::Mcdpo, AlignMode::Sft][seed as usize % 3];
        let inst = common::pair_instance(seed, mode);
        let err = common::pair_fd(&inst);
        assert!(err < 1e-4, "seed {seed} ({mode}): relative error {err}");
    }
}
