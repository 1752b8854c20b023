mod common;

use prefalign_core::format::ResponseGrammar;
use prefalign_core::rubric::{Fixture, HcrReward};

#[test]
fn every_fixture_reproduces_its_rewards() {
    let grammar = ResponseGrammar::default();
    let fixtures = common::load_rubric_fixtures();
    assert!(fixtures.len() >= 30, "only {} fixtures", fixtures.len());
    let failures: Vec<String> = fixtures
        .iter()
        .filter_map(|(line, f)| {
            common::check_fixture(&grammar, f)
                .err()
                .map(|e| format!("line {line}: {e}"))
        })
        .collect();
    assert!(failures.is_empty(), "{}", failures.join("\n"));
}

#[test]
fn corpus_covers_gating_and_partial_credit() {
    let fixtures = common::load_rubric_fixtures();
    let gated = fixtures
        .iter()
        .any(|(_, f)| matches!(f, Fixture::Scdr { expected, .. } if expected.r_format == 0));
    let critic_only_fails = fixtures.iter().any(|(_, f)| {
        matches!(f, Fixture::Scdr { expected, .. } if expected.r_format == 1 && expected.r_sc == 0)
    });
    let three_of_five = fixtures.iter().any(|(_, f)| {
        matches!(f, Fixture::Hcr { expected: HcrReward { r_dim, .. }, .. } if *r_dim == 0.6)
    });
    let broken_scaffold = fixtures.iter().any(|(_, f)| {
        matches!(f, Fixture::Hcr { expected, .. } if expected.r_hier == 0 && expected.r_dim > 0.0)
    });
    assert!(gated && critic_only_fails && three_of_five && broken_scaffold);
}

#[test]
fn malformed_fixture_lines_are_rejected() {
    use prefalign_core::rubric::parse_fixture_line;
    assert!(parse_fixture_line("scdr | <think> | 1").is_err());
    assert!(parse_fixture_line("scdr | NOPE | 1 | 0 0 0").is_err());
    assert!(parse_fixture_line("hcr | PREFER_A | PREFER_A | MAYBE | 0 0 1").is_err());
    assert_eq!(parse_fixture_line("  # note").unwrap(), None);
}
