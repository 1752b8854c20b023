//! Rule-based rewards for the two reward-model training stages.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::{ParsedScdr, ResponseGrammar, Token, TokenSeq};
use crate::world::Verdict;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScdrReward {
    pub r_format: u8,
    pub r_acc: u8,
    pub r_sc: u8,
}

impl ScdrReward {
    pub fn total(&self) -> u8 {
        self.r_format + self.r_acc + self.r_sc
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HcrReward {
    pub r_hier: u8,
    pub r_dim: f64,
    pub r_com: u8,
}

impl HcrReward {
    pub fn total(&self) -> f64 {
        self.r_hier as f64 + self.r_dim + self.r_com as f64
    }
}

/// Judges whether a parsed response's reasoning supports its answer.
pub trait Critic {
    fn critique(&self, parsed: &ParsedScdr) -> u8;
}

/// Accepts a response iff the most frequent evidence rating equals the
/// answer; frequency ties resolve to the lowest rating.
#[derive(Clone, Copy, Debug, Default)]
pub struct ModeCritic;

impl Critic for ModeCritic {
    fn critique(&self, parsed: &ParsedScdr) -> u8 {
        (evidence_mode(&parsed.evidence) == Some(parsed.answer)) as u8
    }
}

pub fn evidence_mode(evidence: &[u8]) -> Option<u8> {
    let mut counts = [0usize; 256];
    for k in evidence {
        counts[*k as usize] += 1;
    }
    let best = *counts.iter().max()?;
    if best == 0 {
        return None;
    }
    counts.iter().position(|c| *c == best).map(|k| k as u8)
}

pub fn accuracy_score(parsed: &ParsedScdr, label: u8) -> u8 {
    (parsed.answer == label) as u8
}

pub fn self_critic(parsed: &ParsedScdr) -> u8 {
    ModeCritic.critique(parsed)
}

/// Single-dimension reward with format gating: an unparseable response
/// earns nothing.
pub fn scdr_reward_with(
    grammar: &ResponseGrammar,
    critic: &dyn Critic,
    seq: &TokenSeq,
    label: u8,
) -> ScdrReward {
    match grammar.parse_scdr(seq) {
        Ok(p) => ScdrReward {
            r_format: 1,
            r_acc: accuracy_score(&p, label),
            r_sc: critic.critique(&p),
        },
        Err(_) => ScdrReward::default(),
    }
}

pub fn scdr_reward(grammar: &ResponseGrammar, seq: &TokenSeq, label: u8) -> ScdrReward {
    scdr_reward_with(grammar, &ModeCritic, seq, label)
}

/// 1 iff a definite verdict matches the ground truth. A tie verdict never
/// scores, so tie-labelled pairs cannot be won.
pub fn comparison_score(y_star: Verdict, y_gt: Verdict) -> u8 {
    (y_star != Verdict::Tie && y_star == y_gt) as u8
}

/// Verdict closing a response, if its last token is one.
pub fn final_verdict(seq: &TokenSeq) -> Option<Verdict> {
    match seq.tokens().last() {
        Some(Token::Prefer(v)) => Some(*v),
        _ => None,
    }
}

/// Pair reward: the scaffold score is the minimum over both responses and
/// the dimension score their mean, rounded once from the block counts.
/// A missing verdict earns no comparison credit.
pub fn hcr_reward(
    grammar: &ResponseGrammar,
    seq_a: &TokenSeq,
    seq_b: &TokenSeq,
    y_star: Option<Verdict>,
    y_gt: Verdict,
) -> HcrReward {
    HcrReward {
        r_hier: grammar
            .hier_format_score(seq_a)
            .min(grammar.hier_format_score(seq_b)),
        r_dim: (valid_blocks(grammar, seq_a) + valid_blocks(grammar, seq_b)) as f64
            / (2 * grammar.n_dims) as f64,
        r_com: y_star.map_or(0, |v| comparison_score(v, y_gt)),
    }
}

fn valid_blocks(grammar: &ResponseGrammar, seq: &TokenSeq) -> usize {
    grammar
        .dim_block_validity(seq)
        .iter()
        .filter(|v| **v)
        .count()
}

/// One hand-labelled case from a rubric fixture file.
#[derive(Clone, Debug, PartialEq)]
pub enum Fixture {
    Scdr {
        seq: TokenSeq,
        label: u8,
        expected: ScdrReward,
    },
    Hcr {
        seq_a: TokenSeq,
        seq_b: TokenSeq,
        y_gt: Verdict,
        expected: HcrReward,
    },
}

/// Parses one fixture line; blank lines and `#` comments yield `None`.
///
/// Formats (fields separated by `|`):
/// `scdr | <tokens> | <label> | <r_format> <r_acc> <r_sc>` and
/// `hcr | <tokens a> | <tokens b> | <A|B|TIE> | <r_hier> <r_dim> <r_com>`.
/// The predicted verdict of a pair is the final token of response b.
pub fn parse_fixture_line(line: &str) -> Result<Option<Fixture>> {
    let line = line.trim();
    if line.is_empty() || line.starts_with('#') {
        return Ok(None);
    }
    let fields: Vec<&str> = line.split('|').map(str::trim).collect();
    let bad = |msg: &str| Error::Input(format!("fixture `{line}`: {msg}"));
    let nums = |s: &str| -> Result<Vec<f64>> {
        s.split_whitespace()
            .map(|x| x.parse::<f64>().map_err(|_| bad("expected numbers")))
            .collect()
    };
    match fields.as_slice() {
        ["scdr", seq, label, exp] => {
            let e = nums(exp)?;
            if e.len() != 3 {
                return Err(bad("expected three reward components"));
            }
            Ok(Some(Fixture::Scdr {
                seq: seq.parse()?,
                label: label.parse().map_err(|_| bad("bad label"))?,
                expected: ScdrReward {
                    r_format: e[0] as u8,
                    r_acc: e[1] as u8,
                    r_sc: e[2] as u8,
                },
            }))
        }
        ["hcr", a, b, gt, exp] => {
            let e = nums(exp)?;
            if e.len() != 3 {
                return Err(bad("expected three reward components"));
            }
            Ok(Some(Fixture::Hcr {
                seq_a: a.parse()?,
                seq_b: b.parse()?,
                y_gt: Verdict::parse(gt).ok_or_else(|| bad("bad verdict"))?,
                expected: HcrReward {
                    r_hier: e[0] as u8,
                    r_dim: e[1],
                    r_com: e[2] as u8,
                },
            }))
        }
        _ => Err(bad("unrecognized layout")),
    }
}
