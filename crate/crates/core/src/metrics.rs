//! Preference-accuracy protocols and run summaries.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::world::Verdict;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TieMode {
    /// Every record counts; a tie label is matched only by a tie prediction.
    Tau,
    /// Tie-labelled records are dropped; tie predictions on the rest are wrong.
    Diff,
}

/// A model verdict against the ground truth. `prediction` is `None` when
/// the model produced no verdict; such records always count as wrong.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrefRecord {
    pub prediction: Option<Verdict>,
    pub label: Verdict,
}

pub fn preference_accuracy(records: &[PrefRecord], mode: TieMode) -> Result<f64> {
    let eligible: Vec<&PrefRecord> = match mode {
        TieMode::Tau => records.iter().collect(),
        TieMode::Diff => records.iter().filter(|r| r.label != Verdict::Tie).collect(),
    };
    if eligible.is_empty() {
        return Err(Error::Undefined(match mode {
            TieMode::Tau => "preference accuracy of an empty record set".into(),
            TieMode::Diff => "diff accuracy needs at least one non-tie label".into(),
        }));
    }
    let correct = eligible
        .iter()
        .filter(|r| r.prediction == Some(r.label))
        .count();
    Ok(correct as f64 / eligible.len() as f64)
}

/// Exact-match rate of ordinal predictions (0 marks a missing prediction).
pub fn dim_accuracy(predictions: &[u8], labels: &[u8]) -> Result<f64> {
    if predictions.len() != labels.len() || labels.is_empty() {
        return Err(Error::Input(format!(
            "dim_accuracy needs equal non-empty lists, got {} and {}",
            predictions.len(),
            labels.len()
        )));
    }
    let hits = predictions
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldSummary {
    pub count: usize,
    pub first: f64,
    pub last: f64,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub lines: usize,
    /// `(line number, reason)` of every skipped line, 1-based.
    pub malformed: Vec<(usize, String)>,
    /// Per numeric field, in key order.
    pub fields: BTreeMap<String, FieldSummary>,
}

/// Aggregates a JSONL metric stream: one summary per numeric field.
/// Malformed lines are recorded and skipped; blank lines are ignored.
pub fn summarize_run(stream: &str) -> RunReport {
    let mut report = RunReport::default();
    let mut sums: BTreeMap<String, f64> = BTreeMap::new();
    for (i, line) in stream.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = match serde_json::from_str(line) {
            Ok(v) => v,
            Err(e) => {
                report.malformed.push((i + 1, e.to_string()));
                continue;
            }
        };
        let Some(obj) = value.as_object() else {
            report.malformed.push((i + 1, "not a JSON object".into()));
            continue;
        };
        report.lines += 1;
        for (key, v) in obj {
            let Some(x) = v.as_f64() else { continue };
            *sums.entry(key.clone()).or_default() += x;
            report
                .fields
                .entry(key.clone())
                .and_modify(|s| {
                    s.count += 1;
                    s.last = x;
                    s.min = s.min.min(x);
                    s.max = s.max.max(x);
                })
                .or_insert(FieldSummary {
                    count: 1,
                    first: x,
                    last: x,
                    mean: x,
                    min: x,
                    max: x,
                });
        }
    }
    for (key, s) in report.fields.iter_mut() {
        s.mean = sums[key] / s.count as f64;
    }
    report
}
