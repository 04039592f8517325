use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{micro_f1, LabelPrediction};

/// Cutoff on term scores; a term is emitted when `score >= theta + offset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPolicy {
    pub theta: f64,
    /// micro-F1 reached on the data the threshold was fit to
    pub micro_f1: f64,
    #[serde(default)]
    pub offsets: BTreeMap<String, f64>,
}

impl ThresholdPolicy {
    pub fn fixed(theta: f64) -> Self {
        Self {
            theta,
            micro_f1: f64::NAN,
            offsets: BTreeMap::new(),
        }
    }

    pub fn cutoff(&self, label: &str) -> f64 {
        self.theta + self.offsets.get(label).copied().unwrap_or(0.0)
    }

    pub fn predict<'a>(&self, scores: &'a [(String, f64)]) -> BTreeSet<&'a str> {
        scores
            .iter()
            .filter(|(l, s)| *s >= self.cutoff(l))
            .map(|(l, _)| l.as_str())
            .collect()
    }

    fn evaluate(&self, scored: &[Vec<(String, f64)>], gold: &[BTreeSet<String>]) -> f64 {
        let preds: Vec<LabelPrediction> = scored
            .iter()
            .zip(gold)
            .map(|(s, g)| LabelPrediction::new(self.predict(s), g.iter().map(String::as_str)))
            .collect();
        micro_f1(&preds)
    }
}

fn check(scored: &[Vec<(String, f64)>], gold: &[BTreeSet<String>]) -> Result<usize> {
    if scored.len() != gold.len() {
        return Err(Error::LengthMismatch {
            expected: scored.len(),
            actual: gold.len(),
        });
    }
    let total: usize = gold.iter().map(BTreeSet::len).sum();
    if total == 0 {
        return Err(Error::Validation("threshold optimization needs at least one gold label".into()));
    }
    if scored.iter().flatten().any(|(_, s)| !s.is_finite()) {
        return Err(Error::Validation("non-finite term score".into()));
    }
    Ok(total)
}

/// Single global threshold maximizing corpus micro-F1.
///
/// Candidates are every distinct observed score plus `+inf`; ties go to the
/// largest threshold.
pub fn optimize_threshold(scored: &[Vec<(String, f64)>], gold: &[BTreeSet<String>]) -> Result<ThresholdPolicy> {
    let total_gold = check(scored, gold)?;
    let mut items: Vec<(f64, bool)> = scored
        .iter()
        .zip(gold)
        .flat_map(|(s, g)| s.iter().map(move |(l, v)| (*v, g.contains(l))))
        .collect();
    items.sort_by(|a, b| b.0.total_cmp(&a.0));

    let f1 = |tp: usize, fp: usize| 2.0 * tp as f64 / (tp + fp + total_gold) as f64;
    let (mut best_theta, mut best) = (f64::INFINITY, 0.0);
    let (mut tp, mut fp) = (0, 0);
    let mut i = 0;
    while i < items.len() {
        let theta = items[i].0;
        while i < items.len() && items[i].0 == theta {
            if items[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let f = f1(tp, fp);
        if f > best {
            best = f;
            best_theta = theta;
        }
    }
    let mut policy = ThresholdPolicy::fixed(best_theta);
    policy.micro_f1 = policy.evaluate(scored, gold);
    Ok(policy)
}

/// Starts from the global optimum and adjusts one label's cutoff at a time,
/// keeping a change only when corpus micro-F1 strictly improves.
pub fn optimize_per_label(scored: &[Vec<(String, f64)>], gold: &[BTreeSet<String>]) -> Result<ThresholdPolicy> {
    let mut policy = optimize_threshold(scored, gold)?;
    let mut by_label: BTreeMap<&str, BTreeSet<u64>> = BTreeMap::new();
    for (l, s) in scored.iter().flatten() {
        by_label.entry(l.as_str()).or_default().insert(s.to_bits());
    }
    for (label, values) in by_label {
        let mut best = policy.micro_f1;
        let mut best_offset = policy.offsets.get(label).copied().unwrap_or(0.0);
        for cut in values.into_iter().map(f64::from_bits).chain([f64::INFINITY]) {
            let offset = cut - policy.theta;
            policy.offsets.insert(label.to_string(), offset);
            let f = policy.evaluate(scored, gold);
            if f > best {
                best = f;
                best_offset = offset;
            }
        }
        policy.offsets.insert(label.to_string(), best_offset);
        policy.micro_f1 = best;
    }
    policy.offsets.retain(|_, v| *v != 0.0);
    Ok(policy)
}
