use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

/// Predicted and gold label sets of one example.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelPrediction {
    pub predicted: BTreeSet<String>,
    pub gold: BTreeSet<String>,
}

impl LabelPrediction {
    pub fn new<P, G, S>(predicted: P, gold: G) -> Self
    where
        P: IntoIterator<Item = S>,
        G: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            predicted: predicted.into_iter().map(Into::into).collect(),
            gold: gold.into_iter().map(Into::into).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Counts {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// `2tp / (2tp + fp + fn)`; 1 when there is nothing to predict and
    /// nothing was predicted.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        1.0
    } else {
        a as f64 / b as f64
    }
}

pub fn micro_counts(preds: &[LabelPrediction]) -> Counts {
    let mut c = Counts::default();
    for p in preds {
        let tp = p.predicted.intersection(&p.gold).count();
        c.tp += tp;
        c.fp += p.predicted.len() - tp;
        c.fn_ += p.gold.len() - tp;
    }
    c
}

pub fn micro_f1(preds: &[LabelPrediction]) -> f64 {
    micro_counts(preds).f1()
}

/// Mean per-label F1 over every label seen in gold or predictions.
pub fn macro_f1(preds: &[LabelPrediction]) -> f64 {
    let mut per: BTreeMap<&str, Counts> = BTreeMap::new();
    for p in preds {
        for l in &p.predicted {
            let c = per.entry(l).or_default();
            if p.gold.contains(l) {
                c.tp += 1;
            } else {
                c.fp += 1;
            }
        }
        for l in p.gold.difference(&p.predicted) {
            per.entry(l).or_default().fn_ += 1;
        }
    }
    if per.is_empty() {
        return 1.0;
    }
    per.values().map(Counts::f1).sum::<f64>() / per.len() as f64
}

/// Mean of `|P ∩ G| / |P ∪ G|`, counting an empty union as 1.
pub fn example_accuracy(preds: &[LabelPrediction]) -> f64 {
    if preds.is_empty() {
        return 0.0;
    }
    preds
        .iter()
        .map(|p| {
            let union = p.predicted.union(&p.gold).count();
            if union == 0 {
                1.0
            } else {
                p.predicted.intersection(&p.gold).count() as f64 / union as f64
            }
        })
        .sum::<f64>()
        / preds.len() as f64
}
