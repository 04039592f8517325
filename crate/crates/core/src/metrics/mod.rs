//! Flat and hierarchical multi-label measures and ranked-retrieval measures.

mod flat;
mod lca;
mod ranking;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use flat::{example_accuracy, macro_f1, micro_counts, micro_f1, Counts, LabelPrediction};
pub use lca::{lca_counts, lca_f1};
pub use ranking::{
    average_precision, bpref, mean_average_precision, mean_bpref, mean_ndcg_at, mean_precision_at, ndcg_at,
    precision_at, RankedRun,
};

/// Metric bundle keyed by `name` or `name@cutoff`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metrics: BTreeMap<String, f64>,
}

impl EvalReport {
    pub fn set(&mut self, name: impl Into<String>, value: f64) {
        self.metrics.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let s = serde_json::to_string_pretty(self)?;
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&s)?)
    }
}
