use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ranker::RankerConfig;
use crate::retriever::RetrieverConfig;
use crate::trainer::{Regime, Schedule, Task};
use crate::transform::TransformConfig;

/// Input and output locations. Relative paths in a config file resolve
/// against the file's directory, relative flag values against the working
/// directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    /// built from the corpus when absent
    pub vocab: Option<PathBuf>,
    pub hierarchy: Option<PathBuf>,
    pub termlist: Option<PathBuf>,
    pub topics: Option<PathBuf>,
    pub qrels: Option<PathBuf>,
    /// directory holding `train_ids.txt` and `test_ids.txt` from `split`
    pub split: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub threshold: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Paths {
    fn rebase(&mut self, base: &Path) {
        for slot in [
            &mut self.corpus,
            &mut self.vocab,
            &mut self.hierarchy,
            &mut self.termlist,
            &mut self.topics,
            &mut self.qrels,
            &mut self.split,
            &mut self.model,
            &mut self.threshold,
            &mut self.index,
            &mut self.out,
        ] {
            if let Some(p) = slot.as_mut().filter(|p| p.is_relative()) {
                *p = base.join(&*p);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    /// oldest share of the corpus used for training
    pub fraction: f64,
    /// share of topics, in id order, used for training
    pub topic_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            fraction: 0.8,
            topic_fraction: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    #[default]
    Ie,
    Ir,
}

/// Ablation arm; when present it replaces `schedule.weights`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegimeConfig {
    pub ssl: bool,
    pub multitask: bool,
    pub target: Target,
}

impl RegimeConfig {
    pub fn weights(&self) -> [f64; 3] {
        let target = match self.target {
            Target::Ie => Task::Ie,
            Target::Ir => Task::Ir,
        };
        Regime {
            ssl: self.ssl,
            multitask: self.multitask,
        }
        .weights(target)
    }
}

/// Everything a CLI run reads from its configuration file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// worker threads; 0 or absent means one per logical core
    pub threads: Option<usize>,
    /// when set, seeds both the schedule and the ranker initialization
    pub seed: Option<u64>,
    pub paths: Paths,
    pub split: SplitConfig,
    pub retriever: RetrieverConfig,
    pub transform: TransformConfig,
    pub ranker: RankerConfig,
    pub schedule: Schedule,
    pub regime: Option<RegimeConfig>,
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self =
            toml::from_str(&text).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
        if let Some(base) = path.parent() {
            cfg.paths.rebase(base);
        }
        Ok(cfg)
    }

    /// Applies the derived settings: the shared seed and the regime weights.
    pub fn resolve(mut self) -> Self {
        if let Some(seed) = self.seed {
            self.schedule.seed = seed;
            self.ranker.init_seed = seed;
        }
        if let Some(regime) = self.regime {
            self.schedule.weights = regime.weights();
        }
        self
    }

    /// True when extraction or masking examples are built, which needs K = M.
    pub fn invertible(&self) -> bool {
        self.schedule.weights[Task::Ssl as usize] > 0.0 || self.schedule.weights[Task::Ie as usize] > 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.split.fraction > 0.0 && self.split.fraction <= 1.0) {
            return Err(Error::Validation(format!(
                "split.fraction must lie in (0, 1], got {}",
                self.split.fraction
            )));
        }
        if !(0.0..=1.0).contains(&self.split.topic_fraction) {
            return Err(Error::Validation(format!(
                "split.topic_fraction must lie in [0, 1], got {}",
                self.split.topic_fraction
            )));
        }
        self.retriever.validate(self.invertible())?;
        self.schedule.validate()
    }

    /// Every configured input path must exist.
    pub fn check_paths(&self) -> Result<()> {
        let p = &self.paths;
        let inputs = [
            ("paths.corpus", &p.corpus),
            ("paths.vocab", &p.vocab),
            ("paths.hierarchy", &p.hierarchy),
            ("paths.termlist", &p.termlist),
            ("paths.topics", &p.topics),
            ("paths.qrels", &p.qrels),
            ("paths.split", &p.split),
            ("paths.model", &p.model),
            ("paths.threshold", &p.threshold),
            ("paths.index", &p.index),
        ];
        for (key, path) in inputs {
            if let Some(path) = path {
                if !path.exists() {
                    return Err(Error::Validation(format!("{key}: `{}` does not exist", path.display())));
                }
            }
        }
        Ok(())
    }

    /// The path under `key`, or a validation error naming the key.
    pub fn require<'a>(&self, key: &str, path: &'a Option<PathBuf>) -> Result<&'a Path> {
        path.as_deref()
            .ok_or_else(|| Error::Validation(format!("{key} is required for this command")))
    }
}
