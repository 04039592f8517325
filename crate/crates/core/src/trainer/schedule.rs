use std::collections::BTreeMap;
use std::time::Instant;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::TokenId;
use crate::error::{Error, Result};
use crate::ranker::{Params, RankerModel};

use super::examples::{make_ssl_example, Pipeline, Skip, Task, TaskExample};
use super::loss::compute_task_loss;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schedule {
    /// sampling weight of (ssl, ie, ir)
    pub weights: [f64; 3],
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    /// rescale the batch gradient to at most this norm
    pub clip_norm: Option<f64>,
    pub seed: u64,
    /// most phrases masked in one masking example
    pub n_mask: usize,
    pub prepend_concept: bool,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            weights: [1.0, 1.0, 1.0],
            steps: 200,
            batch_size: 16,
            lr: 0.0005,
            momentum: 0.9,
            clip_norm: Some(1.0),
            seed: 13,
            n_mask: 3,
            prepend_concept: true,
        }
    }
}

impl Schedule {
    // negated comparisons also reject NaN
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        if self.weights.iter().any(|w| !w.is_finite() || *w < 0.0) || self.weights.iter().all(|&w| w == 0.0) {
            return Err(Error::Validation(format!(
                "task weights {:?} must be non-negative and not all zero",
                self.weights
            )));
        }
        if self.batch_size == 0 || self.n_mask == 0 {
            return Err(Error::Validation("batch_size and n_mask must be >= 1".into()));
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Validation("lr must be positive and momentum in [0, 1)".into()));
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::Validation("clip_norm must be positive".into()));
        }
        Ok(())
    }
}

/// Which auxiliary signals join the target task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Regime {
    /// add the masked-term task
    pub ssl: bool,
    /// train extraction and question retrieval together
    pub multitask: bool,
}

impl Regime {
    pub const NONE: Regime = Regime {
        ssl: false,
        multitask: false,
    };
    pub const SSL: Regime = Regime {
        ssl: true,
        multitask: false,
    };
    pub const SSL_MT: Regime = Regime {
        ssl: true,
        multitask: true,
    };

    /// Uniform weights over the tasks this regime enables.
    pub fn weights(self, target: Task) -> [f64; 3] {
        let mut w = [0.0; 3];
        w[target as usize] = 1.0;
        if self.ssl {
            w[Task::Ssl as usize] = 1.0;
        }
        if self.multitask {
            w[Task::Ie as usize] = 1.0;
            w[Task::Ir as usize] = 1.0;
        }
        w
    }
}

/// Prepared training material.
pub struct TrainData<'a> {
    /// pool and term list the masking examples are drawn from
    pub ssl_pipe: Option<&'a Pipeline>,
    /// pool documents with at least one listed phrase
    pub ssl_docs: Vec<(String, Vec<TokenId>)>,
    pub ie: Vec<TaskExample>,
    pub ir: Vec<TaskExample>,
}

impl TrainData<'_> {
    fn available(&self, task: Task) -> bool {
        match task {
            Task::Ssl => self.ssl_pipe.is_some() && !self.ssl_docs.is_empty(),
            Task::Ie => !self.ie.is_empty(),
            Task::Ir => !self.ir.is_empty(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub task: Task,
    pub loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TransformStats {
    pub built: usize,
    pub with_swaps: usize,
    pub swaps: usize,
    pub ill_conditioned: usize,
    pub max_condition: f64,
}

impl TransformStats {
    pub fn record(&mut self, ex: &TaskExample) {
        if let Some(t) = &ex.transform {
            self.built += 1;
            self.swaps += t.swaps().len();
            self.with_swaps += usize::from(!t.swaps().is_empty());
            self.ill_conditioned += usize::from(t.ill_conditioned());
            self.max_condition = self.max_condition.max(t.condition());
        }
    }
}

/// Training record kept in the run manifest.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub config_hash: String,
    pub seed: u64,
    pub steps: Vec<StepRecord>,
    pub task_counts: BTreeMap<String, usize>,
    pub skips: BTreeMap<String, usize>,
    pub transforms: TransformStats,
    pub wall_clock_secs: f64,
}

impl TrainLog {
    pub fn skip(&mut self, task: Task, why: Skip) {
        *self.skips.entry(format!("{}.{}", task.name(), why.name())).or_default() += 1;
    }

    /// Loss curve of one task.
    pub fn curve(&self, task: Task) -> Vec<f64> {
        self.steps.iter().filter(|s| s.task == task).map(|s| s.loss).collect()
    }
}

/// Hex SHA-256 of the JSON form of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    let json = serde_json::to_vec(value)?;
    Ok(hex::encode(Sha256::digest(&json)))
}

fn example_seed(seed: u64, step: usize, i: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ ((step as u64) << 24) ^ i as u64
}

/// Runs `schedule.steps` updates on `model`, appending to `log`.
///
/// On divergence the log keeps every step up to the failing one.
pub fn train(model: &mut RankerModel, data: &TrainData<'_>, schedule: &Schedule, log: &mut TrainLog) -> Result<()> {
    schedule.validate()?;
    let mut weights = schedule.weights;
    for task in Task::ALL {
        if weights[task as usize] > 0.0 && !data.available(task) {
            log::warn!("task {} has no training material; its weight is dropped", task.name());
            weights[task as usize] = 0.0;
        }
    }
    let sampler = WeightedIndex::new(weights)
        .map_err(|_| Error::Validation("no enabled task has training material".into()))?;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    let mut velocity = Params::zeros(&model.cfg);
    log.seed = schedule.seed;
    let first = log.steps.len();

    for step in first..first + schedule.steps {
        let task = Task::ALL[sampler.sample(&mut rng)];
        *log.task_counts.entry(task.name().into()).or_default() += 1;
        let mut batch: Vec<std::borrow::Cow<'_, TaskExample>> = Vec::with_capacity(schedule.batch_size);
        match task {
            Task::Ie => {
                for _ in 0..schedule.batch_size {
                    batch.push(std::borrow::Cow::Borrowed(&data.ie[rng.gen_range(0..data.ie.len())]));
                }
            }
            Task::Ir => {
                for _ in 0..schedule.batch_size {
                    batch.push(std::borrow::Cow::Borrowed(&data.ir[rng.gen_range(0..data.ir.len())]));
                }
            }
            Task::Ssl => {
                let pipe = data.ssl_pipe.expect("checked by available()");
                let mut attempts = 0;
                while batch.len() < schedule.batch_size && attempts < 4 * schedule.batch_size {
                    attempts += 1;
                    let (id, toks) = &data.ssl_docs[rng.gen_range(0..data.ssl_docs.len())];
                    match make_ssl_example(pipe, id, toks, schedule.n_mask, &mut rng)? {
                        Ok(ex) => {
                            log.transforms.record(&ex);
                            batch.push(std::borrow::Cow::Owned(ex));
                        }
                        Err(why) => log.skip(task, why),
                    }
                }
            }
        }
        if batch.is_empty() {
            continue;
        }

        let results: Vec<Result<(f64, Params)>> = batch
            .par_iter()
            .enumerate()
            .map(|(i, ex)| {
                let seed = (model.cfg.dropout > 0.0).then(|| example_seed(schedule.seed, step, i));
                compute_task_loss(ex, model, seed)
            })
            .collect();
        let mut grad = Params::zeros(&model.cfg);
        let mut loss = 0.0;
        let mut used = 0usize;
        for r in results {
            match r {
                Ok((l, g)) => {
                    loss += l;
                    grad.add_scaled(&g, 1.0);
                    used += 1;
                }
                Err(Error::Singular { .. }) => log.skip(task, Skip::Singular),
                Err(e) => return Err(e),
            }
        }
        if used == 0 {
            continue;
        }
        loss /= used as f64;
        grad.scale(1.0 / used as f64);
        log.steps.push(StepRecord { step, task, loss });
        if !loss.is_finite() || !grad.is_finite() {
            log.wall_clock_secs += start.elapsed().as_secs_f64();
            return Err(Error::Diverged { step });
        }
        if let Some(c) = schedule.clip_norm {
            let n = grad.norm();
            if n > c {
                grad.scale(c / n);
            }
        }
        velocity.scale(schedule.momentum);
        velocity.add_scaled(&grad, 1.0);
        model.params.add_scaled(&velocity, -schedule.lr);
        if step % 50 == 0 {
            log::info!("step {step} task {} loss {loss:.5}", task.name());
        }
    }
    log.wall_clock_secs += start.elapsed().as_secs_f64();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regime_weights() {
        assert_eq!(Regime::NONE.weights(Task::Ie), [0.0, 1.0, 0.0]);
        assert_eq!(Regime::SSL.weights(Task::Ie), [1.0, 1.0, 0.0]);
        assert_eq!(Regime::SSL_MT.weights(Task::Ir), [1.0, 1.0, 1.0]);
        assert_eq!(Regime::NONE.weights(Task::Ir), [0.0, 0.0, 1.0]);
    }

    #[test]
    fn schedule_rejects_zero_weights() {
        let s = Schedule {
            weights: [0.0; 3],
            ..Default::default()
        };
        assert!(s.validate().is_err());
        Schedule::default().validate().unwrap();
    }

    #[test]
    fn sampler_counts_stay_near_expectation() {
        let w = WeightedIndex::new([1.0, 2.0, 3.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 6000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[w.sample(&mut rng)] += 1;
        }
        let bound = 4.0 * (n as f64).sqrt();
        for (i, c) in counts.iter().enumerate() {
            let expect = n as f64 * (i + 1) as f64 / 6.0;
            assert!((*c as f64 - expect).abs() < bound, "{i}: {c} vs {expect}");
        }
    }

    #[test]
    fn hash_is_stable() {
        let a = config_hash(&Schedule::default()).unwrap();
        assert_eq!(a, config_hash(&Schedule::default()).unwrap());
        assert_eq!(a.len(), 64);
    }
}
