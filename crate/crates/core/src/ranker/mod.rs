//! Transformer ranker over a packed query plus candidate documents, with
//! banded, dilated and global attention and hand-written gradients.

mod config;
mod mask;
mod model;
mod pack;
mod params;

use std::path::Path;

pub use config::RankerConfig;
pub use mask::{allowed, build_attention_mask, AttentionPattern, PatternSet};
pub use model::{backward, forward, logistic, AttentionMode, Forward};
pub use pack::{pack_input, PackedInput, Role, Span};
pub use params::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, LayerParams, Params};

use crate::error::{Error, Result};

/// Smallest probability fed to a logarithm.
const PROB_FLOOR: f64 = 1e-12;

/// Mean binary cross-entropy of logits `z` against targets in `[0, 1]`,
/// with its gradient with respect to `z`.
pub fn bce_with_logits(z: &[f64], targets: &[f64]) -> Result<(f64, Vec<f64>)> {
    if z.len() != targets.len() {
        return Err(Error::LengthMismatch {
            expected: z.len(),
            actual: targets.len(),
        });
    }
    if let Some(t) = targets.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(Error::Validation(format!("target {t} outside [0, 1]")));
    }
    let n = z.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(z.len());
    for (&zi, &t) in z.iter().zip(targets) {
        let p = logistic(zi);
        // log(1 + e^-|z|) keeps both branches finite
        let softplus = (-zi.abs()).exp().ln_1p();
        let log_p = -(softplus + (-zi).max(0.0));
        let log_q = -(softplus + zi.max(0.0));
        loss -= t * log_p.max(PROB_FLOOR.ln()) + (1.0 - t) * log_q.max(PROB_FLOOR.ln());
        grad.push((p - t) / n);
    }
    Ok((loss / n, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankerModel {
    pub cfg: RankerConfig,
    pub params: Params,
}

impl RankerModel {
    pub fn new(cfg: RankerConfig) -> Result<Self> {
        cfg.validate()?;
        let params = Params::init(&cfg);
        Ok(Self { cfg, params })
    }

    pub fn pack(&self, query: &[u32], candidates: &[impl AsRef<[u32]>]) -> Result<PackedInput> {
        pack_input(query, candidates, self.cfg.per_doc_cap)
    }

    pub fn forward(&self, packed: &PackedInput, mode: AttentionMode, dropout_seed: Option<u64>) -> Result<Forward> {
        forward(&self.params, &self.cfg, packed, mode, dropout_seed)
    }

    /// Candidate likelihoods, no dropout.
    pub fn score(&self, packed: &PackedInput) -> Result<Vec<f64>> {
        Ok(self.forward(packed, AttentionMode::Sparse, None)?.scores)
    }

    pub fn backward(&self, fwd: &Forward, dlogits: &[f64]) -> Result<Params> {
        backward(&self.params, &self.cfg, fwd, dlogits)
    }

    /// Mean BCE between candidate scores and `targets`, with exact gradients.
    pub fn loss_and_gradients(
        &self,
        packed: &PackedInput,
        targets: &[f64],
        dropout_seed: Option<u64>,
    ) -> Result<(f64, Params)> {
        if targets.len() != packed.k() {
            return Err(Error::LengthMismatch {
                expected: packed.k(),
                actual: targets.len(),
            });
        }
        let fwd = self.forward(packed, AttentionMode::Sparse, dropout_seed)?;
        let (loss, dz) = bce_with_logits(&fwd.logits, targets)?;
        Ok((loss, self.backward(&fwd, &dz)?))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_checkpoint(path, &self.cfg, &self.params)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (cfg, params) = load_checkpoint(path)?;
        Ok(Self { cfg, params })
    }
}
