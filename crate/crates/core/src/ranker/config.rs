use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RankerConfig {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub ffn: usize,
    pub vocab_size: usize,
    /// largest position id plus one; positions restart in every document
    pub max_positions: usize,
    /// total local window per layer (half on each side)
    pub windows: Vec<usize>,
    /// dilation per layer, applied on the first `dilated_heads` heads
    pub dilations: Vec<usize>,
    pub dilated_heads: usize,
    /// window over candidate indices for [CLS]-to-[CLS] attention;
    /// `None` means `min(2K, 64)`
    pub cls_window: Option<usize>,
    pub dropout: f64,
    /// width of the tanh pooler in front of the scoring probe
    pub output_size: usize,
    /// ablation: every position attends every position
    pub full_attention: bool,
    /// tokens kept per document, query included
    pub per_doc_cap: usize,
    pub init_seed: u64,
    pub init_std: f64,
}

impl Default for RankerConfig {
    fn default() -> Self {
        Self {
            layers: 4,
            hidden: 256,
            heads: 8,
            ffn: 1024,
            vocab_size: 0,
            max_positions: 130,
            windows: vec![8, 16, 32, 64],
            dilations: vec![1, 2, 3, 4],
            dilated_heads: 2,
            cls_window: None,
            dropout: 0.2,
            output_size: 256,
            full_attention: false,
            per_doc_cap: 128,
            init_seed: 7,
            init_std: 0.02,
        }
    }
}

impl RankerConfig {
    /// Small shape for tests and toy runs.
    pub fn toy(vocab_size: usize) -> Self {
        Self {
            layers: 2,
            hidden: 16,
            heads: 2,
            ffn: 32,
            vocab_size,
            max_positions: 34,
            windows: vec![4, 8],
            dilations: vec![1, 2],
            dilated_heads: 1,
            dropout: 0.0,
            output_size: 8,
            per_doc_cap: 32,
            init_std: 0.2,
            ..Self::default()
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    /// Dilation used by `head` on `layer`.
    pub fn dilation(&self, layer: usize, head: usize) -> usize {
        if head < self.dilated_heads {
            self.dilations[layer]
        } else {
            1
        }
    }

    pub fn cls_window_for(&self, k: usize) -> usize {
        self.cls_window.unwrap_or_else(|| (2 * k).min(64))
    }

    // negated comparisons also reject NaN
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(format!("ranker: {m}")));
        if self.layers == 0 || self.hidden == 0 || self.heads == 0 || self.ffn == 0 || self.output_size == 0 {
            return bad("layers, hidden, heads, ffn and output_size must be positive".into());
        }
        if !self.hidden.is_multiple_of(self.heads) {
            return bad(format!("hidden {} not divisible by heads {}", self.hidden, self.heads));
        }
        if self.vocab_size < 5 {
            return bad(format!("vocab_size {} is smaller than the special-token block", self.vocab_size));
        }
        if self.windows.len() != self.layers || self.dilations.len() != self.layers {
            return bad(format!(
                "windows ({}) and dilations ({}) need one entry per layer ({})",
                self.windows.len(),
                self.dilations.len(),
                self.layers
            ));
        }
        if let Some(w) = self.windows.iter().find(|&&w| w < 2 || w % 2 != 0) {
            return bad(format!("window {w} must be even and at least 2"));
        }
        if self.dilations.contains(&0) {
            return bad("dilations must be at least 1".into());
        }
        if self.dilated_heads > self.heads {
            return bad(format!("dilated_heads {} exceeds heads {}", self.dilated_heads, self.heads));
        }
        if let Some(w) = self.cls_window {
            if w < 2 || w % 2 != 0 {
                return bad(format!("cls_window {w} must be even and at least 2"));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.per_doc_cap == 0 || self.per_doc_cap + 2 > self.max_positions {
            return bad(format!(
                "per_doc_cap {} needs max_positions >= cap + 2 (got {})",
                self.per_doc_cap, self.max_positions
            ));
        }
        if !(self.init_std > 0.0) {
            return bad("init_std must be positive".into());
        }
        Ok(())
    }
}
