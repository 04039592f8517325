use std::collections::HashMap;

use super::config::RankerConfig;
use super::pack::{PackedInput, Role};

/// Allowed targets of every position, row-compressed. Targets are sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionPattern {
    pub offsets: Vec<usize>,
    pub targets: Vec<u32>,
}

impl AttentionPattern {
    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, p: usize) -> &[u32] {
        &self.targets[self.offsets[p]..self.offsets[p + 1]]
    }

    pub fn nnz(&self) -> usize {
        self.targets.len()
    }

    /// Dense boolean view, row-major.
    pub fn to_dense(&self) -> Vec<bool> {
        let n = self.len();
        let mut m = vec![false; n * n];
        for p in 0..n {
            for &q in self.row(p) {
                m[p * n + q as usize] = true;
            }
        }
        m
    }
}

fn in_band(delta: isize, window: usize, d: usize) -> bool {
    delta.unsigned_abs() <= window / 2 * d && delta.rem_euclid(d as isize) == 0
}

/// Whether position `p` may attend position `q` on (`layer`, `head`).
///
/// [CLS]_i counts as position 0 of candidate `i` for the local window.
pub fn allowed(packed: &PackedInput, cfg: &RankerConfig, layer: usize, head: usize, p: usize, q: usize) -> bool {
    if p == q || cfg.full_attention {
        return true;
    }
    let d = cfg.dilation(layer, head);
    let (rp, rq) = (packed.roles[p], packed.roles[q]);
    let doc = |r: Role| match r {
        Role::Cls(i) | Role::Cand(i) => Some(i),
        _ => None,
    };
    match (rp, rq) {
        (Role::Query, _) => true,
        (Role::Cls(_) | Role::Cand(_), Role::Query) => true,
        (Role::Cls(i), Role::Cls(j)) if i != j => {
            in_band(i as isize - j as isize, cfg.cls_window_for(packed.k()), d)
        }
        _ => match (doc(rp), doc(rq)) {
            (Some(i), Some(j)) if i == j => in_band(
                packed.positions[p] as isize - packed.positions[q] as isize,
                cfg.windows[layer],
                d,
            ),
            _ => false,
        },
    }
}

/// Enumerates the pattern directly from the layout, without the predicate.
pub fn build_attention_mask(packed: &PackedInput, cfg: &RankerConfig, layer: usize, head: usize) -> AttentionPattern {
    let n = packed.len();
    let mut offsets = Vec::with_capacity(n + 1);
    let mut targets: Vec<u32> = Vec::new();
    offsets.push(0);
    if cfg.full_attention {
        for _ in 0..n {
            targets.extend(0..n as u32);
            offsets.push(targets.len());
        }
        return AttentionPattern { offsets, targets };
    }
    let d = cfg.dilation(layer, head);
    let reach = cfg.windows[layer] / 2 * d;
    let cls_reach = cfg.cls_window_for(packed.k()) / 2 * d;
    let query: Vec<u32> = (0..packed.query_len as u32).collect();
    let mut row: Vec<u32> = Vec::new();
    for p in 0..n {
        row.clear();
        match packed.roles[p] {
            Role::Query => row.extend(0..n as u32),
            Role::Sep => row.push(p as u32),
            Role::Cls(i) | Role::Cand(i) => {
                row.extend_from_slice(&query);
                let span = packed.spans[i];
                // in-document band, [CLS] at offset 0
                let me = p - span.cls;
                let lo = me.saturating_sub(reach);
                let hi = (me + reach).min(span.end - 1 - span.cls);
                let mut o = lo + (me - lo) % d;
                while o <= hi {
                    row.push((span.cls + o) as u32);
                    o += d;
                }
                if matches!(packed.roles[p], Role::Cls(_)) {
                    let lo = i.saturating_sub(cls_reach);
                    let hi = (i + cls_reach).min(packed.k() - 1);
                    let mut j = lo + (i - lo) % d;
                    while j <= hi {
                        if j != i {
                            row.push(packed.spans[j].cls as u32);
                        }
                        j += d;
                    }
                }
                row.sort_unstable();
                row.dedup();
            }
        }
        targets.extend_from_slice(&row);
        offsets.push(targets.len());
    }
    AttentionPattern { offsets, targets }
}

/// Patterns for every (layer, head), shared between heads with equal
/// window and dilation.
#[derive(Debug, Clone)]
pub struct PatternSet {
    patterns: Vec<AttentionPattern>,
    index: Vec<Vec<usize>>,
}

impl PatternSet {
    pub fn build(packed: &PackedInput, cfg: &RankerConfig) -> Self {
        let mut seen: HashMap<(usize, usize), usize> = HashMap::new();
        let mut patterns = Vec::new();
        let mut index = vec![vec![0; cfg.heads]; cfg.layers];
        for (l, row) in index.iter_mut().enumerate() {
            for (h, slot) in row.iter_mut().enumerate() {
                let key = if cfg.full_attention {
                    (0, 0)
                } else {
                    (cfg.windows[l], cfg.dilation(l, h))
                };
                *slot = *seen.entry(key).or_insert_with(|| {
                    patterns.push(build_attention_mask(packed, cfg, l, h));
                    patterns.len() - 1
                });
            }
        }
        Self { patterns, index }
    }

    pub fn get(&self, layer: usize, head: usize) -> &AttentionPattern {
        &self.patterns[self.index[layer][head]]
    }
}
