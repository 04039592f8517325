//! Attention attributions: highlight maps, pair timelines and reports.

mod report;
mod timeline;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::corpus::TokenId;
use crate::error::{Error, Result};
use crate::ranker::{Forward, PackedInput, Role};

pub use report::{render_report, CandidateSnippet, HighlightToken, Report};
pub use timeline::{build_timeline, timeline_from_attention, PairSeries, SampleAttention, TimelineSeries};

/// Per-token salience of one decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionMap {
    pub query_tokens: Vec<TokenId>,
    /// query token against the other query tokens
    pub local: Vec<f64>,
    pub candidate_tokens: Vec<Vec<TokenId>>,
    /// candidate token against the query
    pub global: Vec<Vec<f64>>,
    pub local_levels: Vec<u8>,
    pub global_levels: Vec<Vec<u8>>,
}

/// Mean of `(A[p, q] + A[q, p]) / 2` over `q` in `others`.
fn exchange(a: &Array2<f64>, p: usize, others: &[usize]) -> f64 {
    if others.is_empty() {
        return 0.0;
    }
    others.iter().map(|&q| a[[p, q]] + a[[q, p]]).sum::<f64>() / (2 * others.len()) as f64
}

/// Builds the map from explicit attention matrices, one per (layer, head),
/// each `S x S` over `packed`. Saliences are averaged over matrices.
pub fn attributions_from_attention(packed: &PackedInput, attention: &[Array2<f64>]) -> Result<AttributionMap> {
    let n = packed.len();
    if attention.is_empty() {
        return Err(Error::Validation("no attention matrices".into()));
    }
    if let Some(a) = attention.iter().find(|a| a.dim() != (n, n)) {
        return Err(Error::LengthMismatch {
            expected: n,
            actual: a.nrows(),
        });
    }
    let query: Vec<usize> = (0..packed.query_len).collect();
    let mut local = vec![0.0; query.len()];
    let mut global: Vec<Vec<f64>> = packed.spans.iter().map(|s| vec![0.0; s.end - s.start]).collect();
    for a in attention {
        for &p in &query {
            let others: Vec<usize> = query.iter().copied().filter(|&q| q != p).collect();
            local[p] += exchange(a, p, &others);
        }
        for (c, span) in packed.spans.iter().enumerate() {
            for p in span.start..span.end {
                global[c][p - span.start] += exchange(a, p, &query);
            }
        }
    }
    let m = attention.len() as f64;
    local.iter_mut().for_each(|v| *v /= m);
    global.iter_mut().flatten().for_each(|v| *v /= m);
    let candidate_tokens = packed
        .spans
        .iter()
        .map(|s| packed.tokens[s.start..s.end].to_vec())
        .collect();
    debug_assert!(packed.roles[..packed.query_len].iter().all(|r| *r == Role::Query));
    Ok(AttributionMap {
        query_tokens: packed.tokens[..packed.query_len].to_vec(),
        local_levels: vec![0; local.len()],
        global_levels: global.iter().map(|g| vec![0; g.len()]).collect(),
        local,
        global,
        candidate_tokens,
    })
}

/// Attributions of a cached forward pass, averaged over every layer and head.
pub fn extract_attributions(packed: &PackedInput, fwd: &Forward) -> Result<AttributionMap> {
    let mats: Vec<Array2<f64>> = (0..fwd.layers())
        .flat_map(|l| (0..fwd.heads()).map(move |h| (l, h)))
        .map(|(l, h)| fwd.attention(l, h))
        .collect();
    attributions_from_attention(packed, &mats)
}

/// Levels 1 to 3 by tertiles of the nonzero values, 0 for zeros.
///
/// With `v` the sorted nonzero values, the cut points are
/// `v[ceil(n/3)]` and `v[ceil(2n/3)]` (clamped to the last index); a value
/// reaching a cut point takes the higher level, so ties resolve upward.
pub fn tertile_levels(values: &[f64]) -> Vec<u8> {
    let mut nz: Vec<f64> = values.iter().copied().filter(|v| *v > 0.0).collect();
    if nz.is_empty() {
        return vec![0; values.len()];
    }
    nz.sort_by(f64::total_cmp);
    let n = nz.len();
    let cut = |k: usize| nz[(k * n).div_ceil(3).min(n - 1)];
    let (t1, t2) = (cut(1), cut(2));
    values
        .iter()
        .map(|&v| match v {
            v if v <= 0.0 => 0,
            v if v >= t2 => 3,
            v if v >= t1 => 2,
            _ => 1,
        })
        .collect()
}

/// Quantizes local and global saliences, each map on its own tertiles.
pub fn quantize_highlights(mut map: AttributionMap) -> AttributionMap {
    map.local_levels = tertile_levels(&map.local);
    let flat: Vec<f64> = map.global.iter().flatten().copied().collect();
    let levels = tertile_levels(&flat);
    let mut it = levels.into_iter();
    map.global_levels = map.global.iter().map(|g| it.by_ref().take(g.len()).collect()).collect();
    map
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ranker::pack_input;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn packed() -> PackedInput {
        pack_input(&[10, 11], &[vec![20, 21], vec![30]], 8).unwrap()
    }

    #[test]
    fn uniform_attention_gives_equal_saliences() {
        let p = packed();
        let n = p.len();
        let a = Array2::from_elem((n, n), 1.0 / n as f64);
        let m = quantize_highlights(attributions_from_attention(&p, &[a]).unwrap());
        let all: Vec<f64> = m.local.iter().chain(m.global.iter().flatten()).copied().collect();
        assert!(all.iter().all(|v| (v - all[0]).abs() < 1e-15));
        assert!(m.local_levels.iter().chain(m.global_levels.iter().flatten()).all(|&l| l == 3));
    }

    #[test]
    fn hand_matrix_reduces_to_row_and_column_means() {
        // layout: q0 q1 SEP CLS0 a0 a1 SEP CLS1 b0 SEP
        let p = packed();
        let n = p.len();
        let mut a = Array2::zeros((n, n));
        a[[0, 1]] = 0.6;
        a[[1, 0]] = 0.2;
        a[[4, 0]] = 0.5;
        a[[4, 1]] = 0.3;
        a[[1, 4]] = 0.1;
        a[[8, 1]] = 0.4;
        let m = attributions_from_attention(&p, &[a]).unwrap();
        assert!((m.local[0] - (0.6 + 0.2) / 2.0).abs() < 1e-15);
        assert!((m.local[1] - (0.2 + 0.6) / 2.0).abs() < 1e-15);
        // a0: sends 0.5 + 0.3, receives 0.1, over two query tokens
        assert!((m.global[0][0] - (0.5 + 0.3 + 0.1) / 4.0).abs() < 1e-15);
        assert_eq!(m.global[0][1], 0.0);
        assert!((m.global[1][0] - 0.4 / 4.0).abs() < 1e-15);
    }

    #[test]
    fn masked_pair_contributes_nothing() {
        let p = packed();
        let n = p.len();
        let mut a = Array2::zeros((n, n));
        // a0 and b0 may not attend each other; put mass only there
        a[[4, 8]] = 1.0;
        a[[8, 4]] = 1.0;
        let m = attributions_from_attention(&p, &[a]).unwrap();
        assert!(m.global.iter().flatten().all(|&v| v == 0.0));
        assert!(m.local.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn three_values_take_three_levels() {
        assert_eq!(tertile_levels(&[0.1, 0.5, 0.9]), vec![1, 2, 3]);
        assert_eq!(tertile_levels(&[0.9, 0.0, 0.1, 0.5]), vec![3, 0, 1, 2]);
    }

    #[test]
    fn equal_values_resolve_upward() {
        assert_eq!(tertile_levels(&[0.4; 5]), vec![3; 5]);
        assert_eq!(tertile_levels(&[0.0; 3]), vec![0; 3]);
    }

    // independent bucketing: walk the sorted order, bucket by position,
    // then lift every tie group to its highest bucket
    fn sort_oracle(values: &[f64]) -> Vec<u8> {
        let mut idx: Vec<usize> = (0..values.len()).filter(|&i| values[i] > 0.0).collect();
        idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let n = idx.len();
        let mut out = vec![0u8; values.len()];
        let b1 = n.div_ceil(3);
        let b2 = (2 * n).div_ceil(3);
        for (pos, &i) in idx.iter().enumerate() {
            out[i] = 1 + u8::from(pos >= b1.min(n - 1)) + u8::from(pos >= b2.min(n - 1));
        }
        for &i in &idx {
            let top = idx.iter().filter(|&&j| values[j] == values[i]).map(|&j| out[j]).max().unwrap();
            out[i] = top;
        }
        out
    }

    #[test]
    fn random_values_match_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..50 {
            let v: Vec<f64> = (0..30)
                .map(|_| if rng.gen_bool(0.2) { 0.0 } else { (rng.gen_range(1..8) as f64) / 8.0 })
                .collect();
            assert_eq!(tertile_levels(&v), sort_oracle(&v), "{v:?}");
        }
    }

    #[test]
    fn levels_survive_rescaling() {
        let v = [0.3, 0.01, 0.7, 0.0, 0.2, 0.2];
        let w: Vec<f64> = v.iter().map(|x| x * 37.5).collect();
        assert_eq!(tertile_levels(&v), tertile_levels(&w));
    }
}
