//! Document/term incidence matrix linking candidate-document scores to
//! candidate-term scores, and the decision threshold over term scores.

mod threshold;

use nalgebra::{DMatrix, DVector, LU};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::retriever::TermKey;

pub use threshold::{optimize_per_label, optimize_threshold, ThresholdPolicy};

/// Which side of the transform a score vector lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Terms,
    Documents,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    pub values: Vec<f64>,
    pub axis: Axis,
}

impl ScoreVector {
    pub fn terms(values: Vec<f64>) -> Self {
        Self {
            values,
            axis: Axis::Terms,
        }
    }

    pub fn documents(values: Vec<f64>) -> Self {
        Self {
            values,
            axis: Axis::Documents,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransformConfig {
    /// condition estimates above this are flagged
    pub condition_cap: f64,
    /// pivot magnitude below which a row counts as dependent
    pub rank_tol: f64,
}

impl Default for TransformConfig {
    fn default() -> Self {
        Self {
            condition_cap: 1e8,
            rank_tol: 1e-9,
        }
    }
}

/// One row replacement made while repairing rank.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Swap {
    pub removed: String,
    pub added: String,
    pub rank_after: usize,
}

/// Square binary incidence matrix: row `i` is candidate document `i`,
/// column `j` is candidate term `j`.
#[derive(Clone)]
pub struct TransformMatrix {
    rows: Vec<String>,
    cols: Vec<TermKey>,
    t: DMatrix<f64>,
    lu: LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    lu_t: LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    condition: f64,
    ill_conditioned: bool,
    swaps: Vec<Swap>,
}

impl std::fmt::Debug for TransformMatrix {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TransformMatrix")
            .field("rows", &self.rows)
            .field("cols", &self.cols)
            .field("t", &self.t)
            .field("condition", &self.condition)
            .field("swaps", &self.swaps)
            .finish()
    }
}

/// Audit record of a built transform, written to run manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformAudit {
    pub size: usize,
    pub condition: f64,
    pub ill_conditioned: bool,
    pub swaps: Vec<Swap>,
}

/// Incremental row-echelon basis used for greedy rank checks.
struct Basis {
    // (pivot column, normalized row)
    rows: Vec<(usize, Vec<f64>)>,
    tol: f64,
}

impl Basis {
    fn new(tol: f64) -> Self {
        Self { rows: Vec::new(), tol }
    }

    fn rank(&self) -> usize {
        self.rows.len()
    }

    fn reduce(&self, row: &[f64]) -> Vec<f64> {
        let mut r = row.to_vec();
        for (p, b) in &self.rows {
            let f = r[*p];
            if f != 0.0 {
                for (x, y) in r.iter_mut().zip(b) {
                    *x -= f * y;
                }
            }
        }
        r
    }

    fn increases_rank(&self, row: &[f64]) -> bool {
        self.reduce(row).iter().any(|x| x.abs() > self.tol)
    }

    fn insert(&mut self, row: &[f64]) -> bool {
        let r = self.reduce(row);
        let Some((p, &v)) = r
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .filter(|(_, v)| v.abs() > self.tol)
        else {
            return false;
        };
        let r: Vec<f64> = r.iter().map(|x| x / v).collect();
        // keep earlier rows reduced against the new pivot
        for (_, b) in &mut self.rows {
            let f = b[p];
            if f != 0.0 {
                for (x, y) in b.iter_mut().zip(&r) {
                    *x -= f * y;
                }
            }
        }
        self.rows.push((p, r));
        true
    }
}

/// Numerical rank of a row-major matrix.
pub fn rank_of(rows: &[Vec<f64>], tol: f64) -> usize {
    let mut b = Basis::new(tol);
    for r in rows {
        b.insert(r);
    }
    b.rank()
}

/// Builds `T` over the first `terms.len()` documents of `ranked_docs`, using
/// the remaining documents as the reserve list for rank repair.
///
/// Dependent rows are dropped from the lowest-ranked up and each is replaced
/// by the next reserve document that raises the rank; replacements go to the
/// end so retrieval order is otherwise kept.
pub fn build_transform(
    ranked_docs: &[String],
    terms: &[TermKey],
    carries: impl Fn(&str, &TermKey) -> bool,
    cfg: &TransformConfig,
) -> Result<TransformMatrix> {
    let k = terms.len();
    if k == 0 {
        return Err(Error::Validation("transform needs at least one candidate term".into()));
    }
    if ranked_docs.len() < k {
        return Err(Error::Validation(format!(
            "transform needs at least {k} candidate documents, got {}",
            ranked_docs.len()
        )));
    }
    let incidence = |d: &str| -> Vec<f64> { terms.iter().map(|t| if carries(d, t) { 1.0 } else { 0.0 }).collect() };

    let mut basis = Basis::new(cfg.rank_tol);
    let mut kept: Vec<usize> = Vec::with_capacity(k);
    let mut dependent: Vec<usize> = Vec::new();
    for (i, doc) in ranked_docs.iter().enumerate().take(k) {
        if basis.insert(&incidence(doc)) {
            kept.push(i);
        } else {
            dependent.push(i);
        }
    }
    let mut swaps = Vec::new();
    let mut reserve = k..ranked_docs.len();
    while let Some(out) = dependent.pop() {
        let added = reserve.by_ref().find(|&r| basis.increases_rank(&incidence(&ranked_docs[r])));
        let Some(r) = added else {
            return Err(Error::RankDeficient {
                rank: basis.rank(),
                size: k,
            });
        };
        basis.insert(&incidence(&ranked_docs[r]));
        kept.push(r);
        swaps.push(Swap {
            removed: ranked_docs[out].clone(),
            added: ranked_docs[r].clone(),
            rank_after: basis.rank(),
        });
        log::debug!("transform row `{}` replaced by `{}`", ranked_docs[out], ranked_docs[r]);
    }

    let rows: Vec<String> = kept.iter().map(|&i| ranked_docs[i].clone()).collect();
    let data: Vec<Vec<f64>> = rows.iter().map(|d| incidence(d)).collect();
    let t = DMatrix::from_fn(k, k, |i, j| data[i][j]);
    let mut out = TransformMatrix::from_parts(rows, terms.to_vec(), t, cfg)?;
    out.swaps = swaps;
    Ok(out)
}

impl TransformMatrix {
    /// Wraps an explicit square matrix given row-major.
    pub fn from_dense(rows: Vec<String>, cols: Vec<TermKey>, data: &[Vec<f64>], cfg: &TransformConfig) -> Result<Self> {
        let k = rows.len();
        if cols.len() != k || data.len() != k || data.iter().any(|r| r.len() != k) {
            return Err(Error::Validation(format!(
                "transform must be square: {} rows, {} columns",
                rows.len(),
                cols.len()
            )));
        }
        let t = DMatrix::from_fn(k, k, |i, j| data[i][j]);
        Self::from_parts(rows, cols, t, cfg)
    }

    fn from_parts(rows: Vec<String>, cols: Vec<TermKey>, t: DMatrix<f64>, cfg: &TransformConfig) -> Result<Self> {
        let condition = condition_estimate(&t);
        if !condition.is_finite() || condition * f64::EPSILON >= 1.0 {
            return Err(Error::Singular { condition });
        }
        let ill_conditioned = condition > cfg.condition_cap;
        if ill_conditioned {
            log::warn!(
                "transform condition estimate {condition:e} exceeds cap {:e}",
                cfg.condition_cap
            );
        }
        let lu = t.clone().lu();
        let lu_t = t.transpose().lu();
        Ok(Self {
            rows,
            cols,
            t,
            lu,
            lu_t,
            condition,
            ill_conditioned,
            swaps: Vec::new(),
        })
    }

    pub fn size(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[String] {
        &self.rows
    }

    pub fn cols(&self) -> &[TermKey] {
        &self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.t[(i, j)]
    }

    /// Ratio of extreme singular values.
    pub fn condition(&self) -> f64 {
        self.condition
    }

    pub fn ill_conditioned(&self) -> bool {
        self.ill_conditioned
    }

    pub fn swaps(&self) -> &[Swap] {
        &self.swaps
    }

    pub fn audit(&self) -> TransformAudit {
        TransformAudit {
            size: self.size(),
            condition: self.condition,
            ill_conditioned: self.ill_conditioned,
            swaps: self.swaps.clone(),
        }
    }

    fn check_len(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.size() {
            return Err(Error::LengthMismatch {
                expected: self.size(),
                actual: y.len(),
            });
        }
        Ok(())
    }

    /// `T y`.
    pub fn apply(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.check_len(y)?;
        Ok((&self.t * DVector::from_column_slice(y)).as_slice().to_vec())
    }

    /// `Tᵀ y`.
    pub fn apply_transposed(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.check_len(y)?;
        Ok((self.t.tr_mul(&DVector::from_column_slice(y))).as_slice().to_vec())
    }

    /// Solves `T x = y`.
    pub fn solve(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.check_len(y)?;
        self.finish(self.lu.solve(&DVector::from_column_slice(y)))
    }

    /// Solves `Tᵀ x = y`; the adjoint of [`TransformMatrix::solve`].
    pub fn solve_transposed(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.check_len(y)?;
        self.finish(self.lu_t.solve(&DVector::from_column_slice(y)))
    }

    fn finish(&self, x: Option<DVector<f64>>) -> Result<Vec<f64>> {
        match x {
            Some(x) if x.iter().all(|v| v.is_finite()) => Ok(x.as_slice().to_vec()),
            _ => Err(Error::Singular {
                condition: self.condition,
            }),
        }
    }

    /// Term likelihoods to document likelihoods.
    pub fn terms_to_docs(&self, y: &ScoreVector) -> Result<ScoreVector> {
        expect_axis(y, Axis::Terms)?;
        Ok(ScoreVector::documents(self.apply(&y.values)?))
    }

    /// Document scores back to term scores, with the residual `‖T x − y‖∞`.
    pub fn docs_to_terms(&self, y: &ScoreVector) -> Result<(ScoreVector, f64)> {
        expect_axis(y, Axis::Documents)?;
        let x = self.solve(&y.values)?;
        let back = self.apply(&x)?;
        let residual = back
            .iter()
            .zip(&y.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        Ok((ScoreVector::terms(x), residual))
    }
}

fn expect_axis(y: &ScoreVector, axis: Axis) -> Result<()> {
    if y.axis != axis {
        return Err(Error::Validation(format!("expected a {axis:?} score vector, got {:?}", y.axis)));
    }
    if y.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("score vector has non-finite entries".into()));
    }
    Ok(())
}

fn condition_estimate(t: &DMatrix<f64>) -> f64 {
    let sv = t.singular_values();
    let max = sv.max();
    let min = sv.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn keys(n: usize) -> Vec<TermKey> {
        (0..n).map(|i| TermKey::Label(format!("t{i}"))).collect()
    }

    fn ids(n: &[&str]) -> Vec<String> {
        n.iter().map(|s| s.to_string()).collect()
    }

    fn carrier(table: &[(&str, &[usize])]) -> impl Fn(&str, &TermKey) -> bool {
        let map: BTreeMap<String, Vec<String>> = table
            .iter()
            .map(|(d, ts)| (d.to_string(), ts.iter().map(|t| format!("t{t}")).collect()))
            .collect();
        move |d, k| match k {
            TermKey::Label(l) => map.get(d).is_some_and(|v| v.contains(l)),
            TermKey::Phrase(_) => false,
        }
    }

    #[test]
    fn disjoint_singletons_give_a_permutation() {
        let c = carrier(&[("a", &[2]), ("b", &[0]), ("c", &[1])]);
        let t = build_transform(&ids(&["a", "b", "c"]), &keys(3), c, &TransformConfig::default()).unwrap();
        for i in 0..3 {
            let row_sum: f64 = (0..3).map(|j| t.get(i, j)).sum();
            let col_sum: f64 = (0..3).map(|j| t.get(j, i)).sum();
            assert_eq!((row_sum, col_sum), (1.0, 1.0));
        }
        assert!((t.condition() - 1.0).abs() < 1e-12);
        assert!(t.swaps().is_empty());
    }

    #[test]
    fn duplicate_row_is_swapped_from_reserve() {
        // b duplicates a; c is dependent on nothing but d adds rank
        let c = carrier(&[("a", &[0, 1]), ("b", &[0, 1]), ("c", &[2]), ("d", &[0])]);
        let t = build_transform(&ids(&["a", "b", "c", "d"]), &keys(3), c, &TransformConfig::default()).unwrap();
        assert_eq!(t.swaps().len(), 1);
        assert_eq!(t.swaps()[0].removed, "b");
        assert_eq!(t.swaps()[0].added, "d");
        assert_eq!(t.rows(), ["a", "c", "d"]);
        let rows: Vec<Vec<f64>> = (0..3).map(|i| (0..3).map(|j| t.get(i, j)).collect()).collect();
        assert_eq!(rank_of(&rows, 1e-9), 3);
        assert_eq!(rows, vec![vec![1., 1., 0.], vec![0., 0., 1.], vec![1., 0., 0.]]);
    }

    #[test]
    fn rank_one_corpus_fails() {
        let all: &[usize] = &[0, 1, 2];
        let c = carrier(&[("a", all), ("b", all), ("c", all), ("d", all), ("e", all)]);
        let err = build_transform(&ids(&["a", "b", "c", "d", "e"]), &keys(3), c, &TransformConfig::default())
            .unwrap_err();
        assert!(matches!(err, Error::RankDeficient { rank: 1, size: 3 }), "{err}");
    }

    fn upper() -> TransformMatrix {
        TransformMatrix::from_dense(
            ids(&["d0", "d1"]),
            keys(2),
            &[vec![1.0, 1.0], vec![0.0, 1.0]],
            &TransformConfig::default(),
        )
        .unwrap()
    }

    #[test]
    fn identity_maps_are_identity() {
        let t = TransformMatrix::from_dense(
            ids(&["d0", "d1"]),
            keys(2),
            &[vec![1.0, 0.0], vec![0.0, 1.0]],
            &TransformConfig::default(),
        )
        .unwrap();
        let y = ScoreVector::terms(vec![0.5, 0.2]);
        let d = t.terms_to_docs(&y).unwrap();
        assert_eq!(d.values, vec![0.5, 0.2]);
        let (x, res) = t.docs_to_terms(&d).unwrap();
        assert_eq!(x.values, vec![0.5, 0.2]);
        assert_eq!(res, 0.0);
    }

    #[test]
    fn upper_triangular_products_and_solves() {
        let t = upper();
        let d = t.terms_to_docs(&ScoreVector::terms(vec![0.5, 0.2])).unwrap();
        assert!((d.values[0] - 0.7).abs() < 1e-15 && d.values[1] == 0.2);
        let (x, res) = t.docs_to_terms(&ScoreVector::documents(vec![0.7, 0.2])).unwrap();
        assert!((x.values[0] - 0.5).abs() < 1e-15 && (x.values[1] - 0.2).abs() < 1e-15);
        assert!(res < 1e-15);
        let z = t.terms_to_docs(&ScoreVector::terms(vec![0.0, 0.0])).unwrap();
        assert_eq!(z.values, vec![0.0, 0.0]);
    }

    #[test]
    fn transposed_solve_is_adjoint() {
        let t = upper();
        let y = [0.3, -1.2];
        let x = t.solve_transposed(&y).unwrap();
        let back = t.apply_transposed(&x).unwrap();
        assert!((back[0] - y[0]).abs() < 1e-14 && (back[1] - y[1]).abs() < 1e-14);
    }

    #[test]
    fn wrong_axis_or_length_is_rejected() {
        let t = upper();
        assert!(t.terms_to_docs(&ScoreVector::documents(vec![0.0, 0.0])).is_err());
        assert!(matches!(
            t.terms_to_docs(&ScoreVector::terms(vec![0.0])),
            Err(Error::LengthMismatch { expected: 2, actual: 1 })
        ));
    }

    #[test]
    fn singular_matrix_is_rejected() {
        let err = TransformMatrix::from_dense(
            ids(&["a", "b"]),
            keys(2),
            &[vec![1.0, 1.0], vec![1.0, 1.0]],
            &TransformConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Singular { .. }));
    }

    #[test]
    fn ill_conditioned_is_flagged() {
        let cfg = TransformConfig {
            condition_cap: 2.0,
            ..Default::default()
        };
        let t = TransformMatrix::from_dense(ids(&["a", "b"]), keys(2), &[vec![1.0, 1.0], vec![0.0, 1.0]], &cfg).unwrap();
        assert!(t.ill_conditioned());
        assert!(t.condition() > 2.0);
    }
}
