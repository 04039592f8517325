use crate::error::{Error, Result};
use crate::ranker::{bce_with_logits, logistic, AttentionMode, Params, RankerModel};
use crate::retriever::TermKey;

use super::examples::{Task, TaskExample};

fn transform_of(ex: &TaskExample) -> Result<&crate::transform::TransformMatrix> {
    ex.transform
        .as_ref()
        .ok_or_else(|| Error::Validation(format!("{} example `{}` has no transform", ex.task.name(), ex.source)))
}

/// Loss of an example given the ranker's candidate logits, and its gradient
/// with respect to those logits.
///
/// Extraction and masking map logits to term logits through `T^-1` and score
/// `logistic` of those against the gold indicator; the gradient comes back
/// through a solve with `T^T`.
pub fn task_loss_from_logits(ex: &TaskExample, logits: &[f64]) -> Result<(f64, Vec<f64>)> {
    match ex.task {
        Task::Ir => bce_with_logits(logits, &ex.targets),
        Task::Ssl | Task::Ie => {
            let t = transform_of(ex)?;
            let x = t.solve(logits)?;
            let (loss, dx) = bce_with_logits(&x, &ex.targets)?;
            Ok((loss, t.solve_transposed(&dx)?))
        }
    }
}

pub fn compute_task_loss(ex: &TaskExample, model: &RankerModel, dropout_seed: Option<u64>) -> Result<(f64, Params)> {
    let packed = model.pack(&ex.query, &ex.candidate_tokens)?;
    let fwd = model.forward(&packed, AttentionMode::Sparse, dropout_seed)?;
    let (loss, dz) = task_loss_from_logits(ex, &fwd.logits)?;
    Ok((loss, model.backward(&fwd, &dz)?))
}

/// Candidate logits with dropout off.
pub fn candidate_logits(ex: &TaskExample, model: &RankerModel) -> Result<Vec<f64>> {
    let packed = model.pack(&ex.query, &ex.candidate_tokens)?;
    Ok(model.forward(&packed, AttentionMode::Sparse, None)?.logits)
}

/// Term likelihoods `logistic(T^-1 z)` for extraction and masking examples.
pub fn predict_terms(ex: &TaskExample, model: &RankerModel) -> Result<Vec<(TermKey, f64)>> {
    let t = transform_of(ex)?;
    let x = t.solve(&candidate_logits(ex, model)?)?;
    Ok(ex.term_keys().into_iter().zip(x.into_iter().map(logistic)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retriever::ScoredTerm;
    use crate::transform::{TransformConfig, TransformMatrix};
    use std::collections::BTreeSet;

    fn example(rows: &[Vec<f64>], targets: Vec<f64>) -> TaskExample {
        let n = rows.len();
        let keys: Vec<TermKey> = (0..n).map(|i| TermKey::Label(format!("L{i}"))).collect();
        let t = TransformMatrix::from_dense(
            (0..n).map(|i| format!("d{i}")).collect(),
            keys.clone(),
            rows,
            &TransformConfig::default(),
        )
        .unwrap();
        TaskExample {
            task: Task::Ie,
            source: "q".into(),
            query: vec![5],
            candidates: t.rows().to_vec(),
            candidate_tokens: vec![vec![6]; n],
            retrieval_scores: vec![0.0; n],
            terms: keys.into_iter().map(|key| ScoredTerm { key, score: 1.0 }).collect(),
            gold: BTreeSet::new(),
            shortfall: 0,
            targets,
            transform: Some(t),
        }
    }

    #[test]
    fn identity_transform_is_direct_bce() {
        let id = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
        let ex = example(&id, vec![1.0, 0.0, 1.0]);
        let z = [0.3, -1.1, 2.0];
        let (a, ga) = task_loss_from_logits(&ex, &z).unwrap();
        let (b, gb) = bce_with_logits(&z, &ex.targets).unwrap();
        assert!((a - b).abs() < 1e-15);
        for (x, y) in ga.iter().zip(&gb) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn gradient_through_solve_matches_differences() {
        let rows = vec![vec![1.0, 1.0, 0.0], vec![0.0, 1.0, 1.0], vec![1.0, 0.0, 1.0]];
        let ex = example(&rows, vec![1.0, 0.0, 1.0]);
        let z = [0.4, -0.2, 0.9];
        let (_, g) = task_loss_from_logits(&ex, &z).unwrap();
        let h = 1e-6;
        for i in 0..3 {
            let mut zp = z;
            zp[i] += h;
            let mut zm = z;
            zm[i] -= h;
            let num = (task_loss_from_logits(&ex, &zp).unwrap().0 - task_loss_from_logits(&ex, &zm).unwrap().0) / (2.0 * h);
            let rel = (num - g[i]).abs() / num.abs().max(g[i].abs()).max(1e-6);
            assert!(rel < 1e-6, "{i}: {num} vs {}", g[i]);
        }
    }

    #[test]
    fn saturating_logits_drive_loss_to_zero() {
        let rows = vec![vec![1.0, 1.0], vec![0.0, 1.0]];
        let ex = example(&rows, vec![1.0, 0.0]);
        let mut last = f64::INFINITY;
        for s in [1.0, 2.0, 4.0, 8.0, 16.0] {
            // term logits (s, -s) mapped to documents by T
            let z = [s - s, -s];
            let (l, _) = task_loss_from_logits(&ex, &z).unwrap();
            assert!(l < last);
            last = l;
        }
        assert!(last < 1e-6);
    }
}
