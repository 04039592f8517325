//! Hierarchical F-measure over lowest-common-ancestor augmented label sets.
//!
//! Each predicted label is extended with its ancestors up to, and including,
//! its deepest common ancestor with any gold label; gold labels are extended
//! the same way against the predictions. The synthetic root never counts.
//! Counts are pooled over examples before the F-measure is taken.

use std::collections::BTreeSet;

use crate::corpus::HierarchyTree;
use crate::error::Result;
use crate::metrics::{Counts, LabelPrediction};

fn augment(tree: &HierarchyTree, from: &[usize], against: &[usize]) -> BTreeSet<usize> {
    let mut out = BTreeSet::new();
    for &node in from {
        if against.is_empty() {
            out.insert(node);
            continue;
        }
        // deepest LCA over the opposing set, ties by smallest id
        let top = against
            .iter()
            .map(|&o| tree.lca_idx(node, o))
            .max_by(|&x, &y| {
                tree.depth_idx(x)
                    .cmp(&tree.depth_idx(y))
                    .then_with(|| tree.name(y).cmp(tree.name(x)))
            })
            .unwrap();
        out.extend(tree.path_to(node, top).filter(|&a| a != 0));
    }
    out
}

/// Augmented-set counts for one example.
pub fn lca_counts(pred: &LabelPrediction, tree: &HierarchyTree) -> Result<Counts> {
    let p: Vec<usize> = pred.predicted.iter().map(|l| tree.idx(l)).collect::<Result<_>>()?;
    let g: Vec<usize> = pred.gold.iter().map(|l| tree.idx(l)).collect::<Result<_>>()?;
    let p_aug = augment(tree, &p, &g);
    let g_aug = augment(tree, &g, &p);
    let tp = p_aug.intersection(&g_aug).count();
    Ok(Counts {
        tp,
        fp: p_aug.len() - tp,
        fn_: g_aug.len() - tp,
    })
}

pub fn lca_f1(preds: &[LabelPrediction], tree: &HierarchyTree) -> Result<f64> {
    let mut total = Counts::default();
    for p in preds {
        let c = lca_counts(p, tree)?;
        total.tp += c.tp;
        total.fp += c.fp;
        total.fn_ += c.fn_;
    }
    Ok(total.f1())
}
