use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;

use crate::corpus::{HierarchyTree, Qrels};
use crate::error::Result;
use crate::metrics::{
    example_accuracy, lca_f1, macro_f1, mean_average_precision, mean_bpref, mean_ndcg_at, mean_precision_at, micro_f1,
    EvalReport, LabelPrediction, RankedRun,
};
use crate::ranker::RankerModel;
use crate::transform::ThresholdPolicy;

use super::examples::{Built, Skip, TaskExample};
use super::loss::{candidate_logits, predict_terms};

/// Builds examples in parallel, keeping input order; skips are tallied.
pub fn build_examples<T, F>(items: &[T], build: F) -> Result<(Vec<TaskExample>, BTreeMap<Skip, usize>)>
where
    T: Sync,
    F: Fn(&T) -> Result<Built> + Sync + Send,
{
    let built: Vec<Built> = items.par_iter().map(build).collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(built.len());
    let mut skips = BTreeMap::new();
    for b in built {
        match b {
            Ok(ex) => out.push(ex),
            Err(s) => *skips.entry(s).or_default() += 1,
        }
    }
    Ok((out, skips))
}

pub fn gold_sets(examples: &[TaskExample]) -> Vec<BTreeSet<String>> {
    examples
        .iter()
        .map(|ex| ex.gold.iter().map(ToString::to_string).collect())
        .collect()
}

/// Ranker term likelihoods per example.
pub fn model_term_scores(model: &RankerModel, examples: &[TaskExample]) -> Result<Vec<Vec<(String, f64)>>> {
    examples
        .par_iter()
        .map(|ex| Ok(predict_terms(ex, model)?.into_iter().map(|(k, s)| (k.to_string(), s)).collect()))
        .collect()
}

/// Candidate-term retrieval scores, the no-ranker baseline.
pub fn retrieval_term_scores(examples: &[TaskExample]) -> Vec<Vec<(String, f64)>> {
    examples
        .iter()
        .map(|ex| ex.terms.iter().map(|t| (t.key.to_string(), t.score)).collect())
        .collect()
}

pub fn label_predictions(
    scored: &[Vec<(String, f64)>],
    gold: &[BTreeSet<String>],
    policy: &ThresholdPolicy,
) -> Vec<LabelPrediction> {
    scored
        .iter()
        .zip(gold)
        .map(|(s, g)| LabelPrediction {
            predicted: policy.predict(s).into_iter().map(str::to_string).collect(),
            gold: g.clone(),
        })
        .collect()
}

/// Micro and macro F1, example accuracy and, given a hierarchy, LCA-F.
pub fn extraction_report(preds: &[LabelPrediction], tree: Option<&HierarchyTree>) -> Result<EvalReport> {
    let mut r = EvalReport::default();
    r.set("micro_f1", micro_f1(preds));
    r.set("macro_f1", macro_f1(preds));
    r.set("accuracy", example_accuracy(preds));
    if let Some(tree) = tree {
        r.set("lca_f1", lca_f1(preds, tree)?);
    }
    Ok(r)
}

/// Candidates reordered by ranker logits.
pub fn rerank_run(model: &RankerModel, examples: &[TaskExample]) -> Result<RankedRun> {
    let logits: Vec<Vec<f64>> = examples
        .par_iter()
        .map(|ex| candidate_logits(ex, model))
        .collect::<Result<_>>()?;
    let mut run = RankedRun::new();
    for (ex, z) in examples.iter().zip(logits) {
        run.insert(&ex.source, ex.candidates.iter().cloned().zip(z).collect())?;
    }
    Ok(run)
}

/// Candidates in fused-retrieval order.
pub fn retrieval_run(examples: &[TaskExample]) -> Result<RankedRun> {
    let mut run = RankedRun::new();
    for ex in examples {
        run.insert(
            &ex.source,
            ex.candidates.iter().cloned().zip(ex.retrieval_scores.iter().copied()).collect(),
        )?;
    }
    Ok(run)
}

pub fn ranking_report(run: &RankedRun, qrels: &Qrels) -> EvalReport {
    let mut r = EvalReport::default();
    r.set("map", mean_average_precision(run, qrels));
    r.set("p@5", mean_precision_at(run, qrels, 5));
    r.set("p@10", mean_precision_at(run, qrels, 10));
    r.set("ndcg@10", mean_ndcg_at(run, qrels, 10));
    r.set("bpref", mean_bpref(run, qrels));
    r
}
