//! Example construction, losses and the multi-task training loop.

mod eval;
mod examples;
mod loss;
mod schedule;
mod split;

pub use eval::{
    build_examples, extraction_report, gold_sets, label_predictions, model_term_scores, ranking_report, rerank_run,
    retrieval_run, retrieval_term_scores,
};
pub use examples::{
    make_ie_example, make_ir_example, make_ssl_example, mask_phrases, Built, Pipeline, Skip, Task, TaskExample,
};
pub use loss::{candidate_logits, compute_task_loss, predict_terms, task_loss_from_logits};
pub use schedule::{config_hash, train, Regime, Schedule, StepRecord, TrainData, TrainLog, TransformStats};
pub use split::chronological_split;
