use crate::corpus::CorpusStore;
use crate::error::{Error, Result};

/// Oldest `floor(fraction * N)` documents for training, the rest for test.
/// Order is by (date, id).
pub fn chronological_split(corpus: &CorpusStore, fraction: f64) -> Result<(Vec<String>, Vec<String>)> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Validation(format!("train fraction {fraction} outside [0, 1]")));
    }
    let missing: Vec<&str> = corpus.iter().filter(|d| d.date.is_none()).map(|d| d.id.as_str()).collect();
    if !missing.is_empty() {
        return Err(Error::Validation(format!("documents without a date: {}", missing.join(", "))));
    }
    let mut docs: Vec<_> = corpus.iter().map(|d| (d.date.expect("checked"), d.id.clone())).collect();
    docs.sort();
    let n_train = (fraction * docs.len() as f64).floor() as usize;
    let test: Vec<String> = docs.split_off(n_train).into_iter().map(|(_, id)| id).collect();
    if test.is_empty() {
        log::warn!("chronological split leaves the test set empty");
    }
    Ok((docs.into_iter().map(|(_, id)| id).collect(), test))
}
