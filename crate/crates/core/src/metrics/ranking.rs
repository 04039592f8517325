//! Ranked-retrieval measures following trec_eval conventions: binary
//! relevance at grade >= 1, gains `2^g - 1`, discount `log2(i + 1)`.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::corpus::Qrels;
use crate::error::{Error, Result};

/// Per-topic ranked document lists.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RankedRun {
    topics: BTreeMap<String, Vec<(String, f64)>>,
}

impl RankedRun {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sets the ranking of `topic` from scores: descending score, ascending
    /// doc id on ties. Duplicate documents are rejected.
    pub fn insert(&mut self, topic: &str, mut scored: Vec<(String, f64)>) -> Result<()> {
        let mut seen = HashSet::new();
        for (d, s) in &scored {
            if !s.is_finite() {
                return Err(Error::Validation(format!("non-finite score for {topic}/{d}")));
            }
            if !seen.insert(d.as_str()) {
                return Err(Error::DuplicateId {
                    kind: "run entry",
                    id: format!("{topic}/{d}"),
                });
            }
        }
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        self.topics.insert(topic.to_string(), scored);
        Ok(())
    }

    pub fn ranking(&self, topic: &str) -> Option<&[(String, f64)]> {
        self.topics.get(topic).map(Vec::as_slice)
    }

    pub fn topics(&self) -> impl Iterator<Item = &str> {
        self.topics.keys().map(String::as_str)
    }

    pub fn docs(&self, topic: &str) -> Vec<&str> {
        self.ranking(topic)
            .map(|r| r.iter().map(|(d, _)| d.as_str()).collect())
            .unwrap_or_default()
    }

    /// Accepts `topic doc rank score`, optionally followed by a tag, or the
    /// six-column `topic Q0 doc rank score tag` layout.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut raw: BTreeMap<String, Vec<(String, f64)>> = BTreeMap::new();
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let cols: Vec<&str> = line.split_whitespace().collect();
            let (t, d, s) = match cols.as_slice() {
                [] => continue,
                [t, d, _, s] | [t, d, _, s, _] => (*t, *d, *s),
                [t, _, d, _, s, _] => (*t, *d, *s),
                _ => {
                    return Err(Error::Validation(format!(
                        "{}:{}: expected topic<TAB>doc<TAB>rank<TAB>score",
                        path.display(),
                        lineno + 1
                    )))
                }
            };
            let s: f64 = s
                .parse()
                .map_err(|_| Error::Validation(format!("{}:{}: bad score `{s}`", path.display(), lineno + 1)))?;
            raw.entry(t.to_string()).or_default().push((d.to_string(), s));
        }
        let mut run = RankedRun::new();
        for (t, list) in raw {
            run.insert(&t, list)?;
        }
        Ok(run)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
        for (t, list) in &self.topics {
            for (rank, (d, s)) in list.iter().enumerate() {
                writeln!(out, "{t}\t{d}\t{}\t{s}", rank + 1).map_err(|e| Error::io(path, e))?;
            }
        }
        out.flush().map_err(|e| Error::io(path, e))
    }
}

fn is_relevant(qrels: &Qrels, topic: &str, doc: &str) -> bool {
    qrels.grade(topic, doc).is_some_and(|g| g >= 1)
}

/// Average precision of one ranked list; `None` when the topic has no
/// relevant judgments.
pub fn average_precision(ranking: &[&str], qrels: &Qrels, topic: &str) -> Option<f64> {
    let r = qrels.relevant_count(topic);
    if r == 0 {
        return None;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, d) in ranking.iter().enumerate() {
        if is_relevant(qrels, topic, d) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Some(sum / r as f64)
}

/// Binary precision over the first `n` positions, denominator `n`.
pub fn precision_at(ranking: &[&str], qrels: &Qrels, topic: &str, n: usize) -> f64 {
    assert!(n >= 1, "cutoff must be >= 1");
    ranking.iter().take(n).filter(|d| is_relevant(qrels, topic, d)).count() as f64 / n as f64
}

fn gain(g: u8) -> f64 {
    (1u32 << g) as f64 - 1.0
}

fn dcg(grades: impl Iterator<Item = u8>) -> f64 {
    grades
        .enumerate()
        .map(|(i, g)| gain(g) / ((i + 2) as f64).log2())
        .sum()
}

/// Graded nDCG@n; `None` when the ideal DCG is zero.
pub fn ndcg_at(ranking: &[&str], qrels: &Qrels, topic: &str, n: usize) -> Option<f64> {
    assert!(n >= 1, "cutoff must be >= 1");
    let mut ideal: Vec<u8> = qrels.judged(topic)?.values().copied().collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg = dcg(ideal.into_iter().take(n));
    if idcg == 0.0 {
        return None;
    }
    let actual = dcg(ranking.iter().take(n).map(|d| qrels.grade(topic, d).unwrap_or(0)));
    Some(actual / idcg)
}

/// Binary preference. Unjudged documents are ignored; the non-relevant
/// count above a relevant document is capped at `min(R, N)`.
pub fn bpref(ranking: &[&str], qrels: &Qrels, topic: &str) -> Option<f64> {
    let r = qrels.relevant_count(topic);
    let n = qrels.nonrelevant_count(topic);
    if r == 0 || n == 0 {
        return None;
    }
    let cap = r.min(n);
    let mut nonrel_above = 0usize;
    let mut sum = 0.0;
    for d in ranking {
        match qrels.grade(topic, d) {
            Some(0) => nonrel_above += 1,
            Some(_) => sum += 1.0 - nonrel_above.min(cap) as f64 / cap as f64,
            None => {}
        }
    }
    Some(sum / r as f64)
}

fn mean_over_topics(run: &RankedRun, name: &str, f: impl Fn(&[&str], &str) -> Option<f64>) -> f64 {
    let mut vals = Vec::new();
    for t in run.topics() {
        match f(&run.docs(t), t) {
            Some(v) => vals.push(v),
            None => log::warn!("{name}: topic `{t}` excluded (insufficient judgments)"),
        }
    }
    if vals.is_empty() {
        0.0
    } else {
        vals.iter().sum::<f64>() / vals.len() as f64
    }
}

pub fn mean_average_precision(run: &RankedRun, qrels: &Qrels) -> f64 {
    mean_over_topics(run, "map", |r, t| average_precision(r, qrels, t))
}

pub fn mean_precision_at(run: &RankedRun, qrels: &Qrels, n: usize) -> f64 {
    mean_over_topics(run, "P@n", |r, t| qrels.judged(t).map(|_| precision_at(r, qrels, t, n)))
}

pub fn mean_ndcg_at(run: &RankedRun, qrels: &Qrels, n: usize) -> f64 {
    mean_over_topics(run, "ndcg@n", |r, t| ndcg_at(r, qrels, t, n))
}

pub fn mean_bpref(run: &RankedRun, qrels: &Qrels) -> f64 {
    mean_over_topics(run, "bpref", |r, t| bpref(r, qrels, t))
}
