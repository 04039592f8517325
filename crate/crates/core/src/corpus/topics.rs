use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A retrieval topic: a (concept, question, narrative) triple.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Topic {
    pub id: String,
    #[serde(default)]
    pub concept: String,
    pub question: String,
    #[serde(default)]
    pub narrative: String,
}

impl Topic {
    /// The query text: the question, optionally prefixed by the concept.
    pub fn query_text(&self, prepend_concept: bool) -> String {
        if prepend_concept && !self.concept.trim().is_empty() {
            format!("{} {}", self.concept, self.question)
        } else {
            self.question.clone()
        }
    }
}

pub fn load_topics(path: impl AsRef<Path>) -> Result<Vec<Topic>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut topics: Vec<Topic> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let topic: Topic = match serde_json::from_str(&line) {
            Ok(t) => t,
            Err(e) => {
                log::warn!("{}:{}: malformed topic skipped: {e}", path.display(), lineno + 1);
                continue;
            }
        };
        if topic.question.trim().is_empty() {
            return Err(Error::Validation(format!("topic `{}` has an empty question", topic.id)));
        }
        if !seen.insert(topic.id.clone()) {
            return Err(Error::DuplicateId { kind: "topic", id: topic.id });
        }
        topics.push(topic);
    }
    Ok(topics)
}

pub fn save_topics(topics: &[Topic], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    for t in topics {
        serde_json::to_writer(&mut out, t)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Graded relevance: 0 unrelated, 1 partially related, 2 related.
pub type Grade = u8;

/// Relevance judgments keyed by (topic, document).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    by_topic: BTreeMap<String, HashMap<String, Grade>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, topic: &str, doc: &str, grade: Grade) -> Result<()> {
        if grade > 2 {
            return Err(Error::Validation(format!(
                "grade {grade} for ({topic}, {doc}) outside {{0,1,2}}"
            )));
        }
        let prev = self
            .by_topic
            .entry(topic.to_string())
            .or_default()
            .insert(doc.to_string(), grade);
        if prev.is_some() {
            return Err(Error::DuplicateId {
                kind: "judgment",
                id: format!("{topic}/{doc}"),
            });
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut q = Qrels::new();
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            // trec-style qrels carry an iteration column: topic 0 doc grade
            let (topic, doc, grade) = match cols.as_slice() {
                [t, d, g] => (*t, *d, *g),
                [t, _, d, g] => (*t, *d, *g),
                _ => {
                    return Err(Error::Validation(format!(
                        "{}:{}: expected topic<TAB>doc<TAB>grade",
                        path.display(),
                        lineno + 1
                    )))
                }
            };
            let grade: Grade = grade.trim().parse().map_err(|_| {
                Error::Validation(format!("{}:{}: bad grade `{grade}`", path.display(), lineno + 1))
            })?;
            q.insert(topic.trim(), doc.trim(), grade)?;
        }
        Ok(q)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
        for (topic, docs) in &self.by_topic {
            let mut docs: Vec<_> = docs.iter().collect();
            docs.sort();
            for (doc, grade) in docs {
                writeln!(out, "{topic}\t{doc}\t{grade}").map_err(|e| Error::io(path, e))?;
            }
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn grade(&self, topic: &str, doc: &str) -> Option<Grade> {
        self.by_topic.get(topic).and_then(|m| m.get(doc)).copied()
    }

    pub fn judged(&self, topic: &str) -> Option<&HashMap<String, Grade>> {
        self.by_topic.get(topic)
    }

    pub fn topics(&self) -> impl Iterator<Item = &str> {
        self.by_topic.keys().map(String::as_str)
    }

    /// Judged documents with grade >= 1.
    pub fn relevant_count(&self, topic: &str) -> usize {
        self.judged(topic).map_or(0, |m| m.values().filter(|&&g| g >= 1).count())
    }

    pub fn nonrelevant_count(&self, topic: &str) -> usize {
        self.judged(topic).map_or(0, |m| m.values().filter(|&&g| g == 0).count())
    }

    pub fn len(&self) -> usize {
        self.by_topic.values().map(HashMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_grade() {
        let mut q = Qrels::new();
        assert!(q.insert("t", "d", 3).is_err());
    }

    #[test]
    fn rejects_duplicate_pair() {
        let mut q = Qrels::new();
        q.insert("t", "d", 1).unwrap();
        assert!(matches!(q.insert("t", "d", 2), Err(Error::DuplicateId { .. })));
    }

    #[test]
    fn tsv_round_trip() {
        let mut q = Qrels::new();
        q.insert("t1", "d1", 2).unwrap();
        q.insert("t1", "d2", 0).unwrap();
        q.insert("t2", "d1", 1).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        q.save(f.path()).unwrap();
        assert_eq!(Qrels::load(f.path()).unwrap(), q);
        assert_eq!(q.relevant_count("t1"), 1);
        assert_eq!(q.nonrelevant_count("t1"), 1);
    }

    #[test]
    fn concept_prepending() {
        let t = Topic {
            id: "1".into(),
            concept: "coronavirus origin".into(),
            question: "where did it start".into(),
            narrative: String::new(),
        };
        assert_eq!(t.query_text(true), "coronavirus origin where did it start");
        assert_eq!(t.query_text(false), "where did it start");
    }
}
