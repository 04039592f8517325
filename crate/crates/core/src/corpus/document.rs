use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::corpus::HierarchyTree;
use crate::error::{Error, Result};

/// One article: the unit that retrieval ranks and extraction labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Document {
    pub id: String,
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    #[serde(default)]
    pub labels: BTreeSet<String>,
    pub date: Option<NaiveDate>,
}

impl Document {
    /// Title and abstract joined by a single space; what gets tokenized.
    pub fn text(&self) -> String {
        match (self.title.trim().is_empty(), self.abstract_text.trim().is_empty()) {
            (false, false) => format!("{} {}", self.title, self.abstract_text),
            (false, true) => self.title.clone(),
            _ => self.abstract_text.clone(),
        }
    }

    fn has_text(&self) -> bool {
        !(self.title.trim().is_empty() && self.abstract_text.trim().is_empty())
    }
}

/// Immutable collection of documents with O(1) lookup by id.
#[derive(Debug, Clone, Default)]
pub struct CorpusStore {
    docs: Vec<Document>,
    by_id: HashMap<String, usize>,
    skipped: usize,
}

impl CorpusStore {
    pub fn from_documents(docs: Vec<Document>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(docs.len());
        for (i, d) in docs.iter().enumerate() {
            if d.id.is_empty() {
                return Err(Error::Validation(format!("document at position {i} has an empty id")));
            }
            if !d.has_text() {
                return Err(Error::Validation(format!("document `{}` has no title or abstract", d.id)));
            }
            if by_id.insert(d.id.clone(), i).is_some() {
                return Err(Error::DuplicateId {
                    kind: "document",
                    id: d.id.clone(),
                });
            }
        }
        Ok(Self {
            docs,
            by_id,
            skipped: 0,
        })
    }

    /// Reads a JSON-lines corpus. Malformed lines are logged and skipped;
    /// duplicate ids are fatal.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut docs = Vec::new();
        let mut skipped = 0;
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<Document>(&line) {
                Ok(doc) if doc.has_text() && !doc.id.is_empty() => docs.push(doc),
                Ok(doc) => {
                    log::warn!("{}:{}: document `{}` has no usable text, skipped", path.display(), lineno + 1, doc.id);
                    skipped += 1;
                }
                Err(e) => {
                    log::warn!("{}:{}: malformed record skipped: {e}", path.display(), lineno + 1);
                    skipped += 1;
                }
            }
        }
        let mut store = Self::from_documents(docs)?;
        store.skipped = skipped;
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        for d in &self.docs {
            serde_json::to_writer(&mut out, d)?;
            out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    /// Number of malformed lines dropped by [`CorpusStore::load`].
    pub fn skipped(&self) -> usize {
        self.skipped
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.by_id.get(id).map(|&i| &self.docs[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn doc(&self, pos: usize) -> &Document {
        &self.docs[pos]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Document> {
        self.docs.iter()
    }

    pub fn documents(&self) -> &[Document] {
        &self.docs
    }

    /// Restricts the store to the given ids, keeping the original order.
    pub fn subset(&self, ids: &[String]) -> Result<Self> {
        let keep: std::collections::HashSet<&str> = ids.iter().map(String::as_str).collect();
        for id in ids {
            if !self.by_id.contains_key(id) {
                return Err(Error::Unknown {
                    kind: "document",
                    id: id.clone(),
                });
            }
        }
        Self::from_documents(self.docs.iter().filter(|d| keep.contains(d.id.as_str())).cloned().collect())
    }

    /// Checks that every label resolves in `tree`.
    pub fn validate_labels(&self, tree: &HierarchyTree) -> Result<()> {
        for d in &self.docs {
            for l in &d.labels {
                if !tree.contains(l) {
                    return Err(Error::Unknown {
                        kind: "index label",
                        id: format!("{l} (document {})", d.id),
                    });
                }
            }
        }
        Ok(())
    }

    /// Sorted set of every label used in the corpus.
    pub fn label_set(&self) -> BTreeSet<String> {
        self.docs.iter().flat_map(|d| d.labels.iter().cloned()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    const D1: &str = r#"{"id":"d1","title":"Covid spread","abstract":"Masks work.","labels":["A"],"date":"2020-03-01"}"#;
    const D2: &str = r#"{"id":"d2","title":"Vaccines","abstract":"mRNA.","labels":[],"date":"2020-04-01"}"#;
    const D3: &str = r#"{"id":"d3","title":"Testing","abstract":"PCR.","labels":["B","A"],"date":"2020-05-01"}"#;

    #[test]
    fn loads_valid_lines() {
        let f = write(&[D1, D2, D3]);
        let store = CorpusStore::load(f.path()).unwrap();
        assert_eq!(store.len(), 3);
        assert_eq!(store.skipped(), 0);
        assert_eq!(store.get("d3").unwrap().labels.len(), 2);
    }

    #[test]
    fn duplicate_id_is_fatal_and_named() {
        let f = write(&[D1, D1]);
        let err = CorpusStore::load(f.path()).unwrap_err();
        assert!(matches!(err, Error::DuplicateId { ref id, .. } if id == "d1"));
        assert!(err.to_string().contains("d1"));
    }

    #[test]
    fn truncated_line_is_skipped() {
        let f = write(&[D1, r#"{"id":"d9","title":"Trunc"#, D3]);
        let store = CorpusStore::load(f.path()).unwrap();
        assert_eq!(store.len(), 2);
        assert_eq!(store.skipped(), 1);
    }

    #[test]
    fn unknown_keys_are_malformed() {
        let f = write(&[D1, r#"{"id":"d4","title":"x","abstract":"y","labels":[],"date":"2020-01-01","extra":1}"#]);
        let store = CorpusStore::load(f.path()).unwrap();
        assert_eq!(store.len(), 1);
        assert_eq!(store.skipped(), 1);
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = CorpusStore::load("/nonexistent/corpus.jsonl").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn text_joins_title_and_abstract() {
        let d: Document = serde_json::from_str(D1).unwrap();
        assert_eq!(d.text(), "Covid spread Masks work.");
    }
}
