use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::corpus::vocab::{TokenId, Vocabulary, UNK};
use crate::error::{Error, Result};

/// Phrases eligible for masking, each with its subword tokenization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TermList {
    phrases: Vec<String>,
    tokens: Vec<Vec<TokenId>>,
}

impl TermList {
    pub fn new<S: AsRef<str>>(phrases: &[S], vocab: &Vocabulary) -> Result<Self> {
        let mut out = Self {
            phrases: Vec::new(),
            tokens: Vec::new(),
        };
        for p in phrases {
            let p = p.as_ref().trim();
            if p.is_empty() {
                continue;
            }
            let ids = vocab.tokenize(p);
            if ids.is_empty() || ids.contains(&UNK) {
                return Err(Error::Validation(format!("term `{p}` does not tokenize cleanly")));
            }
            if out.tokens.contains(&ids) {
                log::warn!("term `{p}` duplicates an earlier entry after normalization, dropped");
                continue;
            }
            out.phrases.push(p.to_string());
            out.tokens.push(ids);
        }
        if out.phrases.is_empty() {
            return Err(Error::Validation("term list is empty".into()));
        }
        Ok(out)
    }

    pub fn load(path: impl AsRef<Path>, vocab: &Vocabulary) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let lines = BufReader::new(file)
            .lines()
            .collect::<std::io::Result<Vec<_>>>()
            .map_err(|e| Error::io(path, e))?;
        Self::new(&lines, vocab)
    }

    pub fn len(&self) -> usize {
        self.phrases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phrases.is_empty()
    }

    pub fn phrase(&self, i: usize) -> &str {
        &self.phrases[i]
    }

    pub fn tokens(&self, i: usize) -> &[TokenId] {
        &self.tokens[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &[TokenId])> {
        self.tokens.iter().map(Vec::as_slice).enumerate()
    }

    /// Start offsets of every non-overlapping occurrence of phrase `i` in `seq`.
    pub fn occurrences(&self, i: usize, seq: &[TokenId]) -> Vec<usize> {
        find_occurrences(&self.tokens[i], seq)
    }

    /// Ids of the phrases occurring in `seq`, ascending.
    pub fn present_in(&self, seq: &[TokenId]) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.occurrences(i, seq).is_empty()).collect()
    }
}

pub(crate) fn find_occurrences(needle: &[TokenId], hay: &[TokenId]) -> Vec<usize> {
    let mut out = Vec::new();
    if needle.is_empty() || needle.len() > hay.len() {
        return out;
    }
    let mut i = 0;
    while i + needle.len() <= hay.len() {
        if hay[i..i + needle.len()] == *needle {
            out.push(i);
            i += needle.len();
        } else {
            i += 1;
        }
    }
    out
}
