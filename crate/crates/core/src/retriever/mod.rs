//! Candidate retrieval: sparse term statistics, fused dense/keyword
//! representations, cosine ranking of documents and IDF-sum ranking of
//! candidate terms.

mod embedding;
mod index;

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{TermList, TokenId};
use crate::error::{Error, Result};

pub use embedding::{DocVectorFile, EmbeddingProvider, TokenTable};
pub use index::{InvertedIndex, TermBag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    Tfidf,
    Bm25,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrieverConfig {
    /// candidate documents for extraction and masking
    pub k: usize,
    /// candidate terms or indexes
    pub m: usize,
    /// candidate documents for question retrieval
    pub k_ir: usize,
    pub weighting: Weighting,
    pub k1: f64,
    pub b: f64,
    /// weight of the dense cosine in the fused score
    pub alpha: f64,
    pub embedding_dim: usize,
    pub embedding_seed: u64,
}

impl Default for RetrieverConfig {
    fn default() -> Self {
        Self {
            k: 16,
            m: 16,
            k_ir: 32,
            weighting: Weighting::Bm25,
            k1: 1.2,
            b: 0.75,
            alpha: 0.5,
            embedding_dim: 64,
            embedding_seed: 17,
        }
    }
}

impl RetrieverConfig {
    pub fn validate(&self, invertible: bool) -> Result<()> {
        if self.k == 0 || self.m == 0 || self.k_ir == 0 {
            return Err(Error::Validation("retriever counts k, m, k_ir must be >= 1".into()));
        }
        if invertible && self.k != self.m {
            return Err(Error::Validation(format!(
                "k ({}) must equal m ({}) when the invertible transform is used",
                self.k, self.m
            )));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Validation("alpha must lie in [0, 1]".into()));
        }
        if self.embedding_dim == 0 {
            return Err(Error::Validation("embedding_dim must be >= 1".into()));
        }
        Ok(())
    }
}

/// Weighted mean of token vectors, weights from the configured scheme.
///
/// Weights are taken per distinct term. Falls back to the unweighted mean
/// when every weight is zero, and to the zero vector for an empty bag.
pub fn embed_bag(
    bag: &TermBag,
    idx: &InvertedIndex,
    provider: &dyn EmbeddingProvider,
    cfg: &RetrieverConfig,
) -> Vec<f64> {
    let dim = provider.dim();
    let mut out = vec![0.0; dim];
    if bag.counts.is_empty() {
        log::warn!("embedding an empty document: zero vector");
        return out;
    }
    let weights: Vec<f64> = bag
        .counts
        .iter()
        .map(|&(t, tf)| idx.weight_for(t, tf, bag.len, cfg))
        .collect();
    let total: f64 = weights.iter().sum();
    let uniform = total <= 0.0;
    if uniform {
        log::debug!("all term weights are zero; falling back to the unweighted mean");
    }
    let denom = if uniform { bag.counts.len() as f64 } else { total };
    for (&(t, _), &w) in bag.counts.iter().zip(&weights) {
        let w = if uniform { 1.0 } else { w };
        for (o, v) in out.iter_mut().zip(provider.token_vector(t)) {
            *o += w * v;
        }
    }
    out.iter_mut().for_each(|o| *o /= denom);
    out
}

/// Dense vector plus unit-normalized sparse keyword vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedRepresentation {
    pub dense: Vec<f64>,
    /// (term, weight), ascending by term, L2 norm 1 unless all weights vanish
    pub keyword: Vec<(TokenId, f64)>,
}

impl FusedRepresentation {
    pub fn from_bag(
        bag: &TermBag,
        idx: &InvertedIndex,
        provider: &dyn EmbeddingProvider,
        cfg: &RetrieverConfig,
        doc_vector: Option<&[f64]>,
    ) -> Self {
        let dense = match doc_vector {
            Some(v) => v.to_vec(),
            None => embed_bag(bag, idx, provider, cfg),
        };
        let mut keyword: Vec<(TokenId, f64)> = bag
            .counts
            .iter()
            .map(|&(t, tf)| (t, idx.weight_for(t, tf, bag.len, cfg)))
            .filter(|&(_, w)| w > 0.0)
            .collect();
        let norm = keyword.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
        if norm > 0.0 {
            keyword.iter_mut().for_each(|(_, w)| *w /= norm);
        }
        Self { dense, keyword }
    }

    /// `alpha * cos(dense) + (1 - alpha) * cos(keyword)`.
    pub fn similarity(&self, other: &Self, alpha: f64) -> f64 {
        alpha * cosine(&self.dense, &other.dense) + (1.0 - alpha) * sparse_dot(&self.keyword, &other.keyword)
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}

fn sparse_dot(a: &[(TokenId, f64)], b: &[(TokenId, f64)]) -> f64 {
    let (mut i, mut j, mut s) = (0, 0, 0.0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            Ordering::Less => i += 1,
            Ordering::Greater => j += 1,
            Ordering::Equal => {
                s += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    s
}

/// Fused representations of every indexed document.
#[derive(Debug, Clone)]
pub struct FusedPool {
    ids: Vec<String>,
    reps: Vec<FusedRepresentation>,
}

impl FusedPool {
    pub fn build(idx: &InvertedIndex, provider: &dyn EmbeddingProvider, cfg: &RetrieverConfig) -> Self {
        let reps = (0..idx.n_docs())
            .into_par_iter()
            .map(|d| {
                FusedRepresentation::from_bag(idx.bag(d), idx, provider, cfg, provider.document_vector(idx.doc_id(d)))
            })
            .collect();
        Self {
            ids: idx.doc_ids().to_vec(),
            reps,
        }
    }

    pub fn from_parts(ids: Vec<String>, reps: Vec<FusedRepresentation>) -> Self {
        assert_eq!(ids.len(), reps.len());
        Self { ids, reps }
    }

    /// Keeps only the documents accepted by `keep`.
    pub fn filtered(&self, mut keep: impl FnMut(&str) -> bool) -> Self {
        let (ids, reps) = self
            .ids
            .iter()
            .zip(&self.reps)
            .filter(|(id, _)| keep(id))
            .map(|(i, r)| (i.clone(), r.clone()))
            .unzip();
        Self { ids, reps }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&FusedRepresentation> {
        self.ids.iter().position(|x| x == id).map(|i| &self.reps[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &FusedRepresentation)> {
        self.ids.iter().map(String::as_str).zip(&self.reps)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: String,
    pub score: f64,
}

/// Descending score, ascending id on ties.
pub fn rank_order(a: &Candidate, b: &Candidate) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.id.cmp(&b.id))
}

/// Top-`k` pool documents by fused similarity to `query`. `exclude` drops
/// the query's own document from the pool.
pub fn retrieve_candidates(
    query: &FusedRepresentation,
    pool: &FusedPool,
    k: usize,
    exclude: Option<&str>,
    alpha: f64,
) -> Vec<Candidate> {
    let mut scored: Vec<Candidate> = pool
        .iter()
        .filter(|(id, _)| Some(*id) != exclude)
        .map(|(id, rep)| Candidate {
            id: id.to_string(),
            score: query.similarity(rep, alpha),
        })
        .collect();
    if k > scored.len() {
        log::warn!("requested {k} candidates from a pool of {}; returning the full pool", scored.len());
    }
    scored.sort_by(rank_order);
    scored.truncate(k);
    scored
}

/// A candidate output of extraction or masking: an index label or a phrase
/// of the active term list.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TermKey {
    Label(String),
    Phrase(usize),
}

impl std::fmt::Display for TermKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TermKey::Label(l) => f.write_str(l),
            TermKey::Phrase(p) => write!(f, "phrase#{p}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredTerm {
    pub key: TermKey,
    pub score: f64,
}

/// Where candidate terms come from.
#[derive(Debug, Clone, Copy)]
pub enum TermSource<'a> {
    /// index labels of the candidate documents
    Indexes,
    /// term-list phrases occurring in the candidate documents
    MaskTerms(&'a TermList),
}

impl TermSource<'_> {
    /// Whether indexed document `doc` carries `key`.
    pub fn carries(&self, idx: &InvertedIndex, doc: usize, key: &TermKey) -> bool {
        match (self, key) {
            (TermSource::Indexes, TermKey::Label(l)) => idx.labels(doc).contains(l),
            (TermSource::MaskTerms(list), TermKey::Phrase(p)) => !list.occurrences(*p, idx.tokens(doc)).is_empty(),
            _ => false,
        }
    }

    fn terms_of(&self, idx: &InvertedIndex, doc: usize) -> Vec<TermKey> {
        match self {
            TermSource::Indexes => idx.labels(doc).iter().cloned().map(TermKey::Label).collect(),
            TermSource::MaskTerms(list) => list
                .present_in(idx.tokens(doc))
                .into_iter()
                .map(TermKey::Phrase)
                .collect(),
        }
    }

    pub fn idf(&self, idx: &InvertedIndex, key: &TermKey) -> f64 {
        match (self, key) {
            (TermSource::Indexes, TermKey::Label(l)) => idx.label_idf(l),
            (TermSource::MaskTerms(list), TermKey::Phrase(p)) => {
                let toks = list.tokens(*p);
                toks.iter().map(|&t| idx.idf(t)).sum::<f64>() / toks.len() as f64
            }
            _ => 0.0,
        }
    }
}

/// Top-`m` candidate terms scored by summed IDF over the candidate documents
/// that carry them (equivalently `count * idf`).
pub fn retrieve_candidate_terms(
    candidates: &[Candidate],
    idx: &InvertedIndex,
    source: TermSource<'_>,
    m: usize,
) -> Result<Vec<ScoredTerm>> {
    let mut counts: BTreeMap<TermKey, usize> = BTreeMap::new();
    for c in candidates {
        let doc = idx.position(&c.id).ok_or_else(|| Error::Unknown {
            kind: "document",
            id: c.id.clone(),
        })?;
        for key in source.terms_of(idx, doc) {
            *counts.entry(key).or_default() += 1;
        }
    }
    if counts.is_empty() {
        return Err(Error::EmptyCandidatePool {
            candidates: candidates.len(),
        });
    }
    let mut scored: Vec<ScoredTerm> = counts
        .into_iter()
        .map(|(key, n)| {
            let score = n as f64 * source.idf(idx, &key);
            ScoredTerm { key, score }
        })
        .collect();
    scored.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.key.cmp(&b.key)));
    scored.truncate(m);
    Ok(scored)
}
