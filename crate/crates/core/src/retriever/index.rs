use std::collections::{BTreeMap, BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::vocab::Vocabulary;
use crate::corpus::{CorpusStore, TokenId};
use crate::error::{Error, Result};
use crate::retriever::{RetrieverConfig, Weighting};

/// Term counts of one tokenized text, special tokens excluded.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TermBag {
    /// (term, count), ascending by term
    pub counts: Vec<(TokenId, u32)>,
    pub len: usize,
}

impl TermBag {
    pub fn from_tokens(tokens: &[TokenId]) -> Self {
        let mut m: BTreeMap<TokenId, u32> = BTreeMap::new();
        let mut len = 0;
        for &t in tokens {
            if Vocabulary::is_special(t) {
                continue;
            }
            *m.entry(t).or_default() += 1;
            len += 1;
        }
        Self {
            counts: m.into_iter().collect(),
            len,
        }
    }

    pub fn tf(&self, term: TokenId) -> u32 {
        self.counts
            .binary_search_by_key(&term, |&(t, _)| t)
            .map_or(0, |i| self.counts[i].1)
    }
}

/// Sparse term statistics over a tokenized corpus.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InvertedIndex {
    doc_ids: Vec<String>,
    #[serde(skip)]
    positions: HashMap<String, usize>,
    tokens: Vec<Vec<TokenId>>,
    bags: Vec<TermBag>,
    df: HashMap<TokenId, u32>,
    labels: Vec<BTreeSet<String>>,
    label_df: BTreeMap<String, u32>,
    avgdl: f64,
}

impl InvertedIndex {
    pub fn build(corpus: &CorpusStore, vocab: &Vocabulary) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let tokens: Vec<Vec<TokenId>> = corpus.documents().par_iter().map(|d| vocab.tokenize(&d.text())).collect();
        let bags: Vec<TermBag> = tokens.par_iter().map(|t| TermBag::from_tokens(t)).collect();
        if let Some(i) = bags.iter().position(|b| b.len == 0) {
            return Err(Error::Validation(format!(
                "document `{}` has no indexable tokens",
                corpus.doc(i).id
            )));
        }
        // per-partition document frequencies, merged associatively
        let df = bags
            .par_iter()
            .fold(HashMap::new, |mut acc: HashMap<TokenId, u32>, bag| {
                for &(t, _) in &bag.counts {
                    *acc.entry(t).or_default() += 1;
                }
                acc
            })
            .reduce(HashMap::new, |mut a, b| {
                for (t, c) in b {
                    *a.entry(t).or_default() += c;
                }
                a
            });
        let labels: Vec<BTreeSet<String>> = corpus.iter().map(|d| d.labels.clone()).collect();
        let mut label_df: BTreeMap<String, u32> = BTreeMap::new();
        for set in &labels {
            for l in set {
                *label_df.entry(l.clone()).or_default() += 1;
            }
        }
        let avgdl = bags.iter().map(|b| b.len as f64).sum::<f64>() / bags.len() as f64;
        let doc_ids: Vec<String> = corpus.iter().map(|d| d.id.clone()).collect();
        let mut idx = Self {
            positions: HashMap::new(),
            doc_ids,
            tokens,
            bags,
            df,
            labels,
            label_df,
            avgdl,
        };
        idx.rebuild_positions();
        Ok(idx)
    }

    fn rebuild_positions(&mut self) {
        self.positions = self.doc_ids.iter().enumerate().map(|(i, d)| (d.clone(), i)).collect();
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let mut idx: Self = serde_json::from_str(s)?;
        idx.rebuild_positions();
        Ok(idx)
    }

    pub fn n_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    pub fn df(&self, term: TokenId) -> u32 {
        self.df.get(&term).copied().unwrap_or(0)
    }

    pub fn tf(&self, term: TokenId, doc: usize) -> u32 {
        self.bags[doc].tf(term)
    }

    pub fn doc_len(&self, doc: usize) -> usize {
        self.bags[doc].len
    }

    pub fn position(&self, doc_id: &str) -> Option<usize> {
        self.positions.get(doc_id).copied()
    }

    pub fn doc_id(&self, pos: usize) -> &str {
        &self.doc_ids[pos]
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn tokens(&self, doc: usize) -> &[TokenId] {
        &self.tokens[doc]
    }

    pub fn bag(&self, doc: usize) -> &TermBag {
        &self.bags[doc]
    }

    pub fn labels(&self, doc: usize) -> &BTreeSet<String> {
        &self.labels[doc]
    }

    pub fn label_df(&self, label: &str) -> u32 {
        self.label_df.get(label).copied().unwrap_or(0)
    }

    /// Smoothed IDF `ln((1+N)/(1+df))`.
    pub fn idf(&self, term: TokenId) -> f64 {
        smoothed_idf(self.n_docs(), self.df(term))
    }

    pub fn label_idf(&self, label: &str) -> f64 {
        smoothed_idf(self.n_docs(), self.label_df(label))
    }

    pub fn bm25_idf(&self, term: TokenId) -> f64 {
        let n = self.n_docs() as f64;
        let df = self.df(term) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// Weight of `term` in indexed document `doc`.
    pub fn term_weight(&self, term: TokenId, doc: usize, cfg: &RetrieverConfig) -> f64 {
        let bag = &self.bags[doc];
        self.weight_for(term, bag.tf(term), bag.len, cfg)
    }

    /// Weight of a term with frequency `tf` in a text of `len` tokens, using
    /// this index's collection statistics. Queries go through here too.
    pub fn weight_for(&self, term: TokenId, tf: u32, len: usize, cfg: &RetrieverConfig) -> f64 {
        if tf == 0 {
            return 0.0;
        }
        let tf = tf as f64;
        match cfg.weighting {
            Weighting::Tfidf => tf * self.idf(term),
            Weighting::Bm25 => {
                let norm = cfg.k1 * (1.0 - cfg.b + cfg.b * len as f64 / self.avgdl);
                self.bm25_idf(term) * tf * (cfg.k1 + 1.0) / (tf + norm)
            }
        }
    }
}

pub(crate) fn smoothed_idf(n_docs: usize, df: u32) -> f64 {
    ((1.0 + n_docs as f64) / (1.0 + df as f64)).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Document;
    use proptest::prelude::*;

    fn corpus(texts: &[&str]) -> (CorpusStore, Vocabulary) {
        let docs = texts
            .iter()
            .enumerate()
            .map(|(i, t)| Document {
                id: format!("d{i}"),
                title: t.to_string(),
                abstract_text: String::new(),
                labels: Default::default(),
                date: None,
            })
            .collect();
        let vocab = Vocabulary::with_words(["a", "b", "c", "d", "e"]).unwrap();
        (CorpusStore::from_documents(docs).unwrap(), vocab)
    }

    #[test]
    fn single_doc_counts() {
        let (c, v) = corpus(&["a a b"]);
        let idx = InvertedIndex::build(&c, &v).unwrap();
        let (a, b) = (v.id("a").unwrap(), v.id("b").unwrap());
        assert_eq!(idx.tf(a, 0), 2);
        assert_eq!(idx.tf(b, 0), 1);
        assert_eq!((idx.df(a), idx.df(b)), (1, 1));
        assert_eq!(idx.avgdl(), 3.0);
    }

    #[test]
    fn two_doc_counts() {
        let (c, v) = corpus(&["a", "a b"]);
        let idx = InvertedIndex::build(&c, &v).unwrap();
        assert_eq!(idx.df(v.id("a").unwrap()), 2);
        assert_eq!(idx.df(v.id("b").unwrap()), 1);
        assert_eq!(idx.avgdl(), 1.5);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let v = Vocabulary::with_words(["a"]).unwrap();
        let c = CorpusStore::from_documents(vec![]).unwrap();
        assert!(matches!(InvertedIndex::build(&c, &v), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn absent_term_weighs_zero() {
        let (c, v) = corpus(&["a", "b"]);
        let idx = InvertedIndex::build(&c, &v).unwrap();
        for weighting in [Weighting::Tfidf, Weighting::Bm25] {
            let cfg = RetrieverConfig { weighting, ..Default::default() };
            assert_eq!(idx.term_weight(v.id("b").unwrap(), 0, &cfg), 0.0);
        }
    }

    #[test]
    fn single_doc_tfidf_is_zero() {
        let (c, v) = corpus(&["a a a"]);
        let idx = InvertedIndex::build(&c, &v).unwrap();
        let cfg = RetrieverConfig { weighting: Weighting::Tfidf, ..Default::default() };
        assert_eq!(idx.term_weight(v.id("a").unwrap(), 0, &cfg), 0.0);
    }

    #[test]
    fn bm25_matches_hand_evaluation() {
        // tf=2, |d|=4, avgdl=4, N=10, df=3, k1=1.2, b=0.75
        // 10 docs of 4 tokens; term "a" twice in d0, once in d1 and d2.
        let mut texts = vec!["a a b c", "a b c d", "a b c d"];
        texts.extend(std::iter::repeat_n("b c d e", 7));
        let (c, v) = corpus(&texts);
        let idx = InvertedIndex::build(&c, &v).unwrap();
        let cfg = RetrieverConfig { weighting: Weighting::Bm25, k1: 1.2, b: 0.75, ..Default::default() };
        let idf = (1.0f64 + (10.0 - 3.0 + 0.5) / (3.0 + 0.5)).ln();
        let expect = idf * 2.0 * 2.2 / (2.0 + 1.2 * (1.0 - 0.75 + 0.75 * 4.0 / 4.0));
        let got = idx.term_weight(v.id("a").unwrap(), 0, &cfg);
        assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
    }

    proptest! {
        #[test]
        fn bm25_monotone_in_tf_and_df(tf in 1u32..20, len in 1usize..40) {
            let (c, v) = corpus(&["a b", "a c", "b c", "c d", "d e"]);
            let idx = InvertedIndex::build(&c, &v).unwrap();
            let cfg = RetrieverConfig { weighting: Weighting::Bm25, ..Default::default() };
            let (a, e) = (v.id("a").unwrap(), v.id("e").unwrap());
            // a has df 2, e has df 1
            prop_assert!(idx.weight_for(a, tf + 1, len, &cfg) > idx.weight_for(a, tf, len, &cfg));
            prop_assert!(idx.weight_for(e, tf, len, &cfg) > idx.weight_for(a, tf, len, &cfg));
        }
    }
}
