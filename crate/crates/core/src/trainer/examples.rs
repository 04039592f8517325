use std::collections::BTreeSet;
use std::sync::Arc;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::vocab::MASK;
use crate::corpus::{CorpusStore, Document, Qrels, TermList, TokenId, Topic, Vocabulary};
use crate::error::{Error, Result};
use crate::retriever::{
    retrieve_candidate_terms, retrieve_candidates, Candidate, EmbeddingProvider, FusedPool, FusedRepresentation,
    InvertedIndex, RetrieverConfig, ScoredTerm, TermBag, TermKey, TermSource, TokenTable,
};
use crate::transform::{build_transform, TransformConfig, TransformMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Ssl = 0,
    Ie = 1,
    Ir = 2,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Ssl, Task::Ie, Task::Ir];

    pub fn name(self) -> &'static str {
        match self {
            Task::Ssl => "ssl",
            Task::Ie => "ie",
            Task::Ir => "ir",
        }
    }
}

/// Why an example could not be built. Not an error: the caller counts it
/// and moves on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Skip {
    NoPhrase,
    Unlabeled,
    Unjudged,
    NoCandidateTerms,
    RankDeficient,
    Singular,
}

impl Skip {
    pub fn name(self) -> &'static str {
        match self {
            Skip::NoPhrase => "no_phrase",
            Skip::Unlabeled => "unlabeled",
            Skip::Unjudged => "unjudged",
            Skip::NoCandidateTerms => "no_candidate_terms",
            Skip::RankDeficient => "rank_deficient",
            Skip::Singular => "singular",
        }
    }
}

pub type Built = std::result::Result<TaskExample, Skip>;

/// One training or evaluation instance, self-contained.
#[derive(Debug, Clone)]
pub struct TaskExample {
    pub task: Task,
    /// document or topic id the example was built from
    pub source: String,
    pub query: Vec<TokenId>,
    /// candidate documents in ranker order; for extraction and masking these
    /// are the rows of `transform`
    pub candidates: Vec<String>,
    pub candidate_tokens: Vec<Vec<TokenId>>,
    /// retrieval score per candidate
    pub retrieval_scores: Vec<f64>,
    /// columns of `transform`, with their IDF-sum scores
    pub terms: Vec<ScoredTerm>,
    /// full gold set; for extraction this may exceed `terms`
    pub gold: BTreeSet<TermKey>,
    /// gold entries that are not candidate terms
    pub shortfall: usize,
    /// per term (tasks 0, 1) or per candidate (task 2)
    pub targets: Vec<f64>,
    pub transform: Option<TransformMatrix>,
}

impl TaskExample {
    pub fn term_keys(&self) -> Vec<TermKey> {
        self.terms.iter().map(|t| t.key.clone()).collect()
    }
}

/// Retrieval context over one document pool.
#[derive(Clone)]
pub struct Pipeline {
    pub vocab: Arc<Vocabulary>,
    pub index: InvertedIndex,
    pub pool: FusedPool,
    labeled: FusedPool,
    pub provider: Arc<dyn EmbeddingProvider>,
    pub retriever: RetrieverConfig,
    pub transform: TransformConfig,
    pub termlist: Option<Arc<TermList>>,
    /// documents beyond K kept as the rank-repair reserve
    pub reserve: usize,
}

impl Pipeline {
    /// Indexes `pool` with a frozen random token table.
    pub fn build(
        pool: &CorpusStore,
        vocab: Arc<Vocabulary>,
        termlist: Option<Arc<TermList>>,
        retriever: RetrieverConfig,
        transform: TransformConfig,
    ) -> Result<Self> {
        let provider: Arc<dyn EmbeddingProvider> =
            Arc::new(TokenTable::random(vocab.len(), retriever.embedding_dim, retriever.embedding_seed));
        Self::with_provider(pool, vocab, termlist, retriever, transform, provider)
    }

    pub fn with_provider(
        pool: &CorpusStore,
        vocab: Arc<Vocabulary>,
        termlist: Option<Arc<TermList>>,
        retriever: RetrieverConfig,
        transform: TransformConfig,
        provider: Arc<dyn EmbeddingProvider>,
    ) -> Result<Self> {
        let index = InvertedIndex::build(pool, &vocab)?;
        let fused = FusedPool::build(&index, provider.as_ref(), &retriever);
        let labeled = fused.filtered(|id| index.position(id).is_some_and(|p| !index.labels(p).is_empty()));
        Ok(Self {
            vocab,
            index,
            pool: fused,
            labeled,
            provider,
            reserve: 8 * retriever.k.max(1),
            retriever,
            transform,
            termlist,
        })
    }

    pub fn tokenize(&self, text: &str) -> Vec<TokenId> {
        self.vocab.tokenize(text)
    }

    /// Fused representation of an arbitrary token sequence against this pool.
    pub fn represent(&self, tokens: &[TokenId]) -> FusedRepresentation {
        FusedRepresentation::from_bag(
            &TermBag::from_tokens(tokens),
            &self.index,
            self.provider.as_ref(),
            &self.retriever,
            None,
        )
    }

    /// Query representation of a document: precomputed when it is in the
    /// pool, built from its tokens otherwise.
    fn represent_doc(&self, id: &str, tokens: &[TokenId]) -> FusedRepresentation {
        match (self.index.position(id), self.pool.get(id)) {
            (Some(_), Some(rep)) => rep.clone(),
            _ => self.represent(tokens),
        }
    }

    pub fn retrieve(&self, tokens: &[TokenId], k: usize, exclude: Option<&str>) -> Vec<Candidate> {
        retrieve_candidates(&self.represent(tokens), &self.pool, k, exclude, self.retriever.alpha)
    }

    pub fn doc_tokens(&self, id: &str) -> Result<&[TokenId]> {
        let p = self.index.position(id).ok_or_else(|| Error::Unknown {
            kind: "document",
            id: id.to_string(),
        })?;
        Ok(self.index.tokens(p))
    }

    fn carries(&self, source: TermSource<'_>, doc: &str, key: &TermKey) -> bool {
        self.index.position(doc).is_some_and(|p| source.carries(&self.index, p, key))
    }

    /// Candidate terms from the top `k` of `ranked`, then `T` over `ranked`
    /// with the tail as reserve.
    fn terms_and_transform(
        &self,
        ranked: &[Candidate],
        source: TermSource<'_>,
    ) -> Result<std::result::Result<(Vec<ScoredTerm>, TransformMatrix), Skip>> {
        let k = self.retriever.k.min(ranked.len());
        let terms = match retrieve_candidate_terms(&ranked[..k], &self.index, source, self.retriever.m) {
            Ok(t) => t,
            Err(Error::EmptyCandidatePool { .. }) => return Ok(Err(Skip::NoCandidateTerms)),
            Err(e) => return Err(e),
        };
        let keys: Vec<TermKey> = terms.iter().map(|t| t.key.clone()).collect();
        let ids: Vec<String> = ranked.iter().map(|c| c.id.clone()).collect();
        match build_transform(&ids, &keys, |d, key| self.carries(source, d, key), &self.transform) {
            Ok(t) => Ok(Ok((terms, t))),
            Err(Error::RankDeficient { rank, size }) => {
                log::debug!("transform rank {rank} of {size}; example skipped");
                Ok(Err(Skip::RankDeficient))
            }
            Err(Error::Singular { .. }) => Ok(Err(Skip::Singular)),
            Err(e) => Err(e),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        &self,
        task: Task,
        source: &str,
        query: Vec<TokenId>,
        ranked: &[Candidate],
        terms: Vec<ScoredTerm>,
        t: TransformMatrix,
        gold: BTreeSet<TermKey>,
    ) -> Result<TaskExample> {
        let candidates = t.rows().to_vec();
        let candidate_tokens = candidates
            .iter()
            .map(|c| self.doc_tokens(c).map(<[TokenId]>::to_vec))
            .collect::<Result<Vec<_>>>()?;
        let retrieval_scores = candidates
            .iter()
            .map(|c| ranked.iter().find(|r| &r.id == c).map_or(0.0, |r| r.score))
            .collect();
        let targets: Vec<f64> = terms.iter().map(|s| if gold.contains(&s.key) { 1.0 } else { 0.0 }).collect();
        let shortfall = gold.iter().filter(|g| !terms.iter().any(|s| &s.key == *g)).count();
        Ok(TaskExample {
            task,
            source: source.to_string(),
            query,
            candidates,
            candidate_tokens,
            retrieval_scores,
            terms,
            gold,
            shortfall,
            targets,
            transform: Some(t),
        })
    }
}

/// Replaces every occurrence of each chosen phrase with one [MASK].
/// Overlapping occurrences keep the earliest.
pub fn mask_phrases(tokens: &[TokenId], list: &TermList, phrases: &[usize]) -> Vec<TokenId> {
    let mut spans: Vec<(usize, usize)> = phrases
        .iter()
        .flat_map(|&p| {
            let n = list.tokens(p).len();
            list.occurrences(p, tokens).into_iter().map(move |s| (s, s + n))
        })
        .collect();
    spans.sort_unstable();
    let mut out = Vec::with_capacity(tokens.len());
    let mut i = 0;
    for (s, e) in spans {
        if s < i {
            continue;
        }
        out.extend_from_slice(&tokens[i..s]);
        out.push(MASK);
        i = e;
    }
    out.extend_from_slice(&tokens[i..]);
    out
}

/// Masked-term example: the masked document is the query and the masked
/// phrases are the gold terms.
pub fn make_ssl_example(pipe: &Pipeline, doc_id: &str, tokens: &[TokenId], n_mask: usize, rng: &mut impl Rng) -> Result<Built> {
    let list = pipe
        .termlist
        .as_deref()
        .ok_or_else(|| Error::Validation("masking needs a term list".into()))?;
    let present = list.present_in(tokens);
    if present.is_empty() {
        return Ok(Err(Skip::NoPhrase));
    }
    let count = rng.gen_range(1..=n_mask.max(1).min(present.len()));
    let mut chosen: Vec<usize> = sample(rng, present.len(), count).into_iter().map(|i| present[i]).collect();
    chosen.sort_unstable();
    let query = mask_phrases(tokens, list, &chosen);
    let ranked = retrieve_candidates(
        &pipe.represent(&query),
        &pipe.pool,
        pipe.retriever.k + pipe.reserve,
        Some(doc_id),
        pipe.retriever.alpha,
    );
    let source = TermSource::MaskTerms(list);
    let (terms, t) = match pipe.terms_and_transform(&ranked, source)? {
        Ok(x) => x,
        Err(skip) => return Ok(Err(skip)),
    };
    let gold = chosen.into_iter().map(TermKey::Phrase).collect();
    Ok(Ok(pipe.finish(Task::Ssl, doc_id, query, &ranked, terms, t, gold)?))
}

/// Index-extraction example for `doc`: candidates are labeled pool
/// documents, candidate terms their labels.
pub fn make_ie_example(pipe: &Pipeline, doc: &Document) -> Result<Built> {
    if doc.labels.is_empty() {
        return Ok(Err(Skip::Unlabeled));
    }
    let tokens = match pipe.index.position(&doc.id) {
        Some(p) => pipe.index.tokens(p).to_vec(),
        None => pipe.tokenize(&doc.text()),
    };
    let query_rep = pipe.represent_doc(&doc.id, &tokens);
    let ranked = retrieve_candidates(
        &query_rep,
        &pipe.labeled,
        pipe.retriever.k + pipe.reserve,
        Some(&doc.id),
        pipe.retriever.alpha,
    );
    if ranked.is_empty() {
        return Ok(Err(Skip::NoCandidateTerms));
    }
    let (terms, t) = match pipe.terms_and_transform(&ranked, TermSource::Indexes)? {
        Ok(x) => x,
        Err(skip) => return Ok(Err(skip)),
    };
    let gold = doc.labels.iter().cloned().map(TermKey::Label).collect();
    Ok(Ok(pipe.finish(Task::Ie, &doc.id, tokens, &ranked, terms, t, gold)?))
}

/// Question-retrieval example: top-K' pool documents, target 1 for any
/// judged grade of at least 1.
pub fn make_ir_example(pipe: &Pipeline, topic: &Topic, qrels: &Qrels, prepend_concept: bool) -> Result<Built> {
    let Some(judged) = qrels.judged(&topic.id).filter(|j| !j.is_empty()) else {
        return Ok(Err(Skip::Unjudged));
    };
    let query = pipe.tokenize(&topic.query_text(prepend_concept));
    if query.is_empty() {
        return Err(Error::Validation(format!("topic `{}` has no tokens", topic.id)));
    }
    let ranked = pipe.retrieve(&query, pipe.retriever.k_ir, None);
    let candidates: Vec<String> = ranked.iter().map(|c| c.id.clone()).collect();
    let candidate_tokens = candidates
        .iter()
        .map(|c| pipe.doc_tokens(c).map(<[TokenId]>::to_vec))
        .collect::<Result<Vec<_>>>()?;
    let targets = candidates
        .iter()
        .map(|c| if judged.get(c).is_some_and(|&g| g >= 1) { 1.0 } else { 0.0 })
        .collect();
    Ok(Ok(TaskExample {
        task: Task::Ir,
        source: topic.id.clone(),
        query,
        retrieval_scores: ranked.iter().map(|c| c.score).collect(),
        candidates,
        candidate_tokens,
        terms: Vec::new(),
        gold: BTreeSet::new(),
        shortfall: 0,
        targets,
        transform: None,
    }))
}
