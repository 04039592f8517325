//! Seeded synthetic corpora with planted keyword clusters.
//!
//! Every cluster owns a few core words. A document draws one or two
//! clusters and core words of each, plus several words of one decoy group.
//! Its labels are exactly its clusters. Decoy groups are independent of
//! clusters and documents of one group overlap more than members of one
//! cluster do, so lexical retrieval is pulled towards documents with
//! unrelated labels.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use chrono::{Duration, NaiveDate};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{save_topics, CorpusStore, Document, HierarchyTree, Qrels, TermList, Topic, Vocabulary};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub docs: usize,
    pub clusters: usize,
    pub core_words: usize,
    /// core words drawn per member cluster
    pub core_per_doc: usize,
    pub decoy_groups: usize,
    /// words per decoy group
    pub decoy_words: usize,
    pub decoys_per_doc: usize,
    pub two_cluster_prob: f64,
    /// retrieval topics, spread round-robin over clusters
    pub topics: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            docs: 500,
            clusters: 10,
            core_words: 2,
            core_per_doc: 2,
            decoy_groups: 10,
            decoy_words: 5,
            decoys_per_doc: 4,
            two_cluster_prob: 0.2,
            topics: 20,
            seed: 5,
        }
    }
}

pub struct SynthBundle {
    pub corpus: CorpusStore,
    pub vocab: Arc<Vocabulary>,
    pub hierarchy: HierarchyTree,
    /// `(child, parent)` edges of the hierarchy
    pub edges: Vec<(String, String)>,
    /// first core word of every cluster; masking one leaves the rest of
    /// its cluster as evidence
    pub termlist: Arc<TermList>,
    pub topics: Vec<Topic>,
    pub qrels: Qrels,
    /// planted cluster of each topic
    pub topic_clusters: Vec<usize>,
}

/// File names written by [`SynthBundle::write`].
pub const FILES: [(&str, &str); 6] = [
    ("corpus", "corpus.jsonl"),
    ("vocab", "vocab.txt"),
    ("hierarchy", "hierarchy.tsv"),
    ("termlist", "termlist.txt"),
    ("topics", "topics.jsonl"),
    ("qrels", "qrels.txt"),
];

impl SynthBundle {
    /// Writes every input file the CLI reads into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.corpus.save(dir.join("corpus.jsonl"))?;
        self.vocab.save(dir.join("vocab.txt"))?;
        let edges: String = self.edges.iter().map(|(c, p)| format!("{c}\t{p}\n")).collect();
        let phrases: String = (0..self.termlist.len()).map(|i| format!("{}\n", self.termlist.phrase(i))).collect();
        for (name, text) in [("hierarchy.tsv", edges), ("termlist.txt", phrases)] {
            let path = dir.join(name);
            fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        save_topics(&self.topics, dir.join("topics.jsonl"))?;
        self.qrels.save(dir.join("qrels.txt"))
    }
}

pub fn core_word(c: usize, j: usize) -> String {
    format!("c{c}k{j}")
}

pub fn decoy_word(g: usize, j: usize) -> String {
    format!("z{g}w{j}")
}

pub fn label(c: usize) -> String {
    format!("L{c}")
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthBundle> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut words: Vec<String> = Vec::new();
    for c in 0..cfg.clusters {
        words.extend((0..cfg.core_words).map(|j| core_word(c, j)));
    }
    for g in 0..cfg.decoy_groups {
        words.extend((0..cfg.decoy_words).map(|j| decoy_word(g, j)));
    }
    let vocab = Arc::new(Vocabulary::with_words(words)?);

    let start = NaiveDate::from_ymd_opt(2019, 1, 1).expect("valid date");
    let core_take = cfg.core_per_doc.min(cfg.core_words);
    let all_core: Vec<usize> = (0..cfg.core_words).collect();
    let all_decoy: Vec<usize> = (0..cfg.decoy_words).collect();
    let mut docs = Vec::with_capacity(cfg.docs);
    let mut members: Vec<BTreeSet<usize>> = Vec::with_capacity(cfg.docs);
    for i in 0..cfg.docs {
        let first = rng.gen_range(0..cfg.clusters);
        let mut cs = BTreeSet::from([first]);
        if cfg.clusters > 1 && rng.gen_bool(cfg.two_cluster_prob) {
            loop {
                let c = rng.gen_range(0..cfg.clusters);
                if c != first {
                    cs.insert(c);
                    break;
                }
            }
        }
        let mut toks: Vec<String> = Vec::new();
        for &c in &cs {
            toks.extend(all_core.choose_multiple(&mut rng, core_take).map(|&j| core_word(c, j)));
        }
        if cfg.decoy_groups > 0 {
            let g = rng.gen_range(0..cfg.decoy_groups);
            toks.extend(
                all_decoy
                    .choose_multiple(&mut rng, cfg.decoys_per_doc.min(cfg.decoy_words))
                    .map(|&j| decoy_word(g, j)),
            );
        }
        toks.shuffle(&mut rng);
        let split = toks.len() / 3;
        docs.push(Document {
            id: format!("D{i:04}"),
            title: toks[..split].join(" "),
            abstract_text: toks[split..].join(" "),
            labels: cs.iter().map(|&c| label(c)).collect(),
            date: Some(start + Duration::days(i as i64)),
        });
        members.push(cs);
    }
    let corpus = CorpusStore::from_documents(docs)?;

    // leaves grouped in pairs under parent nodes
    let edges: Vec<(String, String)> = (0..cfg.clusters).map(|c| (label(c), format!("G{}", c / 2))).collect();
    let hierarchy = HierarchyTree::from_edges(&edges, None)?;

    let phrases: Vec<String> = (0..cfg.clusters).map(|c| core_word(c, 0)).collect();
    let termlist = Arc::new(TermList::new(&phrases, &vocab)?);

    let mut topics = Vec::with_capacity(cfg.topics);
    let mut topic_clusters = Vec::with_capacity(cfg.topics);
    let mut qrels = Qrels::new();
    for t in 0..cfg.topics {
        let c = t % cfg.clusters;
        let mut q: Vec<String> = all_core.choose_multiple(&mut rng, 2.min(cfg.core_words)).map(|&j| core_word(c, j)).collect();
        if cfg.decoy_groups > 0 {
            let g = rng.gen_range(0..cfg.decoy_groups);
            q.extend(all_decoy.choose_multiple(&mut rng, 2.min(cfg.decoy_words)).map(|&j| decoy_word(g, j)));
        }
        q.shuffle(&mut rng);
        let id = format!("T{t:02}");
        topics.push(Topic {
            id: id.clone(),
            concept: String::new(),
            question: q.join(" "),
            narrative: format!("documents about cluster {c}"),
        });
        topic_clusters.push(c);
        for (d, cs) in corpus.iter().zip(&members) {
            let grade = match (cs.contains(&c), cs.len()) {
                (false, _) => 0,
                (true, 1) => 2,
                (true, _) => 1,
            };
            qrels.insert(&id, &d.id, grade)?;
        }
    }

    Ok(SynthBundle {
        corpus,
        vocab,
        hierarchy,
        edges,
        termlist,
        topics,
        qrels,
        topic_clusters,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_follow_clusters() {
        let b = generate(&SynthConfig {
            docs: 60,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(b.corpus.len(), 60);
        for d in b.corpus.iter() {
            let toks = b.vocab.tokenize(&d.text());
            for l in &d.labels {
                let c: usize = l[1..].parse().unwrap();
                let core: Vec<_> = (0..2).map(|j| b.vocab.id(&core_word(c, j)).unwrap()).collect();
                assert_eq!(toks.iter().filter(|t| core.contains(t)).count(), 2);
            }
        }
        b.corpus.validate_labels(&b.hierarchy).unwrap();
    }

    #[test]
    fn same_seed_same_bundle() {
        let cfg = SynthConfig {
            docs: 40,
            ..Default::default()
        };
        let (a, b) = (generate(&cfg).unwrap(), generate(&cfg).unwrap());
        assert_eq!(a.corpus.documents(), b.corpus.documents());
        assert_eq!(a.topics, b.topics);
    }

    #[test]
    fn qrels_mark_cluster_members() {
        let b = generate(&SynthConfig {
            docs: 50,
            topics: 3,
            ..Default::default()
        })
        .unwrap();
        for (t, &c) in b.topics.iter().zip(&b.topic_clusters) {
            for d in b.corpus.iter() {
                let rel = b.qrels.grade(&t.id, &d.id).unwrap() >= 1;
                assert_eq!(rel, d.labels.contains(&label(c)));
            }
        }
    }
}
