use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde_json::json;

use crate::corpus::vocab::normalize;
use crate::corpus::{load_topics, CorpusStore, Document, HierarchyTree, Qrels, TermList, TokenId, Topic, Vocabulary};
use crate::error::{Error, Result};
use crate::interpret::{build_timeline, extract_attributions, quantize_highlights, render_report, Report};
use crate::metrics::EvalReport;
use crate::ranker::{AttentionMode, RankerModel};
use crate::retriever::{retrieve_candidates, FusedPool, InvertedIndex, TokenTable};
use crate::selfcheck;
use crate::trainer::{
    build_examples, chronological_split, config_hash, extraction_report, gold_sets, label_predictions, make_ie_example,
    make_ir_example, model_term_scores, predict_terms, ranking_report, rerank_run, retrieval_run, retrieval_term_scores,
    train as train_model, Pipeline, Skip, TaskExample, TrainData, TrainLog,
};
use crate::transform::{optimize_threshold, ThresholdPolicy};

use super::config::RunConfig;
use super::manifest::{Manifest, Timing};

pub const TRAIN_IDS: &str = "train_ids.txt";
pub const TEST_IDS: &str = "test_ids.txt";

/// Output directory and manifest of one command.
struct Run {
    out: PathBuf,
    manifest: Manifest,
    start: Instant,
}

impl Run {
    fn start(cfg: &RunConfig, command: &str) -> Result<Self> {
        let out = cfg.require("paths.out", &cfg.paths.out)?.to_path_buf();
        Self::at(cfg, command, out)
    }

    fn at(cfg: &RunConfig, command: &str, out: PathBuf) -> Result<Self> {
        fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        let mut manifest = Manifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            status: "ok".into(),
            config_hash: config_hash(cfg)?,
            seed: cfg.schedule.seed,
            timing: Timing {
                started_at: chrono::Utc::now().to_rfc3339(),
                wall_clock_secs: 0.0,
            },
            ..Default::default()
        };
        let p = &cfg.paths;
        for (key, path) in [
            ("paths.corpus", &p.corpus),
            ("paths.vocab", &p.vocab),
            ("paths.hierarchy", &p.hierarchy),
            ("paths.termlist", &p.termlist),
            ("paths.topics", &p.topics),
            ("paths.qrels", &p.qrels),
            ("paths.model", &p.model),
            ("paths.threshold", &p.threshold),
            ("paths.index", &p.index),
        ] {
            manifest.add_input(key, path.as_deref())?;
        }
        if let Some(dir) = &p.split {
            for name in [TRAIN_IDS, TEST_IDS] {
                manifest.add_input(&format!("paths.split/{name}"), Some(&dir.join(name)))?;
            }
        }
        Ok(Self {
            out,
            manifest,
            start: Instant::now(),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn wrote(&mut self, name: &str) -> Result<()> {
        self.manifest.add_output(&self.out, name)
    }

    fn finish(mut self, summary: serde_json::Value) -> Result<()> {
        self.manifest.summary = summary;
        self.manifest.timing.wall_clock_secs = self.start.elapsed().as_secs_f64();
        self.manifest.save(&self.out)
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_ids(path: &Path, ids: &[String]) -> Result<()> {
    let mut text = ids.join("\n");
    if !ids.is_empty() {
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_ids(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}

// inputs

fn load_corpus(cfg: &RunConfig) -> Result<CorpusStore> {
    let corpus = CorpusStore::load(cfg.require("paths.corpus", &cfg.paths.corpus)?)?;
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(corpus)
}

/// Every distinct normalized word of the corpus, sorted, after the specials.
pub fn vocabulary_from_corpus(corpus: &CorpusStore) -> Result<Vocabulary> {
    let words: BTreeSet<String> = corpus.iter().flat_map(|d| normalize(&d.text())).collect();
    Vocabulary::with_words(words)
}

fn load_vocab(cfg: &RunConfig, corpus: &CorpusStore) -> Result<Arc<Vocabulary>> {
    Ok(Arc::new(match &cfg.paths.vocab {
        Some(p) => Vocabulary::load(p)?,
        None => vocabulary_from_corpus(corpus)?,
    }))
}

fn load_termlist(cfg: &RunConfig, vocab: &Vocabulary) -> Result<Option<Arc<TermList>>> {
    cfg.paths
        .termlist
        .as_ref()
        .map(|p| TermList::load(p, vocab).map(Arc::new))
        .transpose()
}

fn load_hierarchy(cfg: &RunConfig, corpus: &CorpusStore) -> Result<Option<HierarchyTree>> {
    let Some(p) = &cfg.paths.hierarchy else {
        return Ok(None);
    };
    let tree = HierarchyTree::load(p, None)?;
    corpus.validate_labels(&tree)?;
    Ok(Some(tree))
}

fn split_ids(cfg: &RunConfig, corpus: &CorpusStore) -> Result<(Vec<String>, Vec<String>)> {
    match &cfg.paths.split {
        Some(dir) => {
            let train = read_ids(&dir.join(TRAIN_IDS))?;
            let test = read_ids(&dir.join(TEST_IDS))?;
            for id in train.iter().chain(&test) {
                if corpus.get(id).is_none() {
                    return Err(Error::Unknown {
                        kind: "document",
                        id: id.clone(),
                    });
                }
            }
            Ok((train, test))
        }
        None => chronological_split(corpus, cfg.split.fraction),
    }
}

fn documents(corpus: &CorpusStore, ids: &[String]) -> Vec<Document> {
    ids.iter().filter_map(|id| corpus.get(id).cloned()).collect()
}

/// Topics in id order, split by `topic_fraction`.
fn split_topics(mut topics: Vec<Topic>, fraction: f64) -> (Vec<Topic>, Vec<Topic>) {
    topics.sort_by(|a, b| a.id.cmp(&b.id));
    let n = (fraction * topics.len() as f64).floor() as usize;
    let test = topics.split_off(n);
    (topics, test)
}

/// Material shared by `train` and `eval`.
struct Prepared {
    vocab: Arc<Vocabulary>,
    hierarchy: Option<HierarchyTree>,
    ie_train: Vec<TaskExample>,
    ie_test: Vec<TaskExample>,
    ir_train: Vec<TaskExample>,
    ir_test: Vec<TaskExample>,
    qrels: Option<Qrels>,
    skips: BTreeMap<String, usize>,
    ie_pipe: Pipeline,
    train_ids: Vec<String>,
}

fn count_skips(into: &mut BTreeMap<String, usize>, prefix: &str, skips: BTreeMap<Skip, usize>) {
    for (s, n) in skips {
        *into.entry(format!("{prefix}.{}", s.name())).or_default() += n;
    }
}

fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let corpus = load_corpus(cfg)?;
    let vocab = load_vocab(cfg, &corpus)?;
    let termlist = load_termlist(cfg, &vocab)?;
    let hierarchy = load_hierarchy(cfg, &corpus)?;
    let (train_ids, test_ids) = split_ids(cfg, &corpus)?;
    let train_docs = corpus.subset(&train_ids)?;
    let ie_pipe = Pipeline::build(&train_docs, vocab.clone(), termlist, cfg.retriever.clone(), cfg.transform)?;
    let mut skips = BTreeMap::new();
    let (ie_train, s) = build_examples(&documents(&corpus, &train_ids), |d| make_ie_example(&ie_pipe, d))?;
    count_skips(&mut skips, "ie.train", s);
    let (ie_test, s) = build_examples(&documents(&corpus, &test_ids), |d| make_ie_example(&ie_pipe, d))?;
    count_skips(&mut skips, "ie.test", s);

    let (mut ir_train, mut ir_test, mut qrels) = (Vec::new(), Vec::new(), None);
    match (&cfg.paths.topics, &cfg.paths.qrels) {
        (Some(tp), Some(qp)) => {
            let q = Qrels::load(qp)?;
            let (tr, te) = split_topics(load_topics(tp)?, cfg.split.topic_fraction);
            let ir_pipe = Pipeline::build(&corpus, vocab.clone(), None, cfg.retriever.clone(), cfg.transform)?;
            let prepend = cfg.schedule.prepend_concept;
            let (a, s) = build_examples(&tr, |t| make_ir_example(&ir_pipe, t, &q, prepend))?;
            count_skips(&mut skips, "ir.train", s);
            let (b, s) = build_examples(&te, |t| make_ir_example(&ir_pipe, t, &q, prepend))?;
            count_skips(&mut skips, "ir.test", s);
            (ir_train, ir_test, qrels) = (a, b, Some(q));
        }
        (None, None) => {}
        (Some(_), None) => return Err(Error::Validation("paths.topics is set but paths.qrels is missing".into())),
        (None, Some(_)) => return Err(Error::Validation("paths.qrels is set but paths.topics is missing".into())),
    }
    Ok(Prepared {
        vocab,
        hierarchy,
        ie_train,
        ie_test,
        ir_train,
        ir_test,
        qrels,
        skips,
        ie_pipe,
        train_ids,
    })
}

fn load_model(cfg: &RunConfig, vocab: &Vocabulary) -> Result<RankerModel> {
    let model = RankerModel::load(cfg.require("paths.model", &cfg.paths.model)?)?;
    if model.cfg.vocab_size != vocab.len() {
        return Err(Error::Validation(format!(
            "checkpoint vocabulary size {} does not match the vocabulary ({})",
            model.cfg.vocab_size,
            vocab.len()
        )));
    }
    Ok(model)
}

fn load_threshold(cfg: &RunConfig) -> Result<Option<ThresholdPolicy>> {
    let Some(p) = &cfg.paths.threshold else {
        return Ok(None);
    };
    let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
    Ok(Some(serde_json::from_str(&text)?))
}

// commands

pub fn index(cfg: &RunConfig, name: &str) -> Result<()> {
    let mut run = Run::start(cfg, name)?;
    let corpus = load_corpus(cfg)?;
    let vocab = load_vocab(cfg, &corpus)?;
    let idx = InvertedIndex::build(&corpus, &vocab)?;
    vocab.save(run.path("vocab.txt"))?;
    run.wrote("vocab.txt")?;
    write_json(&run.path("index.json"), &idx)?;
    run.wrote("index.json")?;
    println!("indexed {} documents, vocabulary {}", idx.n_docs(), vocab.len());
    run.finish(json!({
        "documents": idx.n_docs(),
        "skipped_records": corpus.skipped(),
        "vocabulary": vocab.len(),
        "avgdl": idx.avgdl(),
    }))
}

pub fn split(cfg: &RunConfig, name: &str) -> Result<()> {
    let mut run = Run::start(cfg, name)?;
    let corpus = load_corpus(cfg)?;
    let (train, test) = chronological_split(&corpus, cfg.split.fraction)?;
    write_ids(&run.path(TRAIN_IDS), &train)?;
    run.wrote(TRAIN_IDS)?;
    write_ids(&run.path(TEST_IDS), &test)?;
    run.wrote(TEST_IDS)?;
    println!("train {} test {}", train.len(), test.len());
    run.finish(json!({ "fraction": cfg.split.fraction, "train": train.len(), "test": test.len() }))
}

pub fn train(cfg: &RunConfig, name: &str) -> Result<()> {
    let mut run = Run::start(cfg, name)?;
    let prep = prepare(cfg)?;
    let mut rcfg = cfg.ranker.clone();
    if rcfg.vocab_size == 0 {
        rcfg.vocab_size = prep.vocab.len();
    } else if rcfg.vocab_size != prep.vocab.len() {
        return Err(Error::Validation(format!(
            "ranker.vocab_size {} does not match the vocabulary ({})",
            rcfg.vocab_size,
            prep.vocab.len()
        )));
    }
    let mut model = RankerModel::new(rcfg)?;
    let ssl_docs = match &prep.ie_pipe.termlist {
        Some(list) => prep
            .train_ids
            .iter()
            .filter_map(|id| {
                let toks = prep.ie_pipe.doc_tokens(id).ok()?;
                (!list.present_in(toks).is_empty()).then(|| (id.clone(), toks.to_vec()))
            })
            .collect(),
        None => Vec::new(),
    };
    let data = TrainData {
        ssl_pipe: Some(&prep.ie_pipe),
        ssl_docs,
        ie: prep.ie_train.clone(),
        ir: prep.ir_train.clone(),
    };
    let mut log = TrainLog::default();
    for ex in data.ie.iter() {
        log.transforms.record(ex);
    }
    let outcome = train_model(&mut model, &data, &cfg.schedule, &mut log);
    let mut summary = json!({
        "examples": {
            "ie.train": prep.ie_train.len(),
            "ssl.documents": data.ssl_docs.len(),
            "ir.train": prep.ir_train.len(),
        },
        "example_skips": prep.skips,
    });
    if let Err(e) = outcome {
        run.manifest.status = "diverged".into();
        summary["error"] = json!(e.to_string());
        summary["train_log"] = serde_json::to_value(&log)?;
        run.finish(summary)?;
        return Err(e);
    }
    model.save(run.path("model.glrk"))?;
    run.wrote("model.glrk")?;
    if !prep.ie_train.is_empty() {
        let policy = optimize_threshold(&model_term_scores(&model, &prep.ie_train)?, &gold_sets(&prep.ie_train))?;
        write_json(&run.path("threshold.json"), &policy)?;
        run.wrote("threshold.json")?;
        summary["threshold"] = json!(policy.theta);
    }
    summary["train_log"] = serde_json::to_value(&log)?;
    let last = log.steps.last().map_or(f64::NAN, |s| s.loss);
    println!("trained {} steps, last loss {last:.4}", log.steps.len());
    run.finish(summary)
}

pub fn eval(cfg: &RunConfig, name: &str) -> Result<()> {
    let mut run = Run::start(cfg, name)?;
    let prep = prepare(cfg)?;
    let model = load_model(cfg, &prep.vocab)?;
    let mut reports: BTreeMap<String, EvalReport> = BTreeMap::new();
    if prep.ie_test.is_empty() {
        log::warn!("no extraction test examples; extraction metrics skipped");
    } else {
        let gold_train = gold_sets(&prep.ie_train);
        let gold_test = gold_sets(&prep.ie_test);
        let base_policy = optimize_threshold(&retrieval_term_scores(&prep.ie_train), &gold_train)?;
        let preds = label_predictions(&retrieval_term_scores(&prep.ie_test), &gold_test, &base_policy);
        reports.insert("ie.retrieval".into(), extraction_report(&preds, prep.hierarchy.as_ref())?);
        let policy = match load_threshold(cfg)? {
            Some(p) => p,
            None => optimize_threshold(&model_term_scores(&model, &prep.ie_train)?, &gold_train)?,
        };
        let preds = label_predictions(&model_term_scores(&model, &prep.ie_test)?, &gold_test, &policy);
        reports.insert("ie.model".into(), extraction_report(&preds, prep.hierarchy.as_ref())?);
    }
    if let Some(qrels) = &prep.qrels {
        if prep.ir_test.is_empty() {
            log::warn!("no held-out topics; ranking metrics skipped");
        } else {
            let base = retrieval_run(&prep.ir_test)?;
            base.save(run.path("retrieval.run"))?;
            run.wrote("retrieval.run")?;
            reports.insert("ir.retrieval".into(), ranking_report(&base, qrels));
            let reranked = rerank_run(&model, &prep.ir_test)?;
            reranked.save(run.path("model.run"))?;
            run.wrote("model.run")?;
            reports.insert("ir.model".into(), ranking_report(&reranked, qrels));
        }
    }
    write_json(&run.path("eval.json"), &reports)?;
    run.wrote("eval.json")?;
    for (k, r) in &reports {
        let line: Vec<String> = r.metrics.iter().map(|(m, v)| format!("{m}={v:.4}")).collect();
        println!("{k}: {}", line.join(" "));
    }
    run.finish(json!({
        "reports": reports,
        "examples": {
            "ie.train": prep.ie_train.len(),
            "ie.test": prep.ie_test.len(),
            "ir.test": prep.ir_test.len(),
        },
        "example_skips": prep.skips,
    }))
}

pub fn retrieve(cfg: &RunConfig, name: &str, query_doc: &str, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Validation("--k must be at least 1".into()));
    }
    let corpus = load_corpus(cfg)?;
    let vocab = load_vocab(cfg, &corpus)?;
    let idx = match &cfg.paths.index {
        Some(p) => InvertedIndex::from_json(&fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?,
        None => InvertedIndex::build(&corpus, &vocab)?,
    };
    let table = TokenTable::random(vocab.len(), cfg.retriever.embedding_dim, cfg.retriever.embedding_seed);
    let pool = FusedPool::build(&idx, &table, &cfg.retriever);
    let rep = pool.get(query_doc).ok_or_else(|| Error::Unknown {
        kind: "document",
        id: query_doc.to_string(),
    })?;
    let ranked = retrieve_candidates(rep, &pool, k, Some(query_doc), cfg.retriever.alpha);
    for (i, c) in ranked.iter().enumerate() {
        println!("{}\t{}\t{:.6}", i + 1, c.id, c.score);
    }
    if let Some(out) = &cfg.paths.out {
        let mut run = Run::at(cfg, name, out.clone())?;
        write_json(&run.path("retrieve.json"), &ranked)?;
        run.wrote("retrieve.json")?;
        run.finish(json!({ "query_doc": query_doc, "k": k, "returned": ranked.len() }))?;
    }
    Ok(())
}

/// Frame names: checkpoint file stems, prefixed by the parent directory
/// when two stems collide.
fn frame_labels(frames: &[PathBuf]) -> Vec<String> {
    let name = |p: Option<&std::ffi::OsStr>| p.map(|s| s.to_string_lossy().into_owned());
    let stems: Vec<String> = frames
        .iter()
        .map(|p| name(p.file_stem()).unwrap_or_else(|| p.display().to_string()))
        .collect();
    let unique: BTreeSet<&String> = stems.iter().collect();
    if unique.len() == stems.len() {
        return stems;
    }
    frames
        .iter()
        .zip(&stems)
        .map(|(p, stem)| match name(p.parent().and_then(Path::file_name)) {
            Some(dir) => format!("{dir}/{stem}"),
            None => stem.clone(),
        })
        .collect()
}

/// Documents sampled per timeline.
const TIMELINE_SAMPLES: usize = 32;

fn contains_seq(hay: &[TokenId], needle: &[TokenId]) -> bool {
    !needle.is_empty() && hay.windows(needle.len()).any(|w| w == needle)
}

/// Query tokens and candidate tokens of one timeline input.
type Sample = (Vec<TokenId>, Vec<Vec<TokenId>>);

/// The explained example plus extraction inputs of up to
/// [`TIMELINE_SAMPLES`] corpus documents containing both terms of a pair.
fn timeline_samples(
    pipe: &Pipeline,
    corpus: &CorpusStore,
    pairs: &[(String, String)],
    ex: &TaskExample,
) -> Result<Vec<Sample>> {
    let probes: Vec<(Vec<TokenId>, Vec<TokenId>)> =
        pairs.iter().map(|(a, b)| (pipe.tokenize(a), pipe.tokenize(b))).collect();
    let docs: Vec<Document> = corpus
        .iter()
        .filter(|d| d.id != ex.source)
        .filter(|d| {
            let toks = pipe.doc_tokens(&d.id).unwrap_or(&[]);
            probes.iter().any(|(a, b)| contains_seq(toks, a) && contains_seq(toks, b))
        })
        .take(TIMELINE_SAMPLES)
        .cloned()
        .collect();
    let (examples, _) = build_examples(&docs, |d| make_ie_example(pipe, d))?;
    let mut samples = vec![(ex.query.clone(), ex.candidate_tokens.clone())];
    samples.extend(examples.into_iter().map(|e| (e.query, e.candidate_tokens)));
    Ok(samples)
}

/// Alternatives listed in a report.
const ALTERNATIVES: usize = 3;

pub fn explain(
    cfg: &RunConfig,
    name: &str,
    query_doc: &str,
    top: usize,
    frames: &[PathBuf],
    pairs: &[String],
) -> Result<()> {
    let mut run = Run::start(cfg, name)?;
    let corpus = load_corpus(cfg)?;
    let vocab = load_vocab(cfg, &corpus)?;
    let model = load_model(cfg, &vocab)?;
    let termlist = load_termlist(cfg, &vocab)?;
    let pipe = Pipeline::build(&corpus, vocab.clone(), termlist, cfg.retriever.clone(), cfg.transform)?;
    let doc = corpus.get(query_doc).ok_or_else(|| Error::Unknown {
        kind: "document",
        id: query_doc.to_string(),
    })?;
    let ex = make_ie_example(&pipe, doc)?
        .map_err(|s| Error::Validation(format!("no extraction example for `{query_doc}`: {}", s.name())))?;
    let packed = model.pack(&ex.query, &ex.candidate_tokens)?;
    let fwd = model.forward(&packed, AttentionMode::Sparse, None)?;
    let map = quantize_highlights(extract_attributions(&packed, &fwd)?);

    let policy = load_threshold(cfg)?.unwrap_or_else(|| ThresholdPolicy::fixed(0.5));
    let mut terms: Vec<(String, f64)> =
        predict_terms(&ex, &model)?.into_iter().map(|(k, s)| (k.to_string(), s)).collect();
    let chosen: BTreeSet<String> = policy.predict(&terms).into_iter().map(String::from).collect();
    terms.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let (predicted, rest): (Vec<_>, Vec<_>) = terms.into_iter().partition(|(t, _)| chosen.contains(t));
    let alternatives = rest.into_iter().take(ALTERNATIVES).collect();

    let report = Report::new(
        format!("Document {query_doc}"),
        &map,
        &vocab,
        &ex.candidates,
        &fwd.scores,
        predicted,
        alternatives,
        top,
    )?;
    render_report(&report, &run.out)?;
    run.wrote("report.html")?;
    run.wrote("report.json")?;
    let mut summary = json!({
        "query_doc": query_doc,
        "candidates": ex.candidates.len(),
        "highlighted": report.highlighted(),
        "predicted": report.predicted.len(),
    });

    if !frames.is_empty() || !pairs.is_empty() {
        let pairs = pairs
            .iter()
            .map(|p| {
                p.split_once(',')
                    .map(|(a, b)| (a.trim().to_string(), b.trim().to_string()))
                    .ok_or_else(|| Error::Validation(format!("--pair expects `source,target`, got `{p}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        let labels = frame_labels(frames);
        let models = frames
            .iter()
            .zip(labels)
            .map(|(p, label)| Ok((label, RankerModel::load(p)?)))
            .collect::<Result<Vec<_>>>()?;
        let checkpoints: Vec<(String, &RankerModel)> = models.iter().map(|(l, m)| (l.clone(), m)).collect();
        let samples = timeline_samples(&pipe, &corpus, &pairs, &ex)?;
        let series = build_timeline(&checkpoints, &pairs, &samples, &vocab)?;
        series.save_csv(run.path("timeline.csv"))?;
        run.wrote("timeline.csv")?;
        summary["timeline_series"] = json!(series.series.len());
    }
    println!("report written to {}", run.out.join("report.html").display());
    run.finish(summary)
}

pub fn selfcheck(cfg: &RunConfig, name: &str) -> Result<()> {
    let start = Instant::now();
    let outcomes = selfcheck::run_all()?;
    for o in &outcomes {
        println!("{}", o.line());
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    if let Some(out) = &cfg.paths.out {
        let mut run = Run::at(cfg, name, out.clone())?;
        run.start = start;
        if failed > 0 {
            run.manifest.status = "failed".into();
        }
        run.finish(json!({ "checks": outcomes }))?;
    }
    if failed > 0 {
        return Err(Error::CheckFailed(failed));
    }
    Ok(())
}
