//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! fails. Runs without the libtest harness so every line is always printed.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use glrank::cli::{self, Manifest};
use glrank::corpus::{HierarchyTree, TokenId, Vocabulary};
use glrank::interpret::{
    attributions_from_attention, quantize_highlights, tertile_levels, timeline_from_attention, Report,
    SampleAttention,
};
use glrank::metrics::{example_accuracy, lca_f1, macro_f1, micro_f1, EvalReport, LabelPrediction};
use glrank::ranker::pack_input;
use glrank::retriever::{retrieve_candidates, EmbeddingProvider, FusedPool, InvertedIndex, RetrieverConfig, TokenTable};
use glrank::selfcheck::{gradient_oracle, mask_oracle, metric_oracle, transform_oracle, CheckOutcome};
use glrank::synth::{generate, SynthConfig};
use glrank::transform::optimize_threshold;

/// Hand-counted metric values are compared to this.
const EXACT_TOL: f64 = 1e-15;
/// Retrieval scores against the exhaustive oracle.
const RETRIEVAL_TOL: f64 = 1e-12;
const GRADIENT_BUDGET_SECS: f64 = 60.0;
const TRAIN_BUDGET_SECS: f64 = 600.0;
const IE_MIN_F1: f64 = 0.90;
const IE_MIN_GAIN: f64 = 0.15;
const IR_MIN_GAIN: f64 = 0.05;

/// Steps of the full synthetic run (ssl+mt) and of the extraction-only run.
/// Task sampling gives the full run about a third of its steps on
/// extraction, so both arms see a similar number of extraction updates.
const FULL_STEPS: &str = "9000";
const IE_ONLY_STEPS: &str = "3000";
const DETERMINISM_STEPS: &str = "150";

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn oracle(o: CheckOutcome) -> Outcome {
    let line = o.line();
    if o.passed {
        Ok(line)
    } else {
        Err(line)
    }
}

// 1

fn gradient() -> Outcome {
    let t = Instant::now();
    let o = gradient_oracle(&[1, 2, 3, 4, 5]).map_err(|e| e.to_string())?;
    let secs = t.elapsed().as_secs_f64();
    ensure(secs < GRADIENT_BUDGET_SECS, || format!("took {secs:.1} s, budget {GRADIENT_BUDGET_SECS} s"))?;
    oracle(o).map(|l| format!("{l}, {secs:.1} s"))
}

// 2, 3

fn mask() -> Outcome {
    oracle(mask_oracle(20, 7).map_err(|e| e.to_string())?)
}

fn transform() -> Outcome {
    oracle(transform_oracle(100, 11).map_err(|e| e.to_string())?)
}

// 4

fn pred(p: &[&str], g: &[&str]) -> LabelPrediction {
    LabelPrediction::new(p.iter().copied(), g.iter().copied())
}

fn close(name: &str, got: f64, want: f64) -> Result<(), String> {
    ensure((got - want).abs() <= EXACT_TOL, || format!("{name}: got {got}, want {want}"))
}

fn metrics() -> Outcome {
    let parity = metric_oracle(200, 13).map_err(|e| e.to_string())?;
    if !parity.passed {
        return Err(parity.line());
    }

    let perfect = [pred(&["a", "b"], &["a", "b"]), pred(&["c"], &["c"])];
    close("micro perfect", micro_f1(&perfect), 1.0)?;
    close("macro perfect", macro_f1(&perfect), 1.0)?;
    close("accuracy perfect", example_accuracy(&perfect), 1.0)?;
    close("micro single", micro_f1(&[pred(&["a", "b"], &["b", "c"])]), 0.5)?;
    // TP a,c; FP b; FN a in the second example
    let mixed = [pred(&["a", "b"], &["a"]), pred(&["c"], &["a", "c"])];
    close("micro mixed", micro_f1(&mixed), 2.0 / 3.0)?;
    // per label: a 2/3, b 0, c 1
    close("macro mixed", macro_f1(&mixed), 5.0 / 9.0)?;
    close("accuracy mixed", example_accuracy(&mixed), 0.5)?;

    let edges = |e: &[(&str, &str)]| -> Vec<(String, String)> {
        e.iter().map(|(c, p)| (c.to_string(), p.to_string())).collect()
    };
    let nodes: Vec<String> = ["A", "A1", "B"].map(String::from).to_vec();
    let t1 = HierarchyTree::from_edges(&edges(&[("A1", "A")]), Some(&nodes)).map_err(|e| e.to_string())?;
    let t2 = HierarchyTree::from_edges(&edges(&[("A1", "A"), ("A2", "A")]), None).map_err(|e| e.to_string())?;
    let lca = |p: &[LabelPrediction], t: &HierarchyTree| lca_f1(p, t).map_err(|e| e.to_string());
    close("lca identical", lca(&[pred(&["A1"], &["A1"])], &t2)?, 1.0)?;
    close("lca across root", lca(&[pred(&["B"], &["A1"])], &t1)?, 0.0)?;
    close("lca siblings", lca(&[pred(&["A2"], &["A1"])], &t2)?, 0.5)?;

    let flat = HierarchyTree::flat(&["a", "b", "c", "d"]).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let labels = ["a", "b", "c", "d"];
    for _ in 0..50 {
        let preds: Vec<LabelPrediction> = (0..5)
            .map(|_| {
                let p: Vec<&str> = labels.iter().copied().filter(|_| rng.gen_bool(0.4)).collect();
                let g: Vec<&str> = labels.iter().copied().filter(|_| rng.gen_bool(0.4)).collect();
                pred(&p, &g)
            })
            .collect();
        close("lca flat", lca(&preds, &flat)?, micro_f1(&preds))?;
    }
    Ok(format!("{}; flat/LCA hand fixtures exact", parity.line().trim_start_matches("PASS ")))
}

// 5

/// Micro-F1 when every item scoring at least `theta` is predicted.
fn f1_at(items: &[(f64, bool)], total_gold: usize, theta: f64) -> f64 {
    let tp = items.iter().filter(|(s, g)| *s >= theta && *g).count();
    let fp = items.iter().filter(|(s, g)| *s >= theta && !*g).count();
    let fn_ = total_gold - tp;
    if tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    }
}

fn threshold() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let labels: Vec<String> = (0..8).map(|i| format!("t{i}")).collect();
    let mut fixtures = 0;
    while fixtures < 50 {
        let n = rng.gen_range(1..8);
        let mut scored = Vec::new();
        let mut gold = Vec::new();
        for _ in 0..n {
            let m = rng.gen_range(1..=labels.len());
            let picked: Vec<&String> = labels.choose_multiple(&mut rng, m).collect();
            // coarse grid so ties between items occur
            scored.push(picked.iter().map(|l| ((*l).clone(), rng.gen_range(0..20) as f64 / 20.0)).collect::<Vec<_>>());
            let mut g: BTreeSet<String> = picked.iter().filter(|_| rng.gen_bool(0.4)).map(|l| (*l).clone()).collect();
            if rng.gen_bool(0.1) {
                // a gold label with no score at all
                g.insert("unscored".into());
            }
            gold.push(g);
        }
        let total_gold: usize = gold.iter().map(BTreeSet::len).sum();
        if total_gold == 0 {
            continue;
        }
        fixtures += 1;
        let items: Vec<(f64, bool)> = scored
            .iter()
            .zip(&gold)
            .flat_map(|(s, g)| s.iter().map(move |(l, v)| (*v, g.contains(l))))
            .collect();
        let mut sweep: Vec<f64> = items.iter().map(|(s, _)| *s).collect();
        sweep.push(f64::INFINITY);
        let best = sweep.iter().map(|&t| f1_at(&items, total_gold, t)).fold(0.0, f64::max);
        let best_theta = sweep
            .iter()
            .copied()
            .filter(|&t| f1_at(&items, total_gold, t) == best)
            .fold(f64::NEG_INFINITY, f64::max);

        let policy = optimize_threshold(&scored, &gold).map_err(|e| e.to_string())?;
        let reeval: Vec<LabelPrediction> = scored
            .iter()
            .zip(&gold)
            .map(|(s, g)| LabelPrediction::new(policy.predict(s), g.iter().map(String::as_str)))
            .collect();
        let got = micro_f1(&reeval);
        ensure((got - best).abs() <= EXACT_TOL && (policy.micro_f1 - best).abs() <= EXACT_TOL, || {
            format!("fixture {fixtures}: optimizer F1 {got} (reported {}), sweep max {best}", policy.micro_f1)
        })?;
        ensure(policy.theta == best_theta, || {
            format!("fixture {fixtures}: theta {} but the largest maximizer is {best_theta}", policy.theta)
        })?;
    }
    Ok(format!("{fixtures} fixtures reach the sweep maximum at the largest maximizing threshold"))
}

// 6, 7, 10: end to end through the CLI

fn run_cli(args: &[&str]) -> Result<(), String> {
    let mut argv = vec!["glrank"];
    argv.extend_from_slice(args);
    match cli::run(argv.iter().copied()) {
        0 => Ok(()),
        code => Err(format!("`glrank {}` exited {code}", args.join(" "))),
    }
}

fn write_fixture(dir: &Path) -> Result<(), String> {
    generate(&SynthConfig::default())
        .and_then(|b| b.write(dir))
        .map_err(|e| e.to_string())?;
    let config = "seed = 13\n\n[paths]\ncorpus = \"corpus.jsonl\"\nvocab = \"vocab.txt\"\nhierarchy = \"hierarchy.tsv\"\n\
        termlist = \"termlist.txt\"\ntopics = \"topics.jsonl\"\nqrels = \"qrels.txt\"\n\n\
        [retriever]\nk = 10\nm = 10\nk_ir = 32\n\n\
        [ranker]\nlayers = 2\nhidden = 16\nheads = 2\nffn = 32\nmax_positions = 34\nwindows = [4, 8]\n\
        dilations = [1, 2]\ndilated_heads = 1\ndropout = 0.0\noutput_size = 8\nper_doc_cap = 32\ninit_std = 0.2\n\n\
        [schedule]\nbatch_size = 16\nlr = 0.05\n";
    fs::write(dir.join("run.toml"), config).map_err(|e| e.to_string())
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

/// Trains under `regime` and evaluates; returns the reports and train time.
fn train_and_eval(dir: &Path, name: &str, regime: &str, steps: &str) -> Result<(BTreeMap<String, EvalReport>, f64), String> {
    let cfg = dir.join("run.toml");
    let out = dir.join(name);
    let t = Instant::now();
    run_cli(&["train", "--config", s(&cfg), "--out", s(&out), "--regime", regime, "--steps", steps])?;
    let secs = t.elapsed().as_secs_f64();
    let eval_out = dir.join(format!("{name}-eval"));
    run_cli(&["eval", "--config", s(&cfg), "--out", s(&eval_out), "--model", s(&out.join("model.glrk"))])?;
    let text = fs::read_to_string(eval_out.join("eval.json")).map_err(|e| e.to_string())?;
    Ok((serde_json::from_str(&text).map_err(|e| e.to_string())?, secs))
}

fn metric(reports: &BTreeMap<String, EvalReport>, key: &str, name: &str) -> Result<f64, String> {
    reports
        .get(key)
        .and_then(|r| r.metrics.get(name).copied())
        .ok_or_else(|| format!("eval.json lacks {key}.{name}"))
}

struct EndToEnd {
    full: BTreeMap<String, EvalReport>,
    full_secs: f64,
    ie_only: BTreeMap<String, EvalReport>,
}

fn end_to_end(dir: &Path) -> Result<EndToEnd, String> {
    write_fixture(dir)?;
    let (full, full_secs) = train_and_eval(dir, "ssl-mt", "ssl+mt", FULL_STEPS)?;
    let (ie_only, _) = train_and_eval(dir, "none", "none", IE_ONLY_STEPS)?;
    Ok(EndToEnd {
        full,
        full_secs,
        ie_only,
    })
}

fn synthetic_ie(e: &Result<EndToEnd, String>) -> Outcome {
    let e = e.as_ref().map_err(Clone::clone)?;
    let model = metric(&e.full, "ie.model", "micro_f1")?;
    let base = metric(&e.full, "ie.retrieval", "micro_f1")?;
    let none = metric(&e.ie_only, "ie.model", "micro_f1")?;
    let line = format!(
        "ssl+mt micro-F1 {model:.4}, retrieval-only {base:.4}, no ssl/mt {none:.4}, train {:.0} s",
        e.full_secs
    );
    ensure(e.full_secs <= TRAIN_BUDGET_SECS, || format!("{line}; over the {TRAIN_BUDGET_SECS} s budget"))?;
    ensure(model >= IE_MIN_F1, || format!("{line}; below {IE_MIN_F1}"))?;
    ensure(model >= base + IE_MIN_GAIN, || format!("{line}; gain under {IE_MIN_GAIN}"))?;
    ensure(model >= none, || format!("{line}; ssl+mt below the no-ssl/mt arm"))?;
    Ok(line)
}

fn synthetic_ir(e: &Result<EndToEnd, String>) -> Outcome {
    let e = e.as_ref().map_err(Clone::clone)?;
    let model = metric(&e.full, "ir.model", "map")?;
    let base = metric(&e.full, "ir.retrieval", "map")?;
    let line = format!("held-out MAP {model:.4} vs fused retrieval {base:.4}");
    ensure(model >= base + IR_MIN_GAIN, || format!("{line}; gain under {IR_MIN_GAIN}"))?;
    Ok(line)
}

fn determinism(dir: &Path) -> Outcome {
    let cfg = dir.join("run.toml");
    let out = dir.join("det");
    let eval_out = dir.join("det-eval");
    let model = out.join("model.glrk");
    let read = |p: &Path| fs::read(p).map_err(|e| format!("{}: {e}", p.display()));
    let manifest = |p: &Path| Manifest::load(p.join(cli::MANIFEST_FILE)).map(|m| m.without_timing()).map_err(|e| e.to_string());
    let mut runs = Vec::new();
    for _ in 0..2 {
        run_cli(&["train", "--config", s(&cfg), "--out", s(&out), "--regime", "ssl+mt", "--steps", DETERMINISM_STEPS])?;
        run_cli(&["eval", "--config", s(&cfg), "--out", s(&eval_out), "--model", s(&model)])?;
        runs.push((
            manifest(&out)?,
            read(&model)?,
            read(&out.join("threshold.json"))?,
            manifest(&eval_out)?,
            read(&eval_out.join("eval.json"))?,
        ));
    }
    let (a, b) = (&runs[0], &runs[1]);
    ensure(a.0 == b.0, || "train manifests differ".into())?;
    ensure(a.1 == b.1, || "checkpoints differ".into())?;
    ensure(a.2 == b.2, || "thresholds differ".into())?;
    ensure(a.3 == b.3, || "eval manifests differ".into())?;
    ensure(a.4 == b.4, || "eval reports differ".into())?;
    Ok(format!(
        "two {DETERMINISM_STEPS}-step runs: identical manifests, {}-byte checkpoints and eval reports",
        a.1.len()
    ))
}

// 8

fn recall(ranked: &[String], relevant: &BTreeSet<String>) -> f64 {
    ranked.iter().filter(|id| relevant.contains(*id)).count() as f64 / relevant.len() as f64
}

/// Independent fused scoring: BM25 from raw token counts, weighted mean
/// embedding, cosine of both parts.
struct Exhaustive {
    dense: Vec<Vec<f64>>,
    keyword: Vec<HashMap<TokenId, f64>>,
}

impl Exhaustive {
    fn new(idx: &InvertedIndex, table: &TokenTable, cfg: &RetrieverConfig) -> Self {
        let n = idx.n_docs();
        let counts: Vec<HashMap<TokenId, f64>> = (0..n)
            .map(|d| {
                let mut m = HashMap::new();
                for &t in idx.tokens(d).iter().filter(|&&t| !Vocabulary::is_special(t)) {
                    *m.entry(t).or_insert(0.0) += 1.0;
                }
                m
            })
            .collect();
        let lens: Vec<f64> = counts.iter().map(|c| c.values().sum()).collect();
        let avgdl = lens.iter().sum::<f64>() / n as f64;
        let mut df: HashMap<TokenId, f64> = HashMap::new();
        for c in &counts {
            for t in c.keys() {
                *df.entry(*t).or_insert(0.0) += 1.0;
            }
        }
        let mut dense = Vec::with_capacity(n);
        let mut keyword = Vec::with_capacity(n);
        for (c, len) in counts.iter().zip(&lens) {
            let w: HashMap<TokenId, f64> = c
                .iter()
                .map(|(&t, &tf)| {
                    let idf = (1.0 + (n as f64 - df[&t] + 0.5) / (df[&t] + 0.5)).ln();
                    let norm = cfg.k1 * (1.0 - cfg.b + cfg.b * len / avgdl);
                    (t, idf * tf * (cfg.k1 + 1.0) / (tf + norm))
                })
                .collect();
            let total: f64 = w.values().sum();
            let mut v = vec![0.0; table.dim()];
            for (&t, &wt) in &w {
                for (o, x) in v.iter_mut().zip(table.token_vector(t)) {
                    *o += wt * x / total;
                }
            }
            let l2 = w.values().map(|x| x * x).sum::<f64>().sqrt();
            dense.push(v);
            keyword.push(w.into_iter().filter(|(_, x)| *x > 0.0).map(|(t, x)| (t, x / l2)).collect());
        }
        Self { dense, keyword }
    }

    fn score(&self, a: usize, b: usize, alpha: f64) -> f64 {
        let (x, y) = (&self.dense[a], &self.dense[b]);
        let dot: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
        let nx = x.iter().map(|p| p * p).sum::<f64>().sqrt();
        let ny = y.iter().map(|p| p * p).sum::<f64>().sqrt();
        let cos = if nx == 0.0 || ny == 0.0 { 0.0 } else { dot / (nx * ny) };
        let kw: f64 = self.keyword[a]
            .iter()
            .filter_map(|(t, w)| self.keyword[b].get(t).map(|v| w * v))
            .sum();
        alpha * cos + (1.0 - alpha) * kw
    }
}

fn retrieval() -> Outcome {
    let cfg = RetrieverConfig::default();
    let bundle = generate(&SynthConfig::default()).map_err(|e| e.to_string())?;
    let idx = InvertedIndex::build(&bundle.corpus, &bundle.vocab).map_err(|e| e.to_string())?;
    let table = TokenTable::random(bundle.vocab.len(), cfg.embedding_dim, cfg.embedding_seed);
    let pool = FusedPool::build(&idx, &table, &cfg);
    let ids = idx.doc_ids().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let queries: Vec<&String> = ids.choose_multiple(&mut rng, 100).collect();
    let mut ks: Vec<usize> = (1..=100).collect();
    ks.extend((150..ids.len()).step_by(50));
    ks.push(ids.len() - 1);
    for q in &queries {
        let d = idx.position(q).expect("indexed");
        let relevant: BTreeSet<String> = ids
            .iter()
            .enumerate()
            .filter(|&(o, id)| id != *q && !idx.labels(o).is_disjoint(idx.labels(d)))
            .map(|(_, id)| id.clone())
            .collect();
        let rep = pool.get(q).expect("pooled");
        let mut prev = 0.0;
        for &k in &ks {
            let got: Vec<String> = retrieve_candidates(rep, &pool, k, Some(q), cfg.alpha)
                .into_iter()
                .map(|c| c.id)
                .collect();
            let r = recall(&got, &relevant);
            ensure(r >= prev, || format!("query {q}: recall@{k} {r} below {prev}"))?;
            prev = r;
        }
        ensure((prev - 1.0).abs() < 1e-12, || format!("query {q}: recall over the full pool is {prev}"))?;
    }

    let small = generate(&SynthConfig {
        docs: 50,
        ..SynthConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let idx = InvertedIndex::build(&small.corpus, &small.vocab).map_err(|e| e.to_string())?;
    let table = TokenTable::random(small.vocab.len(), cfg.embedding_dim, cfg.embedding_seed);
    let pool = FusedPool::build(&idx, &table, &cfg);
    let oracle = Exhaustive::new(&idx, &table, &cfg);
    let mut worst: f64 = 0.0;
    for d in 0..idx.n_docs() {
        let q = idx.doc_id(d);
        let mut want: Vec<(f64, &str)> = (0..idx.n_docs())
            .filter(|&o| o != d)
            .map(|o| (oracle.score(d, o, cfg.alpha), idx.doc_id(o)))
            .collect();
        want.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
        let got = retrieve_candidates(pool.get(q).expect("pooled"), &pool, want.len(), Some(q), cfg.alpha);
        ensure(got.len() == want.len(), || format!("query {q}: {} results, want {}", got.len(), want.len()))?;
        let by_id: HashMap<&str, f64> = want.iter().map(|(s, id)| (*id, *s)).collect();
        for (rank, (c, (ws, _))) in got.iter().zip(&want).enumerate() {
            // ids may swap only inside a tie of the oracle scores
            let own = by_id[c.id.as_str()];
            worst = worst.max((c.score - ws).abs()).max((own - ws).abs());
            ensure((c.score - ws).abs() <= RETRIEVAL_TOL && (own - ws).abs() <= RETRIEVAL_TOL, || {
                format!("query {q} rank {}: {} scored {} where the oracle has {ws}", rank + 1, c.id, c.score)
            })?;
        }
    }
    Ok(format!(
        "recall@k nondecreasing over {} cutoffs on {} queries; 50-doc exhaustive oracle worst {worst:.1e}",
        ks.len(),
        queries.len()
    ))
}

// 9

fn sort_levels(values: &[f64]) -> Vec<u8> {
    let mut idx: Vec<usize> = (0..values.len()).filter(|&i| values[i] > 0.0).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let n = idx.len();
    let mut out = vec![0u8; values.len()];
    if n == 0 {
        return out;
    }
    let (b1, b2) = (n.div_ceil(3).min(n - 1), (2 * n).div_ceil(3).min(n - 1));
    for (pos, &i) in idx.iter().enumerate() {
        out[i] = 1 + u8::from(pos >= b1) + u8::from(pos >= b2);
    }
    // ties take the highest level in their group
    for &i in &idx {
        out[i] = idx.iter().filter(|&&j| values[j] == values[i]).map(|&j| out[j]).max().unwrap_or(0);
    }
    out
}

fn interpret() -> Outcome {
    // layout: q0 q1 SEP CLS0 a0 a1 SEP CLS1 b0 SEP
    let p = pack_input(&[10, 11], &[vec![20, 21], vec![30]], 8).map_err(|e| e.to_string())?;
    let n = p.len();
    let attr = |a: Array2<f64>| attributions_from_attention(&p, &[a]).map_err(|e| e.to_string());

    let uniform = quantize_highlights(attr(Array2::from_elem((n, n), 1.0 / n as f64))?);
    let all: Vec<f64> = uniform.local.iter().chain(uniform.global.iter().flatten()).copied().collect();
    ensure(all.iter().all(|v| (v - all[0]).abs() <= EXACT_TOL), || "uniform attention gave unequal saliences".into())?;
    ensure(
        uniform.local_levels.iter().chain(uniform.global_levels.iter().flatten()).all(|&l| l == 3),
        || "uniform attention gave mixed levels".into(),
    )?;

    let mut a = Array2::zeros((n, n));
    a[[0, 1]] = 0.6;
    a[[1, 0]] = 0.2;
    a[[4, 0]] = 0.5;
    a[[4, 1]] = 0.3;
    a[[1, 4]] = 0.1;
    a[[8, 1]] = 0.4;
    let m = attr(a)?;
    close("local q0", m.local[0], 0.4)?;
    close("global a0", m.global[0][0], 0.9 / 4.0)?;
    close("global a1", m.global[0][1], 0.0)?;
    close("global b0", m.global[1][0], 0.1)?;

    let mut masked = Array2::zeros((n, n));
    masked[[4, 8]] = 1.0;
    masked[[8, 4]] = 1.0;
    let m = attr(masked)?;
    ensure(m.global.iter().flatten().chain(&m.local).all(|&v| v == 0.0), || "masked pair leaked salience".into())?;

    ensure(tertile_levels(&[0.1, 0.5, 0.9]) == [1, 2, 3], || "three values did not take three levels".into())?;
    ensure(tertile_levels(&[0.4; 4]) == [3; 4], || "ties did not resolve upward".into())?;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..50 {
        let v: Vec<f64> = (0..30)
            .map(|_| if rng.gen_bool(0.2) { 0.0 } else { rng.gen_range(1..8) as f64 / 8.0 })
            .collect();
        ensure(tertile_levels(&v) == sort_levels(&v), || format!("levels disagree with the sort oracle on {v:?}"))?;
    }

    let vocab = Vocabulary::with_words(["fever", "cough", "rash"]).map_err(|e| e.to_string())?;
    let f = vocab.tokenize("fever")[0];
    let c = vocab.tokenize("cough")[0];
    let r = vocab.tokenize("rash")[0];
    let sample = |w: f64| {
        let mut m = Array2::from_elem((3, 3), 0.1);
        m[[0, 1]] = w;
        m[[1, 0]] = w;
        SampleAttention {
            tokens: vec![f, c, r],
            attention: vec![m],
        }
    };
    let pairs = vec![("fever".to_string(), "cough".to_string())];
    let tl = |frames: Vec<(String, Vec<SampleAttention>)>, pairs: &[(String, String)]| {
        timeline_from_attention(&frames, pairs, &vocab).map_err(|e| e.to_string())
    };
    let doubled = tl(vec![("t1".into(), vec![sample(0.2)]), ("t2".into(), vec![sample(0.4)])], &pairs)?;
    ensure(doubled.series.len() == 1 && doubled.series[0].values == [0.5, 1.0], || {
        format!("doubled attention gave {:?}", doubled.series)
    })?;
    let same = tl(vec![("t1".into(), vec![sample(0.3)]), ("t2".into(), vec![sample(0.3)])], &pairs)?;
    ensure(same.series[0].values == [1.0, 1.0], || "identical frames are not all 1".into())?;
    let mut apart = sample(0.3);
    apart.tokens = vec![f, r, r];
    let none = tl(vec![("t1".into(), vec![apart.clone()]), ("t2".into(), vec![apart])], &pairs)?;
    ensure(none.series.iter().all(|s| s.values.iter().all(|&v| v == 0.0)), || {
        "a pair that never co-occurs produced weight".into()
    })?;
    for s in doubled.series.iter().chain(&same.series) {
        ensure(s.values.iter().copied().fold(0.0, f64::max) == 1.0, || "series maximum is not 1".into())?;
    }

    let vocab = Vocabulary::with_words(["alpha", "beta", "gamma", "delta"]).map_err(|e| e.to_string())?;
    let toks = vocab.tokenize("alpha beta gamma delta");
    let p = pack_input(&toks[..2], &[toks[2..].to_vec(), toks[..1].to_vec()], 8).map_err(|e| e.to_string())?;
    let n = p.len();
    let mut a = Array2::zeros((n, n));
    a[[0, 1]] = 0.7;
    a[[4, 0]] = 0.2;
    a[[5, 1]] = 0.5;
    let map = quantize_highlights(attributions_from_attention(&p, &[a]).map_err(|e| e.to_string())?);
    let nonzero = map
        .local_levels
        .iter()
        .chain(map.global_levels.iter().flatten())
        .filter(|&&l| l > 0)
        .count();
    let report = Report::new(
        "fixture",
        &map,
        &vocab,
        &["d1".into(), "d2".into()],
        &[0.8, 0.3],
        vec![("gamma".into(), 0.8)],
        vec![],
        2,
    )
    .map_err(|e| e.to_string())?;
    let html = report.to_html();
    let spans = html.matches("<span class=\"hl hl").count();
    ensure(nonzero > 0 && spans == nonzero && report.highlighted() == nonzero, || {
        format!("{spans} highlight spans for {nonzero} nonzero tokens")
    })?;
    ensure(!html.contains("alternatives"), || "empty alternatives still rendered".into())?;
    ensure(!html.contains("http://") && !html.contains("https://"), || "report references the network".into())?;
    Ok(format!("attribution, tertile, timeline and report fixtures hold; {spans} spans for {nonzero} nonzero tokens"))
}

fn main() {
    let dir = tempfile::tempdir().expect("temp dir");
    let mut e2e: Result<EndToEnd, String> = Err("end-to-end run did not start".into());
    let mut failed = 0;
    let mut report = |n: usize, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {n} {name}: {detail} [{secs:.1} s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {n} {name}: {detail} [{secs:.1} s]");
            }
        }
    };
    report(1, "gradient oracle", &mut gradient);
    report(2, "mask equivalence", &mut mask);
    report(3, "transform integrity", &mut transform);
    report(4, "metric parity", &mut metrics);
    report(5, "threshold optimality", &mut threshold);
    report(6, "synthetic extraction", &mut || {
        e2e = end_to_end(dir.path());
        synthetic_ie(&e2e)
    });
    report(7, "synthetic retrieval", &mut || synthetic_ir(&e2e));
    report(8, "retrieval recall", &mut retrieval);
    report(9, "interpretability exports", &mut interpret);
    report(10, "determinism", &mut || determinism(dir.path()));
    if failed > 0 {
        println!("{failed} of 10 criteria failed");
        std::process::exit(1);
    }
    println!("all 10 criteria passed");
}
