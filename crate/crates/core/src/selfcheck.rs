//! Built-in oracle suite: gradient check, mask equivalence, transform round
//! trip and metric parity. Each oracle is seeded and reports its worst error.
//!
//! The reference computations here are written independently of the
//! modules they check.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Qrels, TokenId};
use crate::error::Result;
use crate::metrics::{average_precision, bpref, ndcg_at, precision_at, RankedRun};
use crate::ranker::{build_attention_mask, pack_input, AttentionMode, PackedInput, RankerConfig, RankerModel, Role};
use crate::retriever::{ScoredTerm, TermKey};
use crate::trainer::{compute_task_loss, Task, TaskExample};
use crate::transform::{build_transform, TransformConfig, TransformMatrix};
use crate::Error;

pub const GRADIENT_TOL: f64 = 1e-4;
pub const MASK_TOL: f64 = 1e-6;
pub const ROUND_TRIP_TOL: f64 = 1e-8;
pub const METRIC_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    /// largest error seen, in the units of the tolerance
    pub worst: f64,
    pub tolerance: f64,
    pub cases: usize,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &str, worst: f64, tolerance: f64, cases: usize, failures: Vec<String>) -> Self {
        let passed = failures.is_empty() && worst < tolerance;
        Self {
            name: name.to_string(),
            passed,
            worst,
            tolerance,
            cases,
            detail: failures.into_iter().take(3).collect::<Vec<_>>().join("; "),
        }
    }

    pub fn line(&self) -> String {
        let status = if self.passed { "PASS" } else { "FAIL" };
        let mut s = format!(
            "{status} {}: {} cases, worst {:.3e} (tolerance {:.0e})",
            self.name, self.cases, self.worst, self.tolerance
        );
        if !self.detail.is_empty() {
            s.push_str(&format!(" [{}]", self.detail));
        }
        s
    }
}

/// The four oracles at their default sizes.
pub fn run_all() -> Result<Vec<CheckOutcome>> {
    Ok(vec![
        gradient_oracle(&[1, 2, 3, 4, 5])?,
        mask_oracle(20, 7)?,
        transform_oracle(100, 11)?,
        metric_oracle(200, 13)?,
    ])
}

// gradient check

fn random_tokens(rng: &mut ChaCha8Rng, vocab: usize, max_len: usize) -> Vec<TokenId> {
    (0..rng.gen_range(1..=max_len)).map(|_| rng.gen_range(5..vocab as TokenId)).collect()
}

/// Random binary matrix with a unit diagonal under a random permutation, so
/// it is always nonsingular.
fn random_binary_full_rank(rng: &mut ChaCha8Rng, n: usize, density: f64) -> Vec<Vec<f64>> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    // unit lower triangular times a permutation keeps determinant +-1
    let mut rows = vec![vec![0.0; n]; n];
    for i in 0..n {
        rows[i][perm[i]] = 1.0;
        for j in 0..i {
            if rng.gen_bool(density) {
                rows[i][perm[j]] = 1.0;
            }
        }
    }
    rows.shuffle(rng);
    rows
}

fn synthetic_example(rng: &mut ChaCha8Rng, task: Task, k: usize, vocab: usize) -> Result<TaskExample> {
    let query = random_tokens(rng, vocab, 8);
    let candidate_tokens: Vec<Vec<TokenId>> = (0..k).map(|_| random_tokens(rng, vocab, 11)).collect();
    let candidates: Vec<String> = (0..k).map(|i| format!("d{i}")).collect();
    let keys: Vec<TermKey> = (0..k).map(|i| TermKey::Label(format!("L{i}"))).collect();
    let targets: Vec<f64> = (0..k).map(|_| f64::from(u8::from(rng.gen_bool(0.5)))).collect();
    let transform = match task {
        Task::Ir => None,
        Task::Ie | Task::Ssl => Some(TransformMatrix::from_dense(
            candidates.clone(),
            keys.clone(),
            &random_binary_full_rank(rng, k, 0.5),
            &TransformConfig::default(),
        )?),
    };
    let gold = keys.iter().zip(&targets).filter(|(_, &t)| t > 0.5).map(|(k, _)| k.clone()).collect();
    Ok(TaskExample {
        task,
        source: "q".into(),
        query,
        retrieval_scores: vec![0.0; k],
        candidates,
        candidate_tokens,
        terms: keys.into_iter().map(|key| ScoredTerm { key, score: 1.0 }).collect(),
        gold,
        shortfall: 0,
        targets,
        transform,
    })
}

/// Relative error with a floor on the scale, so coordinates whose gradient
/// is numerically zero compare in absolute terms.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Analytic gradients of the task loss, including the path through `T^-1`,
/// against central differences on the toy shape (2 layers, H=16, h=2, K=4).
///
/// Per seed, both an extraction and a retrieval example are checked on
/// three coordinates of every tensor: the first, the middle and the one
/// with the largest analytic gradient.
pub fn gradient_oracle(seeds: &[u64]) -> Result<CheckOutcome> {
    const K: usize = 4;
    const VOCAB: usize = 40;
    let eps = 1e-5;
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    let mut cases = 0;
    for &seed in seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cfg = RankerConfig::toy(VOCAB);
        cfg.init_seed = seed;
        let mut model = RankerModel::new(cfg)?;
        for (_, t) in model.params.tensors_mut() {
            for x in t.iter_mut() {
                *x += rng.gen_range(-0.3..0.3);
            }
        }
        for task in [Task::Ie, Task::Ir] {
            let ex = synthetic_example(&mut rng, task, K, VOCAB)?;
            let len = model.pack(&ex.query, &ex.candidate_tokens)?.len();
            if len > 64 {
                return Err(Error::Validation(format!("gradient fixture too long: {len}")));
            }
            let (_, grads) = compute_task_loss(&ex, &model, None)?;
            let analytic: Vec<(String, Vec<f64>)> =
                grads.tensors().into_iter().map(|(n, _, v)| (n, v.to_vec())).collect();
            for (ti, (name, g)) in analytic.iter().enumerate() {
                let big = (0..g.len()).max_by(|&a, &b| g[a].abs().total_cmp(&g[b].abs())).unwrap_or(0);
                let coords: BTreeSet<usize> = [0, g.len() / 2, big].into_iter().collect();
                for idx in coords {
                    let orig = model.params.tensors_mut()[ti].1[idx];
                    model.params.tensors_mut()[ti].1[idx] = orig + eps;
                    let (lp, _) = compute_task_loss(&ex, &model, None)?;
                    model.params.tensors_mut()[ti].1[idx] = orig - eps;
                    let (lm, _) = compute_task_loss(&ex, &model, None)?;
                    model.params.tensors_mut()[ti].1[idx] = orig;
                    let numeric = (lp - lm) / (2.0 * eps);
                    let e = rel_err(numeric, g[idx]);
                    worst = worst.max(e);
                    cases += 1;
                    if e >= GRADIENT_TOL {
                        failures.push(format!(
                            "seed {seed} {} {name}[{idx}]: analytic {:.6e} numeric {numeric:.6e}",
                            task.name(),
                            g[idx]
                        ));
                    }
                }
            }
        }
    }
    Ok(CheckOutcome::new("gradient check", worst, GRADIENT_TOL, cases, failures))
}

// mask equivalence

fn random_packed(rng: &mut ChaCha8Rng, k: usize, vocab: usize, max_doc: usize) -> Result<PackedInput> {
    let q = random_tokens(rng, vocab, 6);
    let c: Vec<Vec<TokenId>> = (0..k).map(|_| random_tokens(rng, vocab, max_doc)).collect();
    pack_input(&q, &c, max_doc)
}

/// The attention rule with every window unbounded: query tokens attend
/// everything, candidate tokens and [CLS] see the query and their own
/// document, [CLS] tokens see each other and [SEP] rows see only themselves.
fn full_rule(packed: &PackedInput, p: usize, q: usize) -> bool {
    let doc = |r: Role| match r {
        Role::Cls(i) | Role::Cand(i) => Some(i),
        _ => None,
    };
    let (rp, rq) = (packed.roles[p], packed.roles[q]);
    if rp == Role::Sep {
        return p == q;
    }
    p == q
        || rp == Role::Query
        || rq == Role::Query
        || matches!((rp, rq), (Role::Cls(_), Role::Cls(_)))
        || matches!((doc(rp), doc(rq)), (Some(i), Some(j)) if i == j)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn compare_modes(model: &RankerModel, packed: &PackedInput) -> Result<f64> {
    let sparse = model.forward(packed, AttentionMode::Sparse, None)?;
    let dense = model.forward(packed, AttentionMode::DenseMasked, None)?;
    let mut worst = max_abs_diff(&sparse.logits, &dense.logits);
    for l in 0..sparse.layers() {
        for h in 0..sparse.heads() {
            let (a, b) = (sparse.attention(l, h), dense.attention(l, h));
            worst = worst.max(max_abs_diff(a.as_slice().unwrap_or(&[]), b.as_slice().unwrap_or(&[])));
        }
    }
    Ok(worst)
}

/// Sparse attention against dense masked attention on random inputs, for
/// every layer and head; then, with saturated windows, the sparse pattern
/// against the unbounded rule and the outputs against the dense path.
pub fn mask_oracle(inputs: usize, seed: u64) -> Result<CheckOutcome> {
    const VOCAB: usize = 40;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    let mut cfg = RankerConfig::toy(VOCAB);
    cfg.max_positions = 40;
    let mut model = RankerModel::new(cfg.clone())?;
    for (_, t) in model.params.tensors_mut() {
        for x in t.iter_mut() {
            *x += rng.gen_range(-0.3..0.3);
        }
    }
    for _ in 0..inputs {
        let k = rng.gen_range(1..=6);
        let packed = random_packed(&mut rng, k, VOCAB, 24)?;
        worst = worst.max(compare_modes(&model, &packed)?);
    }

    let span = 12;
    let k = 4;
    let mut sat = cfg;
    sat.windows = vec![2 * (span + 1); sat.layers];
    sat.dilations = vec![1; sat.layers];
    sat.cls_window = Some(2 * k);
    let sat_model = RankerModel {
        cfg: sat.clone(),
        params: model.params.clone(),
    };
    for case in 0..inputs.div_ceil(4) {
        let packed = random_packed(&mut rng, k, VOCAB, span)?;
        for l in 0..sat.layers {
            for h in 0..sat.heads {
                let pattern = build_attention_mask(&packed, &sat, l, h).to_dense();
                let n = packed.len();
                let mismatch = (0..n * n).filter(|&i| pattern[i] != full_rule(&packed, i / n, i % n)).count();
                if mismatch > 0 {
                    failures.push(format!("saturated case {case} layer {l} head {h}: {mismatch} mask entries differ"));
                }
            }
        }
        worst = worst.max(compare_modes(&sat_model, &packed)?);
    }
    Ok(CheckOutcome::new("mask equivalence", worst, MASK_TOL, inputs + inputs.div_ceil(4), failures))
}

// transform round trip

/// Rank by elimination with partial pivoting, on a private copy.
fn reference_rank(rows: &[Vec<f64>]) -> usize {
    let mut m: Vec<Vec<f64>> = rows.to_vec();
    let cols = m.first().map_or(0, Vec::len);
    let mut rank = 0;
    for c in 0..cols {
        let Some(p) = (rank..m.len()).max_by(|&a, &b| m[a][c].abs().total_cmp(&m[b][c].abs())) else {
            break;
        };
        if m[p][c].abs() < 1e-9 {
            continue;
        }
        m.swap(rank, p);
        for r in 0..m.len() {
            if r != rank {
                let f = m[r][c] / m[rank][c];
                if f != 0.0 {
                    let pivot = m[rank].clone();
                    for (x, p) in m[r][c..cols].iter_mut().zip(&pivot[c..cols]) {
                        *x -= f * p;
                    }
                }
            }
        }
        rank += 1;
    }
    rank
}

/// Round trips through random nonsingular binary transforms of sizes 4 to
/// 64 with condition below 1e6, then rank repair on seeded rank-deficient
/// fixtures: repair must reach full rank exactly when the fixture's rows
/// span the full space, and report rank deficiency otherwise.
pub fn transform_oracle(cases: usize, seed: u64) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = TransformConfig::default();
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    let mut done = 0;
    while done < cases {
        let n = rng.gen_range(4..=64);
        let density = rng.gen_range(0.02..0.3);
        let rows = random_binary_full_rank(&mut rng, n, density);
        let t = TransformMatrix::from_dense(
            (0..n).map(|i| format!("d{i}")).collect(),
            (0..n).map(|j| TermKey::Label(format!("t{j}"))).collect(),
            &rows,
            &cfg,
        )?;
        if t.condition() >= 1e6 {
            continue;
        }
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let back = t.solve(&t.apply(&y)?)?;
        let back_t = t.solve_transposed(&t.apply_transposed(&y)?)?;
        worst = worst.max(max_abs_diff(&back, &y)).max(max_abs_diff(&back_t, &y));
        done += 1;
    }

    for case in 0..cases / 4 {
        let k = rng.gen_range(3..=8);
        let total = k + rng.gen_range(0..=8 * k);
        // rows drawn from a few patterns so duplicates are common
        let patterns: Vec<Vec<f64>> = (0..rng.gen_range(1..=k + 1))
            .map(|_| (0..k).map(|_| f64::from(u8::from(rng.gen_bool(0.4)))).collect())
            .collect();
        let data: Vec<Vec<f64>> = (0..total).map(|_| patterns.choose(&mut rng).unwrap().clone()).collect();
        let docs: Vec<String> = (0..total).map(|i| format!("d{i}")).collect();
        let terms: Vec<TermKey> = (0..k).map(|j| TermKey::Label(format!("t{j}"))).collect();
        let lookup: HashMap<&str, &Vec<f64>> = docs.iter().map(String::as_str).zip(&data).collect();
        let carries = |d: &str, key: &TermKey| {
            let j = terms.iter().position(|t| t == key).expect("known term");
            lookup[d][j] > 0.5
        };
        let spans = reference_rank(&data) == k;
        match build_transform(&docs, &terms, carries, &cfg) {
            Ok(t) => {
                let rows: Vec<Vec<f64>> = (0..k).map(|i| (0..k).map(|j| t.get(i, j)).collect()).collect();
                if !spans || reference_rank(&rows) != k {
                    failures.push(format!("repair case {case}: built a transform from rank-deficient rows"));
                }
            }
            Err(Error::RankDeficient { .. }) | Err(Error::Singular { .. }) if !spans => {}
            Err(e) => failures.push(format!("repair case {case}: {e}")),
        }
    }
    Ok(CheckOutcome::new("transform round trip", worst, ROUND_TRIP_TOL, cases + cases / 4, failures))
}

// metric parity

/// AP as the mean, over every relevant document, of the precision at its
/// rank, with unretrieved relevant documents contributing zero.
fn ref_ap(ranking: &[&str], grades: &BTreeMap<&str, u8>) -> Option<f64> {
    let relevant: Vec<&str> = grades.iter().filter(|(_, &g)| g >= 1).map(|(d, _)| *d).collect();
    if relevant.is_empty() {
        return None;
    }
    let total: f64 = relevant
        .iter()
        .map(|d| match ranking.iter().position(|x| x == d) {
            Some(pos) => {
                let hits = ranking[..=pos].iter().filter(|x| grades.get(*x).is_some_and(|&g| g >= 1)).count();
                hits as f64 / (pos + 1) as f64
            }
            None => 0.0,
        })
        .sum();
    Some(total / relevant.len() as f64)
}

fn ref_precision(ranking: &[&str], grades: &BTreeMap<&str, u8>, n: usize) -> f64 {
    let mut hits = 0;
    for i in 0..n {
        if ranking.get(i).and_then(|d| grades.get(d)).is_some_and(|&g| g >= 1) {
            hits += 1;
        }
    }
    hits as f64 / n as f64
}

fn ref_ndcg(ranking: &[&str], grades: &BTreeMap<&str, u8>, n: usize) -> Option<f64> {
    let gain = |g: u8| 2f64.powi(i32::from(g)) - 1.0;
    let mut dcg = 0.0;
    for (i, d) in ranking.iter().take(n).enumerate() {
        dcg += gain(grades.get(d).copied().unwrap_or(0)) / (i as f64 + 2.0).log2();
    }
    let mut best: Vec<u8> = grades.values().copied().collect();
    best.sort_unstable();
    best.reverse();
    let mut idcg = 0.0;
    for (i, g) in best.into_iter().take(n).enumerate() {
        idcg += gain(g) / (i as f64 + 2.0).log2();
    }
    (idcg > 0.0).then(|| dcg / idcg)
}

/// Bpref by explicit pairwise comparison of ranks.
fn ref_bpref(ranking: &[&str], grades: &BTreeMap<&str, u8>) -> Option<f64> {
    let r = grades.values().filter(|&&g| g >= 1).count();
    let n = grades.values().filter(|&&g| g == 0).count();
    if r == 0 || n == 0 {
        return None;
    }
    let cap = r.min(n) as f64;
    let mut sum = 0.0;
    for (i, d) in ranking.iter().enumerate() {
        if grades.get(d).is_some_and(|&g| g >= 1) {
            let above = (0..i).filter(|&j| grades.get(ranking[j]) == Some(&0)).count() as f64;
            sum += 1.0 - above.min(cap) / cap;
        }
    }
    Some(sum / r as f64)
}

fn compare(name: &str, got: Option<f64>, want: Option<f64>, worst: &mut f64, failures: &mut Vec<String>) {
    match (got, want) {
        (Some(a), Some(b)) => *worst = worst.max((a - b).abs()),
        (None, None) => {}
        _ => failures.push(format!("{name}: defined {got:?} vs reference {want:?}")),
    }
}

/// MAP, P@n, nDCG@n and Bpref on random runs and qrels, including unjudged
/// and unretrieved documents and score ties, against the references above.
pub fn metric_oracle(cases: usize, seed: u64) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    for case in 0..cases {
        let pool = rng.gen_range(1..=30);
        let docs: Vec<String> = (0..pool).map(|i| format!("d{i:02}")).collect();
        let mut qrels = Qrels::new();
        let mut grades: BTreeMap<&str, u8> = BTreeMap::new();
        for d in &docs {
            if rng.gen_bool(0.7) {
                let g = rng.gen_range(0..=2u8);
                qrels.insert("t", d, g)?;
                grades.insert(d, g);
            }
        }
        if grades.is_empty() {
            qrels.insert("t", &docs[0], 1)?;
            grades.insert(&docs[0], 1);
        }
        let retrieved: Vec<(String, f64)> = docs
            .iter()
            .filter_map(|d| if rng.gen_bool(0.8) { Some((d.clone(), f64::from(rng.gen_range(0..6u8)))) } else { None })
            .collect();
        let mut run = RankedRun::new();
        run.insert("t", retrieved.clone())?;
        let ranking = run.docs("t");
        // the stored order must be descending score, ascending id on ties
        let mut expect = retrieved;
        expect.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        if expect.iter().map(|(d, _)| d.as_str()).ne(ranking.iter().copied()) {
            failures.push(format!("case {case}: run order differs"));
        }
        compare("ap", average_precision(&ranking, &qrels, "t"), ref_ap(&ranking, &grades), &mut worst, &mut failures);
        for n in [1, 5, 10, 20] {
            let p = precision_at(&ranking, &qrels, "t", n);
            worst = worst.max((p - ref_precision(&ranking, &grades, n)).abs());
            compare("ndcg", ndcg_at(&ranking, &qrels, "t", n), ref_ndcg(&ranking, &grades, n), &mut worst, &mut failures);
        }
        compare("bpref", bpref(&ranking, &qrels, "t"), ref_bpref(&ranking, &grades), &mut worst, &mut failures);
    }
    Ok(CheckOutcome::new("metric parity", worst, METRIC_TOL, cases, failures))
}
