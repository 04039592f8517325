use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::RankerConfig;
use super::mask::{allowed, PatternSet};
use super::pack::PackedInput;
use super::params::{LayerParams, Params};
use crate::error::{Error, Result};

const LN_EPS: f64 = 1e-6;

/// How attention is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionMode {
    /// row-compressed kernel over the allowed pairs only
    Sparse,
    /// full score matrix with disallowed pairs set to `-inf`; forward only
    DenseMasked,
}

#[derive(Debug, Clone)]
enum Probs {
    Sparse(Vec<f64>),
    Dense(Array2<f64>),
}

#[derive(Debug, Clone)]
struct NormCache {
    xhat: Array2<f64>,
    rstd: Array1<f64>,
}

#[derive(Debug, Clone)]
struct LayerCache {
    ln1: NormCache,
    a1: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Probs>,
    ctx: Array2<f64>,
    drop1: Option<Array2<f64>>,
    ln2: NormCache,
    a2: Array2<f64>,
    pre: Array2<f64>,
    act: Array2<f64>,
    drop2: Option<Array2<f64>>,
}

/// Output of one forward pass plus everything backward and attribution need.
#[derive(Debug, Clone)]
pub struct Forward {
    /// pre-logistic candidate scores
    pub logits: Vec<f64>,
    /// `logistic(logits)`
    pub scores: Vec<f64>,
    mode: AttentionMode,
    patterns: Option<PatternSet>,
    tokens: Vec<u32>,
    segments: Vec<u8>,
    positions: Vec<usize>,
    cls: Vec<usize>,
    drop0: Option<Array2<f64>>,
    layers: Vec<LayerCache>,
    lnf: NormCache,
    cls_states: Array2<f64>,
    pooled: Array2<f64>,
}

impl Forward {
    pub fn seq_len(&self) -> usize {
        self.tokens.len()
    }

    /// Attention probabilities of (`layer`, `head`) as a dense `S x S` matrix.
    pub fn attention(&self, layer: usize, head: usize) -> Array2<f64> {
        match &self.layers[layer].probs[head] {
            Probs::Dense(m) => m.clone(),
            Probs::Sparse(v) => {
                let pat = self.patterns.as_ref().expect("sparse forward keeps patterns").get(layer, head);
                let n = self.seq_len();
                let mut m = Array2::zeros((n, n));
                for p in 0..n {
                    let base = pat.offsets[p];
                    for (j, &q) in pat.row(p).iter().enumerate() {
                        m[[p, q as usize]] = v[base + j];
                    }
                }
                m
            }
        }
    }

    pub fn layers(&self) -> usize {
        self.layers.len()
    }

    pub fn heads(&self) -> usize {
        self.layers.first().map_or(0, |l| l.probs.len())
    }
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn layer_norm(x: &Array2<f64>, g: &Array1<f64>, b: &Array1<f64>) -> (Array2<f64>, NormCache) {
    let (n, h) = x.dim();
    let mut xhat = Array2::zeros((n, h));
    let mut rstd = Array1::zeros(n);
    for i in 0..n {
        let row = x.row(i);
        let mean = row.sum() / h as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / h as f64;
        let r = 1.0 / (var + LN_EPS).sqrt();
        rstd[i] = r;
        xhat.row_mut(i).assign(&row.mapv(|v| (v - mean) * r));
    }
    let y = &xhat * g + b;
    (y, NormCache { xhat, rstd })
}

fn layer_norm_back(dy: &Array2<f64>, g: &Array1<f64>, c: &NormCache, dg: &mut Array1<f64>, db: &mut Array1<f64>) -> Array2<f64> {
    *dg += &(dy * &c.xhat).sum_axis(Axis(0));
    *db += &dy.sum_axis(Axis(0));
    let dxhat = dy * g;
    let h = dy.ncols() as f64;
    let mut dx = Array2::zeros(dy.dim());
    for i in 0..dy.nrows() {
        let d = dxhat.row(i);
        let xh = c.xhat.row(i);
        let m1 = d.sum() / h;
        let m2 = d.dot(&xh) / h;
        let r = c.rstd[i];
        dx.row_mut(i)
            .iter_mut()
            .zip(d.iter().zip(xh.iter()))
            .for_each(|(o, (&dv, &xv))| *o = r * (dv - m1 - xv * m2));
    }
    dx
}

fn dropout_mask(rng: &mut ChaCha8Rng, shape: (usize, usize), p: f64) -> Array2<f64> {
    let keep = 1.0 / (1.0 - p);
    Array2::from_shape_simple_fn(shape, || if rng.gen::<f64>() < p { 0.0 } else { keep })
}

fn affine(x: &Array2<f64>, w: &Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    x.dot(w) + b
}

struct HeadOut {
    probs: Probs,
    ctx: Array2<f64>,
}

fn sparse_head(q: &Array2<f64>, k: &Array2<f64>, v: &Array2<f64>, head: usize, dh: usize, pat: &super::mask::AttentionPattern) -> HeadOut {
    let n = q.nrows();
    let off = head * dh;
    let scale = 1.0 / (dh as f64).sqrt();
    let qs = q.slice(s![.., off..off + dh]);
    let ks = k.slice(s![.., off..off + dh]);
    let vs = v.slice(s![.., off..off + dh]);
    let mut probs = vec![0.0; pat.nnz()];
    let mut ctx = Array2::zeros((n, dh));
    for p in 0..n {
        let base = pat.offsets[p];
        let row = pat.row(p);
        let qp = qs.row(p);
        let mut max = f64::NEG_INFINITY;
        for (j, &t) in row.iter().enumerate() {
            let l = qp.dot(&ks.row(t as usize)) * scale;
            probs[base + j] = l;
            max = max.max(l);
        }
        let mut sum = 0.0;
        for pr in &mut probs[base..base + row.len()] {
            *pr = (*pr - max).exp();
            sum += *pr;
        }
        let mut out = ctx.row_mut(p);
        for (j, &t) in row.iter().enumerate() {
            let a = probs[base + j] / sum;
            probs[base + j] = a;
            out.scaled_add(a, &vs.row(t as usize));
        }
    }
    HeadOut {
        probs: Probs::Sparse(probs),
        ctx,
    }
}

fn dense_head(q: &Array2<f64>, k: &Array2<f64>, v: &Array2<f64>, head: usize, dh: usize, mask: &Array2<bool>) -> HeadOut {
    let off = head * dh;
    let scale = 1.0 / (dh as f64).sqrt();
    let qs = q.slice(s![.., off..off + dh]);
    let ks = k.slice(s![.., off..off + dh]);
    let vs = v.slice(s![.., off..off + dh]);
    let mut scores = qs.dot(&ks.t()) * scale;
    ndarray::Zip::from(&mut scores).and(mask).for_each(|s, &m| {
        if !m {
            *s = f64::NEG_INFINITY;
        }
    });
    for mut row in scores.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|x| (x - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    let ctx = scores.dot(&vs);
    HeadOut {
        probs: Probs::Dense(scores),
        ctx,
    }
}

/// Gradient of one sparse head: returns `(dq, dk, dv)` for its columns.
fn sparse_head_back(
    cache: &LayerCache,
    dctx: &Array2<f64>,
    head: usize,
    dh: usize,
    pat: &super::mask::AttentionPattern,
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let Probs::Sparse(probs) = &cache.probs[head] else {
        unreachable!("sparse backward over dense probabilities")
    };
    let n = cache.q.nrows();
    let off = head * dh;
    let scale = 1.0 / (dh as f64).sqrt();
    let qs = cache.q.slice(s![.., off..off + dh]);
    let ks = cache.k.slice(s![.., off..off + dh]);
    let vs = cache.v.slice(s![.., off..off + dh]);
    let dc = dctx.slice(s![.., off..off + dh]);
    let mut dq = Array2::zeros((n, dh));
    let mut dk = Array2::zeros((n, dh));
    let mut dv = Array2::zeros((n, dh));
    let mut da = Vec::new();
    for p in 0..n {
        let base = pat.offsets[p];
        let row = pat.row(p);
        let dcp = dc.row(p);
        da.clear();
        let mut weighted = 0.0;
        for (j, &t) in row.iter().enumerate() {
            let g = dcp.dot(&vs.row(t as usize));
            weighted += probs[base + j] * g;
            da.push(g);
        }
        for (j, &t) in row.iter().enumerate() {
            let a = probs[base + j];
            let t = t as usize;
            let dl = a * (da[j] - weighted) * scale;
            dq.row_mut(p).scaled_add(dl, &ks.row(t));
            dk.row_mut(t).scaled_add(dl, &qs.row(p));
            dv.row_mut(t).scaled_add(a, &dcp);
        }
    }
    (dq, dk, dv)
}

fn dense_mask(packed: &PackedInput, cfg: &RankerConfig, layer: usize, head: usize) -> Array2<bool> {
    let n = packed.len();
    Array2::from_shape_fn((n, n), |(p, q)| allowed(packed, cfg, layer, head, p, q))
}

/// Forward pass over one packed input.
///
/// `dropout_seed` enables dropout with masks drawn from that seed; `None`
/// runs deterministically without dropout.
pub fn forward(
    params: &Params,
    cfg: &RankerConfig,
    packed: &PackedInput,
    mode: AttentionMode,
    dropout_seed: Option<u64>,
) -> Result<Forward> {
    let n = packed.len();
    let h = cfg.hidden;
    let dh = cfg.head_dim();
    if let Some(&t) = packed.tokens.iter().find(|&&t| t as usize >= cfg.vocab_size) {
        return Err(Error::Validation(format!("token id {t} outside vocabulary of {}", cfg.vocab_size)));
    }
    if let Some(&p) = packed.positions.iter().find(|&&p| p >= cfg.max_positions) {
        return Err(Error::Validation(format!("position {p} exceeds max_positions {}", cfg.max_positions)));
    }
    let mut rng = dropout_seed
        .filter(|_| cfg.dropout > 0.0)
        .map(ChaCha8Rng::seed_from_u64);

    let mut x = Array2::zeros((n, h));
    for i in 0..n {
        let mut row = x.row_mut(i);
        row.assign(&params.tok.row(packed.tokens[i] as usize));
        row += &params.seg.row(packed.segments[i] as usize);
        row += &params.pos.row(packed.positions[i]);
    }
    let drop0 = rng.as_mut().map(|r| dropout_mask(r, (n, h), cfg.dropout));
    if let Some(m) = &drop0 {
        x *= m;
    }

    let patterns = (mode == AttentionMode::Sparse).then(|| PatternSet::build(packed, cfg));
    let mut layers = Vec::with_capacity(cfg.layers);
    for (l, lp) in params.layers.iter().enumerate() {
        let (a1, ln1) = layer_norm(&x, &lp.ln1_g, &lp.ln1_b);
        let q = affine(&a1, &lp.wq, &lp.bq);
        let k = affine(&a1, &lp.wk, &lp.bk);
        let v = affine(&a1, &lp.wv, &lp.bv);
        let heads: Vec<HeadOut> = (0..cfg.heads)
            .into_par_iter()
            .map(|hd| match &patterns {
                Some(ps) => sparse_head(&q, &k, &v, hd, dh, ps.get(l, hd)),
                None => dense_head(&q, &k, &v, hd, dh, &dense_mask(packed, cfg, l, hd)),
            })
            .collect();
        let mut ctx = Array2::zeros((n, h));
        let mut probs = Vec::with_capacity(cfg.heads);
        for (hd, out) in heads.into_iter().enumerate() {
            ctx.slice_mut(s![.., hd * dh..(hd + 1) * dh]).assign(&out.ctx);
            probs.push(out.probs);
        }
        let mut o = affine(&ctx, &lp.wo, &lp.bo);
        let drop1 = rng.as_mut().map(|r| dropout_mask(r, (n, h), cfg.dropout));
        if let Some(m) = &drop1 {
            o *= m;
        }
        let x1 = &x + &o;
        let (a2, ln2) = layer_norm(&x1, &lp.ln2_g, &lp.ln2_b);
        let pre = affine(&a2, &lp.w1, &lp.b1);
        let act = pre.mapv(gelu);
        let mut f = affine(&act, &lp.w2, &lp.b2);
        let drop2 = rng.as_mut().map(|r| dropout_mask(r, (n, h), cfg.dropout));
        if let Some(m) = &drop2 {
            f *= m;
        }
        x = &x1 + &f;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { layer: l });
        }
        layers.push(LayerCache {
            ln1,
            a1,
            q,
            k,
            v,
            probs,
            ctx,
            drop1,
            ln2,
            a2,
            pre,
            act,
            drop2,
        });
    }

    let (xf, lnf) = layer_norm(&x, &params.lnf_g, &params.lnf_b);
    let cls: Vec<usize> = packed.cls_positions().collect();
    let cls_states = xf.select(Axis(0), &cls);
    let pooled = affine(&cls_states, &params.pool_w, &params.pool_b).mapv(f64::tanh);
    let logits: Vec<f64> = pooled.dot(&params.head_w).iter().map(|z| z + params.head_b[0]).collect();
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::NonFinite { layer: cfg.layers });
    }
    let scores = logits.iter().map(|&z| logistic(z)).collect();
    Ok(Forward {
        logits,
        scores,
        mode,
        patterns,
        tokens: packed.tokens.clone(),
        segments: packed.segments.clone(),
        positions: packed.positions.clone(),
        cls,
        drop0,
        layers,
        lnf,
        cls_states,
        pooled,
    })
}

fn back_affine(x: &Array2<f64>, w: &Array2<f64>, dy: &Array2<f64>, dw: &mut Array2<f64>, db: &mut Array1<f64>) -> Array2<f64> {
    *dw += &x.t().dot(dy);
    *db += &dy.sum_axis(Axis(0));
    dy.dot(&w.t())
}

/// Exact gradients of `sum_i dlogits[i] * logits[i]` with respect to every
/// parameter.
pub fn backward(params: &Params, cfg: &RankerConfig, fwd: &Forward, dlogits: &[f64]) -> Result<Params> {
    if fwd.mode != AttentionMode::Sparse {
        return Err(Error::Validation("gradients need a sparse-mode forward pass".into()));
    }
    if dlogits.len() != fwd.logits.len() {
        return Err(Error::LengthMismatch {
            expected: fwd.logits.len(),
            actual: dlogits.len(),
        });
    }
    let patterns = fwd.patterns.as_ref().expect("sparse forward keeps patterns");
    let n = fwd.seq_len();
    let h = cfg.hidden;
    let dh = cfg.head_dim();
    let mut g = Params::zeros(cfg);

    let dz = ArrayView1::from(dlogits);
    g.head_b[0] = dz.sum();
    g.head_w = fwd.pooled.t().dot(&dz);
    let mut du = Array2::zeros(fwd.pooled.dim());
    for (i, mut row) in du.rows_mut().into_iter().enumerate() {
        row.iter_mut()
            .zip(fwd.pooled.row(i).iter().zip(params.head_w.iter()))
            .for_each(|(d, (&p, &w))| *d = dz[i] * w * (1.0 - p * p));
    }
    let dcls = back_affine(&fwd.cls_states, &params.pool_w, &du, &mut g.pool_w, &mut g.pool_b);
    let mut dxf = Array2::zeros((n, h));
    for (i, &c) in fwd.cls.iter().enumerate() {
        dxf.row_mut(c).assign(&dcls.row(i));
    }
    let mut dx = layer_norm_back(&dxf, &params.lnf_g, &fwd.lnf, &mut g.lnf_g, &mut g.lnf_b);

    for l in (0..cfg.layers).rev() {
        let lp: &LayerParams = &params.layers[l];
        let c = &fwd.layers[l];
        let gl = &mut g.layers[l];

        let mut df = dx.clone();
        if let Some(m) = &c.drop2 {
            df *= m;
        }
        let dact = back_affine(&c.act, &lp.w2, &df, &mut gl.w2, &mut gl.b2);
        let dpre = &dact * &c.pre.mapv(gelu_grad);
        let da2 = back_affine(&c.a2, &lp.w1, &dpre, &mut gl.w1, &mut gl.b1);
        let dx1 = dx + layer_norm_back(&da2, &lp.ln2_g, &c.ln2, &mut gl.ln2_g, &mut gl.ln2_b);

        let mut do_ = dx1.clone();
        if let Some(m) = &c.drop1 {
            do_ *= m;
        }
        let dctx = back_affine(&c.ctx, &lp.wo, &do_, &mut gl.wo, &mut gl.bo);
        let parts: Vec<_> = (0..cfg.heads)
            .into_par_iter()
            .map(|hd| sparse_head_back(c, &dctx, hd, dh, patterns.get(l, hd)))
            .collect();
        let mut dq = Array2::zeros((n, h));
        let mut dk = Array2::zeros((n, h));
        let mut dv = Array2::zeros((n, h));
        for (hd, (q, k, v)) in parts.into_iter().enumerate() {
            let cols = s![.., hd * dh..(hd + 1) * dh];
            dq.slice_mut(cols).assign(&q);
            dk.slice_mut(cols).assign(&k);
            dv.slice_mut(cols).assign(&v);
        }
        let mut da1 = back_affine(&c.a1, &lp.wq, &dq, &mut gl.wq, &mut gl.bq);
        da1 += &back_affine(&c.a1, &lp.wk, &dk, &mut gl.wk, &mut gl.bk);
        da1 += &back_affine(&c.a1, &lp.wv, &dv, &mut gl.wv, &mut gl.bv);
        dx = dx1 + layer_norm_back(&da1, &lp.ln1_g, &c.ln1, &mut gl.ln1_g, &mut gl.ln1_b);
    }

    if let Some(m) = &fwd.drop0 {
        dx *= m;
    }
    for i in 0..n {
        let row = dx.row(i);
        let mut t = g.tok.row_mut(fwd.tokens[i] as usize);
        t += &row;
        let mut s = g.seg.row_mut(fwd.segments[i] as usize);
        s += &row;
        let mut p = g.pos.row_mut(fwd.positions[i]);
        p += &row;
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_derivative_matches_difference() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let num = (gelu(x + 1e-6) - gelu(x - 1e-6)) / 2e-6;
            assert!((num - gelu_grad(x)).abs() < 1e-8, "{x}");
        }
    }

    #[test]
    fn logistic_is_stable() {
        assert_eq!(logistic(0.0), 0.5);
        assert!(logistic(-800.0) >= 0.0 && logistic(800.0) <= 1.0);
        assert!((logistic(2.0) + logistic(-2.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn layer_norm_rows_are_standardized() {
        let x = Array2::from_shape_vec((2, 4), vec![1.0, 2.0, 3.0, 4.0, -1.0, 0.0, 0.0, 5.0]).unwrap();
        let (y, _) = layer_norm(&x, &Array1::ones(4), &Array1::zeros(4));
        for r in y.rows() {
            assert!(r.sum().abs() < 1e-12);
            assert!((r.dot(&r) / 4.0 - 1.0).abs() < 1e-5);
        }
    }
}
