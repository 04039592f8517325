use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::RankerConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub ln1_g: Array1<f64>,
    pub ln1_b: Array1<f64>,
    pub wq: Array2<f64>,
    pub bq: Array1<f64>,
    pub wk: Array2<f64>,
    pub bk: Array1<f64>,
    pub wv: Array2<f64>,
    pub bv: Array1<f64>,
    pub wo: Array2<f64>,
    pub bo: Array1<f64>,
    pub ln2_g: Array1<f64>,
    pub ln2_b: Array1<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

/// Every trainable tensor. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub tok: Array2<f64>,
    pub seg: Array2<f64>,
    pub pos: Array2<f64>,
    pub layers: Vec<LayerParams>,
    pub lnf_g: Array1<f64>,
    pub lnf_b: Array1<f64>,
    pub pool_w: Array2<f64>,
    pub pool_b: Array1<f64>,
    pub head_w: Array1<f64>,
    pub head_b: Array1<f64>,
}

impl LayerParams {
    fn zeros(h: usize, f: usize) -> Self {
        let m = |r, c| Array2::zeros((r, c));
        let v = |n| Array1::zeros(n);
        Self {
            ln1_g: v(h),
            ln1_b: v(h),
            wq: m(h, h),
            bq: v(h),
            wk: m(h, h),
            bk: v(h),
            wv: m(h, h),
            bv: v(h),
            wo: m(h, h),
            bo: v(h),
            ln2_g: v(h),
            ln2_b: v(h),
            w1: m(h, f),
            b1: v(f),
            w2: m(f, h),
            b2: v(h),
        }
    }
}

macro_rules! layer_fields {
    ($m:ident) => {
        $m!(ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2)
    };
}

impl Params {
    /// All-zero tensors shaped for `cfg`.
    pub fn zeros(cfg: &RankerConfig) -> Self {
        let h = cfg.hidden;
        Self {
            tok: Array2::zeros((cfg.vocab_size, h)),
            seg: Array2::zeros((2, h)),
            pos: Array2::zeros((cfg.max_positions, h)),
            layers: (0..cfg.layers).map(|_| LayerParams::zeros(h, cfg.ffn)).collect(),
            lnf_g: Array1::zeros(h),
            lnf_b: Array1::zeros(h),
            pool_w: Array2::zeros((h, cfg.output_size)),
            pool_b: Array1::zeros(cfg.output_size),
            head_w: Array1::zeros(cfg.output_size),
            head_b: Array1::zeros(1),
        }
    }

    /// Normal weights, unit layer-norm gains, zero biases and a zero
    /// scoring probe.
    pub fn init(cfg: &RankerConfig) -> Self {
        let mut p = Self::zeros(cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);
        let normal = Normal::new(0.0, cfg.init_std).expect("positive std");
        let mut fill = |a: &mut [f64]| a.iter_mut().for_each(|x| *x = normal.sample(&mut rng));
        for (name, t) in p.tensors_mut() {
            let leaf = name.rsplit('.').next().unwrap_or(&name);
            match leaf {
                "ln1_g" | "ln2_g" | "lnf_g" => t.fill(1.0),
                "tok" | "seg" | "pos" | "wq" | "wk" | "wv" | "wo" | "w1" | "w2" | "pool_w" => fill(t),
                _ => {}
            }
        }
        p
    }

    /// `(name, shape, values)` for every tensor in a fixed order.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out: Vec<(String, Vec<usize>, &[f64])> = Vec::new();
        macro_rules! push {
            ($name:expr, $t:expr) => {
                out.push(($name, $t.shape().to_vec(), $t.as_slice().expect("standard layout")))
            };
        }
        push!("tok".into(), self.tok);
        push!("seg".into(), self.seg);
        push!("pos".into(), self.pos);
        for (i, l) in self.layers.iter().enumerate() {
            macro_rules! each {
                ($($f:ident),*) => { $( push!(format!("layer{i}.{}", stringify!($f)), l.$f); )* };
            }
            layer_fields!(each);
        }
        push!("lnf_g".into(), self.lnf_g);
        push!("lnf_b".into(), self.lnf_b);
        push!("pool_w".into(), self.pool_w);
        push!("pool_b".into(), self.pool_b);
        push!("head_w".into(), self.head_w);
        push!("head_b".into(), self.head_b);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = Vec::new();
        macro_rules! push {
            ($name:expr, $t:expr) => {
                out.push(($name, $t.as_slice_mut().expect("standard layout")))
            };
        }
        push!("tok".into(), self.tok);
        push!("seg".into(), self.seg);
        push!("pos".into(), self.pos);
        for (i, l) in self.layers.iter_mut().enumerate() {
            macro_rules! each {
                ($($f:ident),*) => { $( push!(format!("layer{i}.{}", stringify!($f)), l.$f); )* };
            }
            layer_fields!(each);
        }
        push!("lnf_g".into(), self.lnf_g);
        push!("lnf_b".into(), self.lnf_b);
        push!("pool_w".into(), self.pool_w);
        push!("pool_b".into(), self.pool_b);
        push!("head_w".into(), self.head_w);
        push!("head_b".into(), self.head_b);
        out
    }

    pub fn count(&self) -> usize {
        self.tensors().iter().map(|t| t.2.len()).sum()
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Params, scale: f64) {
        for ((_, a), (_, _, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += scale * y);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for (_, a) in self.tensors_mut() {
            a.iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.2.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.2.iter().all(|x| x.is_finite()))
    }
}

const MAGIC: &[u8; 4] = b"GLRK";
const VERSION: u32 = 1;

/// Writes config and tensors; values are stored as little-endian f64 so a
/// reload is bit-exact.
pub fn write_checkpoint(w: &mut impl Write, cfg: &RankerConfig, params: &Params) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    let json = serde_json::to_vec(cfg).map_err(std::io::Error::other)?;
    w.write_u64::<LittleEndian>(json.len() as u64)?;
    w.write_all(&json)?;
    let tensors = params.tensors();
    w.write_u32::<LittleEndian>(tensors.len() as u32)?;
    for (name, shape, data) in tensors {
        w.write_u32::<LittleEndian>(name.len() as u32)?;
        w.write_all(name.as_bytes())?;
        w.write_u32::<LittleEndian>(shape.len() as u32)?;
        for d in shape {
            w.write_u64::<LittleEndian>(d as u64)?;
        }
        for &x in data {
            w.write_f64::<LittleEndian>(x)?;
        }
    }
    Ok(())
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<(RankerConfig, Params)> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    let io = |e: std::io::Error| Error::Checkpoint(e.to_string());
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = r.read_u32::<LittleEndian>().map_err(io)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let n = r.read_u64::<LittleEndian>().map_err(io)? as usize;
    let mut json = vec![0u8; n];
    r.read_exact(&mut json).map_err(io)?;
    let cfg: RankerConfig = serde_json::from_slice(&json)?;
    cfg.validate()?;
    let mut params = Params::zeros(&cfg);
    let count = r.read_u32::<LittleEndian>().map_err(io)? as usize;
    let expected: Vec<(String, Vec<usize>)> = params.tensors().into_iter().map(|(n, s, _)| (n, s)).collect();
    if count != expected.len() {
        return Err(Error::Checkpoint(format!("expected {} tensors, found {count}", expected.len())));
    }
    for ((name, shape), (_, dst)) in expected.iter().zip(params.tensors_mut()) {
        let len = r.read_u32::<LittleEndian>().map_err(io)? as usize;
        let mut buf = vec![0u8; len];
        r.read_exact(&mut buf).map_err(io)?;
        if buf != name.as_bytes() {
            return Err(Error::Checkpoint(format!("expected tensor `{name}`")));
        }
        let ndim = r.read_u32::<LittleEndian>().map_err(io)? as usize;
        let dims = (0..ndim)
            .map(|_| r.read_u64::<LittleEndian>().map(|d| d as usize))
            .collect::<std::io::Result<Vec<_>>>()
            .map_err(io)?;
        if &dims != shape {
            return Err(Error::Checkpoint(format!("tensor `{name}` has shape {dims:?}, expected {shape:?}")));
        }
        r.read_f64_into::<LittleEndian>(dst).map_err(io)?;
    }
    Ok((cfg, params))
}

pub fn save_checkpoint(path: impl AsRef<Path>, cfg: &RankerConfig, params: &Params) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_checkpoint(&mut w, cfg, params).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(RankerConfig, Params)> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&mut std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_seeded_and_probe_is_zero() {
        let cfg = RankerConfig::toy(30);
        let a = Params::init(&cfg);
        assert_eq!(a, Params::init(&cfg));
        assert!(a.head_w.iter().all(|&x| x == 0.0));
        assert!(a.layers[0].ln1_g.iter().all(|&x| x == 1.0));
        assert!(a.layers[1].wq.iter().any(|&x| x != 0.0));
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let cfg = RankerConfig::toy(30);
        let mut p = Params::init(&cfg);
        p.head_w[0] = 1.0 / 3.0;
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &cfg, &p).unwrap();
        let (c2, p2) = read_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(c2, cfg);
        for (a, b) in p.tensors().iter().zip(p2.tensors()) {
            assert_eq!(a.0, b.0);
            assert!(a.2.iter().zip(b.2).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn corrupt_checkpoint_is_rejected() {
        let cfg = RankerConfig::toy(30);
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &cfg, &Params::init(&cfg)).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(read_checkpoint(&mut buf.as_slice()).is_err());
        assert!(read_checkpoint(&mut &b"nope"[..]).is_err());
    }
}
