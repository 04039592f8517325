use std::fs;
use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::vocab::UNK;
use crate::corpus::{TokenId, Vocabulary};
use crate::error::{Error, Result};
use crate::ranker::{AttentionMode, RankerModel};

/// Packed tokens of one sample with its attention matrices.
#[derive(Debug, Clone)]
pub struct SampleAttention {
    pub tokens: Vec<TokenId>,
    pub attention: Vec<Array2<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSeries {
    pub source: String,
    pub target: String,
    /// one value per frame, scaled so the largest is 1
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TimelineSeries {
    pub frames: Vec<String>,
    pub series: Vec<PairSeries>,
}

const CSV_HEADER: [&str; 4] = ["frame", "source_term", "target_term", "value"];

impl TimelineSeries {
    /// `frame,source_term,target_term,value` rows, frame-major per pair.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let bad = |e: csv::Error| Error::Validation(format!("timeline csv: {e}"));
        w.write_record(CSV_HEADER).map_err(bad)?;
        for s in &self.series {
            for (f, v) in self.frames.iter().zip(&s.values) {
                w.write_record([f.as_str(), &s.source, &s.target, &v.to_string()]).map_err(bad)?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Validation(format!("timeline csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Inverse of [`TimelineSeries::to_csv`]; frames keep first-seen order.
    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |e: csv::Error| Error::Validation(format!("timeline csv: {e}"));
        let mut r = csv::Reader::from_reader(text.as_bytes());
        if r.headers().map_err(bad)? != CSV_HEADER.as_slice() {
            return Err(Error::Validation("timeline csv: unexpected header".into()));
        }
        let mut out = Self::default();
        for rec in r.records() {
            let rec = rec.map_err(bad)?;
            let value: f64 = rec[3]
                .parse()
                .map_err(|_| Error::Validation(format!("timeline csv: bad value `{}`", &rec[3])))?;
            if !out.frames.iter().any(|f| f == &rec[0]) {
                out.frames.push(rec[0].to_string());
            }
            match out.series.last_mut().filter(|s| s.source == rec[1] && s.target == rec[2]) {
                Some(s) => s.values.push(value),
                None => out.series.push(PairSeries {
                    source: rec[1].to_string(),
                    target: rec[2].to_string(),
                    values: vec![value],
                }),
            }
        }
        Ok(out)
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()?).map_err(|e| Error::io(path, e))
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_csv(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Every position covered by an occurrence of `term`.
fn positions(tokens: &[TokenId], term: &[TokenId]) -> Vec<usize> {
    if term.is_empty() || term.len() > tokens.len() {
        return Vec::new();
    }
    (0..=tokens.len() - term.len())
        .filter(|&s| tokens[s..s + term.len()] == *term)
        .flat_map(|s| s..s + term.len())
        .collect()
}

/// Attention exchanged between the two position sets, both directions,
/// averaged over position pairs and matrices.
fn pair_weight(sample: &SampleAttention, a: &[usize], b: &[usize]) -> Option<f64> {
    let pairs: Vec<(usize, usize)> = a
        .iter()
        .flat_map(|&p| b.iter().map(move |&q| (p, q)))
        .filter(|(p, q)| p != q)
        .collect();
    if pairs.is_empty() || sample.attention.is_empty() {
        return None;
    }
    let total: f64 = sample
        .attention
        .iter()
        .map(|m| pairs.iter().map(|&(p, q)| m[[p, q]] + m[[q, p]]).sum::<f64>())
        .sum();
    Some(total / (pairs.len() * sample.attention.len()) as f64)
}

fn probe_tokens(vocab: &Vocabulary, term: &str) -> Result<Vec<TokenId>> {
    let t = vocab.tokenize(term);
    if t.is_empty() || t.contains(&UNK) {
        return Err(Error::Validation(format!("probe term `{term}` does not tokenize cleanly")));
    }
    Ok(t)
}

/// Pair timelines from explicit attention, one sample list per frame.
///
/// A pair that co-occurs in no sample of any frame is left out with a
/// warning. Frames where it does not co-occur get 0.
pub fn timeline_from_attention(
    frames: &[(String, Vec<SampleAttention>)],
    pairs: &[(String, String)],
    vocab: &Vocabulary,
) -> Result<TimelineSeries> {
    if frames.len() < 2 {
        return Err(Error::Validation("a timeline needs at least two frames".into()));
    }
    let mut out = TimelineSeries {
        frames: frames.iter().map(|(f, _)| f.clone()).collect(),
        series: Vec::new(),
    };
    for (src, dst) in pairs {
        let (a, b) = (probe_tokens(vocab, src)?, probe_tokens(vocab, dst)?);
        let mut seen = false;
        let mut values: Vec<f64> = frames
            .iter()
            .map(|(_, samples)| {
                let w: Vec<f64> = samples
                    .iter()
                    .filter_map(|s| pair_weight(s, &positions(&s.tokens, &a), &positions(&s.tokens, &b)))
                    .collect();
                seen |= !w.is_empty();
                if w.is_empty() {
                    0.0
                } else {
                    w.iter().sum::<f64>() / w.len() as f64
                }
            })
            .collect();
        if !seen {
            log::warn!("probe pair ({src}, {dst}) never co-occurs; series omitted");
            continue;
        }
        let max = values.iter().copied().fold(0.0, f64::max);
        if max > 0.0 {
            values.iter_mut().for_each(|v| *v /= max);
        }
        out.series.push(PairSeries {
            source: src.clone(),
            target: dst.clone(),
            values,
        });
    }
    Ok(out)
}

/// Runs every checkpoint over the samples (query, candidates) and builds
/// the pair timelines from every layer and head.
pub fn build_timeline(
    checkpoints: &[(String, &RankerModel)],
    pairs: &[(String, String)],
    samples: &[(Vec<TokenId>, Vec<Vec<TokenId>>)],
    vocab: &Vocabulary,
) -> Result<TimelineSeries> {
    let frames = checkpoints
        .iter()
        .map(|(name, model)| {
            let attn = samples
                .par_iter()
                .map(|(q, cands)| {
                    let packed = model.pack(q, cands)?;
                    let fwd = model.forward(&packed, AttentionMode::Sparse, None)?;
                    let attention = (0..fwd.layers())
                        .flat_map(|l| (0..fwd.heads()).map(move |h| (l, h)))
                        .map(|(l, h)| fwd.attention(l, h))
                        .collect();
                    Ok(SampleAttention {
                        tokens: packed.tokens,
                        attention,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((name.clone(), attn))
        })
        .collect::<Result<Vec<_>>>()?;
    timeline_from_attention(&frames, pairs, vocab)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocabulary {
        Vocabulary::with_words(["fever", "cough", "rash"]).unwrap()
    }

    fn sample(w: f64) -> SampleAttention {
        // fever cough rash
        let tokens = vec![5, 6, 7];
        let mut m = Array2::from_elem((3, 3), 0.1);
        m[[0, 1]] = w;
        m[[1, 0]] = w;
        SampleAttention {
            tokens,
            attention: vec![m],
        }
    }

    fn pair() -> Vec<(String, String)> {
        vec![("fever".into(), "cough".into())]
    }

    #[test]
    fn doubled_attention_gives_half_then_one() {
        let frames = vec![("2019".into(), vec![sample(0.2)]), ("2020".into(), vec![sample(0.4)])];
        let t = timeline_from_attention(&frames, &pair(), &vocab()).unwrap();
        assert_eq!(t.series.len(), 1);
        assert_eq!(t.series[0].values, vec![0.5, 1.0]);
    }

    #[test]
    fn identical_frames_are_all_one() {
        let frames = vec![("a".into(), vec![sample(0.3)]), ("b".into(), vec![sample(0.3)]), ("c".into(), vec![sample(0.3)])];
        let t = timeline_from_attention(&frames, &pair(), &vocab()).unwrap();
        assert_eq!(t.series[0].values, vec![1.0; 3]);
    }

    #[test]
    fn absent_pair_is_omitted_and_masked_pair_is_zero() {
        let mut s = sample(0.0);
        s.attention[0][[0, 1]] = 0.0;
        s.attention[0][[1, 0]] = 0.0;
        let frames = vec![("a".into(), vec![s.clone()]), ("b".into(), vec![s])];
        let pairs = vec![("fever".into(), "cough".into()), ("fever".into(), "fever".into())];
        let t = timeline_from_attention(&frames, &pairs, &vocab()).unwrap();
        // fever-fever has no distinct position pair, so it never co-occurs
        assert_eq!(t.series.len(), 1);
        assert_eq!(t.series[0].values, vec![0.0, 0.0]);
    }

    #[test]
    fn one_frame_is_rejected() {
        let frames = vec![("a".into(), vec![sample(0.3)])];
        assert!(timeline_from_attention(&frames, &pair(), &vocab()).is_err());
    }

    #[test]
    fn csv_layout() {
        let frames = vec![("2019".into(), vec![sample(0.2)]), ("2020".into(), vec![sample(0.4)])];
        let t = timeline_from_attention(&frames, &pair(), &vocab()).unwrap();
        let csv = t.to_csv().unwrap();
        assert_eq!(csv, "frame,source_term,target_term,value\n2019,fever,cough,0.5\n2020,fever,cough,1\n");
        assert_eq!(TimelineSeries::from_csv(&csv).unwrap(), t);
    }
}
