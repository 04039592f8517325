use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::vocab::CONTINUATION;
use crate::corpus::{TokenId, Vocabulary};
use crate::error::{Error, Result};

use super::AttributionMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HighlightToken {
    pub text: String,
    /// 0 for no highlight, 1 to 3 by salience
    pub level: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSnippet {
    pub id: String,
    pub score: f64,
    pub tokens: Vec<HighlightToken>,
}

/// Everything shown for one decision; the JSON twin is this struct.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub title: String,
    pub query: Vec<HighlightToken>,
    pub candidates: Vec<CandidateSnippet>,
    pub predicted: Vec<(String, f64)>,
    /// runner-up outputs, best first
    pub alternatives: Vec<(String, f64)>,
}

fn highlight(vocab: &Vocabulary, tokens: &[TokenId], levels: &[u8]) -> Vec<HighlightToken> {
    tokens
        .iter()
        .zip(levels)
        .map(|(&t, &level)| HighlightToken {
            text: vocab.piece(t).to_string(),
            level,
        })
        .collect()
}

impl Report {
    /// Query highlights come from the local levels, candidate highlights
    /// from the global ones. Only the `top_n` best-scored candidates are kept.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        title: impl Into<String>,
        map: &AttributionMap,
        vocab: &Vocabulary,
        candidate_ids: &[String],
        scores: &[f64],
        predicted: Vec<(String, f64)>,
        alternatives: Vec<(String, f64)>,
        top_n: usize,
    ) -> Result<Self> {
        let k = map.candidate_tokens.len();
        for len in [candidate_ids.len(), scores.len()] {
            if len != k {
                return Err(Error::LengthMismatch { expected: k, actual: len });
            }
        }
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then_with(|| candidate_ids[a].cmp(&candidate_ids[b])));
        let candidates = order
            .into_iter()
            .take(top_n)
            .map(|i| CandidateSnippet {
                id: candidate_ids[i].clone(),
                score: scores[i],
                tokens: highlight(vocab, &map.candidate_tokens[i], &map.global_levels[i]),
            })
            .collect();
        Ok(Self {
            title: title.into(),
            query: highlight(vocab, &map.query_tokens, &map.local_levels),
            candidates,
            predicted,
            alternatives,
        })
    }

    /// Tokens carrying a nonzero level anywhere in the report.
    pub fn highlighted(&self) -> usize {
        self.query
            .iter()
            .chain(self.candidates.iter().flat_map(|c| &c.tokens))
            .filter(|t| t.level > 0)
            .count()
    }

    pub fn to_html(&self) -> String {
        let mut h = String::new();
        h.push_str("<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\">\n");
        h.push_str(&format!("<title>{}</title>\n", escape(&self.title)));
        h.push_str(
            "<style>\nbody{font-family:sans-serif;max-width:60em;margin:2em auto;line-height:1.6}\n\
             .hl{border-radius:3px;padding:0 2px}\n.hl1{background:#fff3c4}\n.hl2{background:#ffd36b}\n\
             .hl3{background:#ff9f43;font-weight:bold}\n.score{color:#666;font-size:90%}\n</style>\n",
        );
        h.push_str("</head><body>\n");
        h.push_str(&format!("<h1>{}</h1>\n", escape(&self.title)));
        h.push_str("<section id=\"query\"><h2>Query</h2>\n<p>");
        h.push_str(&tokens_html(&self.query));
        h.push_str("</p></section>\n<section id=\"candidates\"><h2>Top candidates</h2>\n");
        for c in &self.candidates {
            h.push_str(&format!(
                "<div class=\"candidate\"><h3>{} <span class=\"score\">{:.4}</span></h3>\n<p>{}</p></div>\n",
                escape(&c.id),
                c.score,
                tokens_html(&c.tokens)
            ));
        }
        h.push_str("</section>\n<section id=\"predicted\"><h2>Predicted</h2>\n<ul>\n");
        for (t, s) in &self.predicted {
            h.push_str(&format!("<li>{} <span class=\"score\">{s:.4}</span></li>\n", escape(t)));
        }
        h.push_str("</ul></section>\n");
        if !self.alternatives.is_empty() {
            h.push_str("<section id=\"alternatives\"><h2>Suggested alternatives</h2>\n<ul>\n");
            for (t, s) in &self.alternatives {
                h.push_str(&format!("<li>{} <span class=\"score\">{s:.4}</span></li>\n", escape(t)));
            }
            h.push_str("</ul></section>\n");
        }
        h.push_str("</body></html>\n");
        h
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn tokens_html(tokens: &[HighlightToken]) -> String {
    let mut out = String::new();
    for (i, t) in tokens.iter().enumerate() {
        let (text, glued) = match t.text.strip_prefix(CONTINUATION) {
            Some(rest) => (rest, true),
            None => (t.text.as_str(), false),
        };
        if i > 0 && !glued {
            out.push(' ');
        }
        if t.level > 0 {
            out.push_str(&format!("<span class=\"hl hl{}\">{}</span>", t.level, escape(text)));
        } else {
            out.push_str(&escape(text));
        }
    }
    out
}

/// Writes `report.html` and `report.json` into `dir`.
pub fn render_report(report: &Report, dir: impl AsRef<Path>) -> Result<(PathBuf, PathBuf)> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let html = dir.join("report.html");
    let json = dir.join("report.json");
    fs::write(&html, report.to_html()).map_err(|e| Error::io(&html, e))?;
    fs::write(&json, serde_json::to_string_pretty(report)?).map_err(|e| Error::io(&json, e))?;
    Ok((html, json))
}
