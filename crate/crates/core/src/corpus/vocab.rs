//! Fixed subword vocabulary and greedy longest-match tokenization.
//!
//! Text is NFC-normalized, lowercased and split on whitespace; every
//! punctuation character becomes a word of its own. Each word is then cut
//! into the longest vocabulary prefix, repeatedly, with non-initial pieces
//! looked up under the `##` continuation prefix. A character that starts no
//! known piece is emitted as `[UNK]`.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const UNK: TokenId = 1;
pub const CLS: TokenId = 2;
pub const SEP: TokenId = 3;
pub const MASK: TokenId = 4;

pub const SPECIAL_TOKENS: [&str; 5] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];
pub const CONTINUATION: &str = "##";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    pieces: Vec<String>,
    ids: HashMap<String, TokenId>,
}

impl Vocabulary {
    /// Builds a vocabulary from an ordered piece list whose first five entries
    /// are the special tokens in their fixed order.
    pub fn from_pieces(pieces: Vec<String>) -> Result<Self> {
        if pieces.len() < SPECIAL_TOKENS.len() {
            return Err(Error::Validation("vocabulary shorter than the special-token header".into()));
        }
        for (i, s) in SPECIAL_TOKENS.iter().enumerate() {
            if pieces[i] != *s {
                return Err(Error::Validation(format!(
                    "vocabulary line {} must be {s}, found `{}`",
                    i + 1,
                    pieces[i]
                )));
            }
        }
        let mut ids = HashMap::with_capacity(pieces.len());
        for (i, p) in pieces.iter().enumerate() {
            if p.is_empty() {
                return Err(Error::Validation(format!("empty vocabulary entry at line {}", i + 1)));
            }
            if ids.insert(p.clone(), i as TokenId).is_some() {
                return Err(Error::DuplicateId {
                    kind: "vocabulary entry",
                    id: p.clone(),
                });
            }
        }
        Ok(Self { pieces, ids })
    }

    /// Specials followed by `words`, in order. Convenience for fixtures.
    pub fn with_words<I, S>(words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut pieces: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        pieces.extend(words.into_iter().map(Into::into));
        Self::from_pieces(pieces)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let pieces = BufReader::new(file)
            .lines()
            .map(|l| l.map(|s| s.trim_end_matches('\r').to_string()))
            .collect::<std::io::Result<Vec<_>>>()
            .map_err(|e| Error::io(path, e))?;
        Self::from_pieces(pieces)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
        for p in &self.pieces {
            writeln!(out, "{p}").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn id(&self, piece: &str) -> Option<TokenId> {
        self.ids.get(piece).copied()
    }

    pub fn piece(&self, id: TokenId) -> &str {
        self.pieces.get(id as usize).map_or("[UNK]", String::as_str)
    }

    pub fn is_special(id: TokenId) -> bool {
        (id as usize) < SPECIAL_TOKENS.len()
    }

    /// Tokenizes `text` into subword ids. Total and deterministic.
    pub fn tokenize(&self, text: &str) -> Vec<TokenId> {
        let mut out = Vec::new();
        for word in normalize(text) {
            self.segment_word(&word, &mut out);
        }
        out
    }

    fn segment_word(&self, word: &str, out: &mut Vec<TokenId>) {
        // char boundaries, including the end
        let bounds: Vec<usize> = word
            .char_indices()
            .map(|(i, _)| i)
            .chain(std::iter::once(word.len()))
            .collect();
        let mut start = 0;
        let mut key = String::with_capacity(word.len() + 2);
        while start + 1 < bounds.len() {
            let mut matched = None;
            for end in (start + 1..bounds.len()).rev() {
                key.clear();
                if start > 0 {
                    key.push_str(CONTINUATION);
                }
                key.push_str(&word[bounds[start]..bounds[end]]);
                if let Some(&id) = self.ids.get(key.as_str()) {
                    matched = Some((id, end));
                    break;
                }
            }
            match matched {
                Some((id, end)) => {
                    out.push(id);
                    start = end;
                }
                None => {
                    out.push(UNK);
                    start += 1;
                }
            }
        }
    }

    /// Inverse of [`Vocabulary::tokenize`] up to normalization: continuation
    /// pieces are glued to their predecessor, words are joined by one space.
    pub fn detokenize(&self, ids: &[TokenId]) -> String {
        let mut s = String::new();
        for &id in ids {
            let piece = self.piece(id);
            match piece.strip_prefix(CONTINUATION) {
                Some(rest) if !s.is_empty() && !rest.is_empty() => s.push_str(rest),
                _ => {
                    if !s.is_empty() {
                        s.push(' ');
                    }
                    s.push_str(piece);
                }
            }
        }
        s
    }
}

fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || ('\u{2010}'..='\u{2027}').contains(&c)
        || ('\u{2030}'..='\u{205E}').contains(&c)
        || matches!(c, '¡' | '¿' | '«' | '»' | '§' | '¶' | '·')
}

/// NFC + lowercase + whitespace/punctuation split.
pub fn normalize(text: &str) -> Vec<String> {
    let mut words = Vec::new();
    let mut cur = String::new();
    let lowered: String = text.nfc().collect::<String>().to_lowercase();
    for c in lowered.chars() {
        if c.is_whitespace() || c.is_control() {
            if !cur.is_empty() {
                words.push(std::mem::take(&mut cur));
            }
        } else if is_punctuation(c) {
            if !cur.is_empty() {
                words.push(std::mem::take(&mut cur));
            }
            words.push(c.to_string());
        } else {
            cur.push(c);
        }
    }
    if !cur.is_empty() {
        words.push(cur);
    }
    words
}

/// The normalized form of `text`: normalized words joined by single spaces.
pub fn normalized_text(text: &str) -> String {
    normalize(text).join(" ")
}
