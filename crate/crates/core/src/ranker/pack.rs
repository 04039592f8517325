use serde::{Deserialize, Serialize};

use crate::corpus::vocab::{CLS, SEP};
use crate::corpus::TokenId;
use crate::error::{Error, Result};

/// What a packed position holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    Query,
    Cls(usize),
    Cand(usize),
    Sep,
}

/// Where candidate `i` sits in the packed sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub cls: usize,
    /// first token position (`cls + 1`)
    pub start: usize,
    /// one past the last token; the [SEP] sits here
    pub end: usize,
}

/// `query [SEP] ([CLS]_i doc_i [SEP])*` with per-document position ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackedInput {
    pub tokens: Vec<TokenId>,
    pub segments: Vec<u8>,
    pub positions: Vec<usize>,
    pub roles: Vec<Role>,
    pub query_len: usize,
    pub spans: Vec<Span>,
    /// documents (query included) that lost tokens to the cap
    pub truncated: usize,
    pub dropped_tokens: usize,
}

impl PackedInput {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn k(&self) -> usize {
        self.spans.len()
    }

    pub fn cls_positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.spans.iter().map(|s| s.cls)
    }
}

pub fn pack_input<S: AsRef<[TokenId]>>(query: &[TokenId], candidates: &[S], per_doc_cap: usize) -> Result<PackedInput> {
    if query.is_empty() {
        return Err(Error::Validation("empty query".into()));
    }
    if candidates.is_empty() {
        return Err(Error::Validation("no candidate documents to pack".into()));
    }
    if per_doc_cap == 0 {
        return Err(Error::Validation("per-document cap must be at least 1".into()));
    }
    let mut p = PackedInput {
        tokens: Vec::new(),
        segments: Vec::new(),
        positions: Vec::new(),
        roles: Vec::new(),
        query_len: 0,
        spans: Vec::with_capacity(candidates.len()),
        truncated: 0,
        dropped_tokens: 0,
    };
    let cap = |seq: &[TokenId], p: &mut PackedInput| -> usize {
        if seq.len() > per_doc_cap {
            p.truncated += 1;
            p.dropped_tokens += seq.len() - per_doc_cap;
        }
        seq.len().min(per_doc_cap)
    };

    let q = cap(query, &mut p);
    p.query_len = q;
    for (i, &t) in query[..q].iter().enumerate() {
        p.push(t, 0, i, Role::Query);
    }
    p.push(SEP, 0, q, Role::Sep);

    for (c, doc) in candidates.iter().enumerate() {
        let doc = doc.as_ref();
        let n = cap(doc, &mut p);
        let cls = p.len();
        p.push(CLS, 1, 0, Role::Cls(c));
        for (i, &t) in doc[..n].iter().enumerate() {
            p.push(t, 1, i + 1, Role::Cand(c));
        }
        p.push(SEP, 1, n + 1, Role::Sep);
        p.spans.push(Span {
            cls,
            start: cls + 1,
            end: cls + 1 + n,
        });
    }
    Ok(p)
}

impl PackedInput {
    fn push(&mut self, t: TokenId, seg: u8, pos: usize, role: Role) {
        self.tokens.push(t);
        self.segments.push(seg);
        self.positions.push(pos);
        self.roles.push(role);
    }
}
