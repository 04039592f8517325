//! Documents, topics, judgments, vocabulary and the label hierarchy.

mod document;
mod hierarchy;
mod termlist;
mod topics;
pub mod vocab;

pub use document::{CorpusStore, Document};
pub use hierarchy::{HierarchyTree, ROOT};
pub use termlist::TermList;
pub use topics::{load_topics, save_topics, Grade, Qrels, Topic};
pub use vocab::{TokenId, Vocabulary};
