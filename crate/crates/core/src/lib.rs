pub mod cli;
pub mod corpus;
pub mod error;
pub mod interpret;
pub mod metrics;
pub mod ranker;
pub mod retriever;
pub mod selfcheck;
pub mod synth;
pub mod trainer;
pub mod transform;

pub use error::{Error, Result};
