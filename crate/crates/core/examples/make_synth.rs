//! Writes the synthetic keyword-cluster fixture used by the end-to-end
//! tests, plus a toy run configuration, into the given directory.
//!
//!     cargo run --example make_synth -- /tmp/synth

use glrank::synth::{generate, SynthConfig};

const CONFIG: &str = r#"seed = 13

[paths]
corpus = "corpus.jsonl"
vocab = "vocab.txt"
hierarchy = "hierarchy.tsv"
termlist = "termlist.txt"
topics = "topics.jsonl"
qrels = "qrels.txt"

[retriever]
k = 10
m = 10
k_ir = 32

[ranker]
layers = 2
hidden = 16
heads = 2
ffn = 32
max_positions = 34
windows = [4, 8]
dilations = [1, 2]
dilated_heads = 1
dropout = 0.0
output_size = 8
per_doc_cap = 32
init_std = 0.2

[schedule]
steps = 9000
batch_size = 16
lr = 0.05

[regime]
ssl = true
multitask = true
target = "ie"
"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::args().nth(1).ok_or("usage: make_synth <dir>")?;
    let bundle = generate(&SynthConfig::default())?;
    bundle.write(&dir)?;
    std::fs::write(std::path::Path::new(&dir).join("run.toml"), CONFIG)?;
    println!("wrote {} documents and {} topics to {dir}", bundle.corpus.len(), bundle.topics.len());
    Ok(())
}
