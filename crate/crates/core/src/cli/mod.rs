//! Command-line entry point: argument parsing, configuration and dispatch.

mod commands;
mod config;
mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};

pub use config::{Paths, RegimeConfig, RunConfig, SplitConfig, Target};
pub use commands::vocabulary_from_corpus;
pub use manifest::{file_sha256, Manifest, Timing, MANIFEST_FILE};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "glrank", version, about = "Retriever-ranker engine for index extraction and question retrieval")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand; each overrides its config key.
#[derive(Debug, Clone, Default, Args)]
struct Common {
    /// TOML run configuration
    #[arg(long)]
    config: Option<PathBuf>,
    /// output directory (paths.out)
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON-lines corpus (paths.corpus)
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// vocabulary file, one piece per line (paths.vocab)
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// worker threads; ENGINE_THREADS takes precedence
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build the inverted index and vocabulary
    Index {
        #[command(flatten)]
        common: Common,
    },
    /// Chronological train/test split of the corpus
    Split {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        fraction: Option<f64>,
    },
    /// Train the ranker
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        /// none, ssl or ssl+mt
        #[arg(long)]
        regime: Option<String>,
    },
    /// Evaluate a checkpoint on the held-out split
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Fused retrieval for one corpus document
    Retrieve {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        query_doc: String,
        /// documents returned; defaults to retriever.k
        #[arg(long)]
        k: Option<usize>,
        /// index.json written by `index`
        #[arg(long)]
        index: Option<PathBuf>,
    },
    /// Highlight report for one document, optionally with pair timelines
    Explain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        query_doc: String,
        #[arg(long)]
        model: Option<PathBuf>,
        /// candidates shown in the report
        #[arg(long, default_value_t = 5)]
        top: usize,
        /// checkpoints forming the timeline frames, in order
        #[arg(long, value_delimiter = ',')]
        frames: Vec<PathBuf>,
        /// term pair `source,target`; repeatable
        #[arg(long)]
        pair: Vec<String>,
    },
    /// Run the built-in oracle suite
    Selfcheck {
        #[command(flatten)]
        common: Common,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Index { common }
            | Command::Split { common, .. }
            | Command::Train { common, .. }
            | Command::Eval { common, .. }
            | Command::Retrieve { common, .. }
            | Command::Explain { common, .. }
            | Command::Selfcheck { common } => common,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Command::Index { .. } => "index",
            Command::Split { .. } => "split",
            Command::Train { .. } => "train",
            Command::Eval { .. } => "eval",
            Command::Retrieve { .. } => "retrieve",
            Command::Explain { .. } => "explain",
            Command::Selfcheck { .. } => "selfcheck",
        }
    }
}

fn parse_regime(s: &str) -> Result<RegimeConfig> {
    let (ssl, multitask) = match s {
        "none" => (false, false),
        "ssl" => (true, false),
        "ssl+mt" => (true, true),
        other => return Err(Error::Validation(format!("--regime must be none, ssl or ssl+mt, got `{other}`"))),
    };
    Ok(RegimeConfig {
        ssl,
        multitask,
        target: Target::Ie,
    })
}

/// Loads the config file and applies flag overrides.
fn build_config(cmd: &Command) -> Result<RunConfig> {
    let c = cmd.common();
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let p = &mut cfg.paths;
    for (flag, slot) in [(&c.out, &mut p.out), (&c.corpus, &mut p.corpus), (&c.vocab, &mut p.vocab)] {
        if flag.is_some() {
            slot.clone_from(flag);
        }
    }
    if c.seed.is_some() {
        cfg.seed = c.seed;
    }
    if c.threads.is_some() {
        cfg.threads = c.threads;
    }
    match cmd {
        Command::Split { fraction: Some(f), .. } => cfg.split.fraction = *f,
        Command::Train { steps, lr, regime, .. } => {
            if let Some(s) = steps {
                cfg.schedule.steps = *s;
            }
            if let Some(lr) = lr {
                cfg.schedule.lr = *lr;
            }
            if let Some(r) = regime {
                let target = cfg.regime.map(|r| r.target).unwrap_or_default();
                cfg.regime = Some(RegimeConfig { target, ..parse_regime(r)? });
            }
        }
        Command::Eval { model: Some(m), .. } | Command::Explain { model: Some(m), .. } => {
            cfg.paths.model = Some(m.clone());
        }
        Command::Retrieve { index, .. } if index.is_some() => {
            cfg.paths.index.clone_from(index);
        }
        _ => {}
    }
    let cfg = cfg.resolve();
    cfg.validate()?;
    cfg.check_paths()?;
    Ok(cfg)
}

/// Worker count from ENGINE_THREADS, else the config; 0 means all cores.
fn thread_count(cfg: &RunConfig) -> Result<usize> {
    match std::env::var("ENGINE_THREADS") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::Validation(format!("ENGINE_THREADS must be a non-negative integer, got `{v}`"))),
        Err(_) => Ok(cfg.threads.unwrap_or(0)),
    }
}

fn init_threads(n: usize) {
    // the global pool can only be set once per process
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
        log::debug!("thread pool already initialized: {e}");
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    let cfg = build_config(&cmd)?;
    init_threads(thread_count(&cfg)?);
    let name = cmd.name();
    match cmd {
        Command::Index { .. } => commands::index(&cfg, name),
        Command::Split { .. } => commands::split(&cfg, name),
        Command::Train { .. } => commands::train(&cfg, name),
        Command::Eval { .. } => commands::eval(&cfg, name),
        Command::Retrieve { query_doc, k, .. } => {
            let k = k.unwrap_or(cfg.retriever.k);
            commands::retrieve(&cfg, name, &query_doc, k)
        }
        Command::Explain {
            query_doc,
            top,
            frames,
            pair,
            ..
        } => commands::explain(&cfg, name, &query_doc, top, &frames, &pair),
        Command::Selfcheck { .. } => commands::selfcheck(&cfg, name),
    }
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code: 0 on success, 1 on validation errors, 2 on runtime
/// failures.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                EXIT_VALIDATION
            } else {
                EXIT_RUNTIME
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_flag_is_a_validation_exit() {
        assert_eq!(run(["glrank", "index", "--bogus"]), EXIT_VALIDATION);
        assert_eq!(run(["glrank", "frobnicate"]), EXIT_VALIDATION);
        assert_eq!(run(["glrank", "--help"]), EXIT_OK);
    }

    #[test]
    fn flags_override_file_values() {
        let cli = Cli::try_parse_from(["glrank", "train", "--steps", "7", "--lr", "0.5", "--regime", "ssl", "--seed", "3"])
            .unwrap();
        let cfg = build_config(&cli.command).unwrap();
        assert_eq!(cfg.schedule.steps, 7);
        assert_eq!(cfg.schedule.lr, 0.5);
        assert_eq!(cfg.schedule.seed, 3);
        assert_eq!(cfg.schedule.weights, [1.0, 1.0, 0.0]);
    }

    #[test]
    fn missing_corpus_names_the_key() {
        let cli = Cli::try_parse_from(["glrank", "index", "--corpus", "/nonexistent/c.jsonl", "--out", "/tmp/x"]).unwrap();
        let err = build_config(&cli.command).unwrap_err();
        assert!(err.is_validation());
        assert!(err.to_string().contains("paths.corpus"));
    }
}
