//! `screen`: user-level risk screening over long post histories.
//!
//! Every subcommand is a thin shell around `screen-core`: parse arguments,
//! resolve the flat key/value config (flags override file values), run, and
//! map errors onto the exit convention — 0 success, 1 usage error, 2
//! data/validation error, 3 runtime error.

mod model;
mod ops;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "screen",
    version,
    about = "Prompt-based user-level risk screening over long post histories"
)]
struct Cli {
    /// Size of the worker thread pool; parallelizes runs and users without
    /// changing any output.
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    workers: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

/// Flags shared by the config-driven subcommands. Each one overrides the
/// config-file key of the same name.
#[derive(Args, Default, Clone)]
struct RunFlags {
    /// Flat `key = value` config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// User corpus (JSONL, one user per line).
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Concept lexicon: `surface<TAB>aspect[<TAB>relation]` lines.
    #[arg(long)]
    ontology: Option<PathBuf>,
    /// Negative verbalizer lexicon (one word per line).
    #[arg(long)]
    negatives: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Scoring backend: `mock` or `tiny`.
    #[arg(long)]
    backend: Option<String>,
    /// Evaluation mode: `full`, `fewshot(n,..)`, `early(x,..)`,
    /// `timewindow(x,..)`, or `ablation(prefix|rule)`.
    #[arg(long)]
    mode: Option<String>,
    /// Base seed; every random choice derives from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Independent repetitions per mode.
    #[arg(long)]
    runs: Option<usize>,
    /// Width of the onset-anchored early window, in weeks.
    #[arg(long)]
    span_weeks: Option<i64>,
    /// Write every rendered prompt to this file for inspection.
    #[arg(long)]
    dump_prompts: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a corpus; optionally write it back normalized.
    Ingest {
        /// User corpus (JSONL, one user per line).
        #[arg(long)]
        corpus: PathBuf,
        /// Write the normalized corpus here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Expected-statistics config to check the corpus against.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Check an ontology file and the verbalizers built from it.
    ValidateOntology {
        /// Concept lexicon to check.
        #[arg(long)]
        ontology: PathBuf,
        /// Negative verbalizer lexicon (defaults to the built-in list).
        #[arg(long)]
        negatives: Option<PathBuf>,
    },
    /// Generate a deterministic synthetic corpus.
    Synth {
        /// Synthetic-corpus spec (flat `key = value`).
        #[arg(long)]
        spec: PathBuf,
        /// Ontology supplying the planted concepts (overrides the spec's
        /// `ontology` key).
        #[arg(long)]
        ontology: Option<PathBuf>,
        /// Generator seed (overrides the spec's `seed` key).
        #[arg(long)]
        seed: Option<u64>,
        /// Corpus file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit per-user prefixes on the train split and save a model directory.
    Train {
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Score users from a saved model directory.
    Predict {
        /// Model directory written by `train`.
        #[arg(long)]
        model: PathBuf,
        /// Users to score (JSONL, one user per line).
        #[arg(long)]
        user_file: PathBuf,
        /// CSV output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write every rendered prompt to this file for inspection.
        #[arg(long)]
        dump_prompts: Option<PathBuf>,
    },
    /// Run the repeated-split evaluation protocol and emit reports.
    Evaluate {
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Evaluate with one pipeline stage removed.
    Ablate {
        /// Stage to remove: `prefix` or `rule`.
        #[arg(long)]
        drop: String,
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Re-render the CSV files from a saved report.json.
    Report {
        /// A report.json produced by `evaluate`.
        input: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            // --help/--version are successful displays, not usage errors.
            if matches!(err.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{err}");
                return ExitCode::SUCCESS;
            }
            eprint!("{err}");
            return ExitCode::from(1);
        }
    };

    if let Some(n) = cli.workers {
        if let Err(err) = rayon::ThreadPoolBuilder::new()
            .num_threads(n as usize)
            .build_global()
        {
            eprintln!("error: worker pool: {err}");
            return ExitCode::from(3);
        }
    }

    match ops::dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
