//! `hubtext`: batch pipeline for hub-text search and evaluation.
//!
//! Exit status: 0 on success, 1 on invalid configuration or input, 2 on
//! runtime or encoder failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;

#[derive(Debug, Parser)]
#[command(
    name = "hubtext",
    version,
    about = "Find and evaluate hub texts for cross-modal encoders"
)]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(flatten)]
    flags: Flags,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Closed-form optimal hub embedding of the tuning images.
    HubEmbed,
    /// Pick the starting text from inversion hypotheses or a corpus.
    Init,
    /// Beam local search for each k; reports per-k results and the overall best.
    Search,
    /// CLIPScore, win rates and bootstrap p-values for caption systems.
    EvalCaption,
    /// Retrieval metrics with the hub text injected into the index.
    EvalRetrieval,
    /// Trajectory CSV of one run stored in a search result file.
    ExportTrajectory {
        /// Beam size to export; defaults to the overall best run.
        #[arg(long = "run-k")]
        run_k: Option<usize>,
        /// Write here instead of standard output.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Serve the toy encoder over the NDJSON protocol on stdin/stdout.
    ServeToy {
        /// Accept a single TCP connection on this address instead.
        #[arg(long)]
        listen: Option<String>,
    },
}

#[derive(Debug, Args)]
struct Flags {
    /// Output directory (default `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    vocab: Option<PathBuf>,
    #[arg(long, global = true)]
    toy_dim: Option<usize>,
    #[arg(long, global = true)]
    toy_seed: Option<u64>,
    /// Bridge command line, split on whitespace.
    #[arg(long, global = true)]
    bridge: Option<String>,
    #[arg(long, global = true)]
    bridge_tcp: Option<String>,
    #[arg(long, global = true)]
    timeout_secs: Option<u64>,
    #[arg(long, global = true)]
    max_batch: Option<usize>,
    /// cosine, inner_product or neg_squared_euclidean.
    #[arg(long, global = true)]
    measure: Option<String>,
    /// CLIPScore scale M.
    #[arg(long, global = true)]
    scale: Option<f64>,
    /// Search on M * max(cos, 0) instead of plain cosine.
    #[arg(long, global = true)]
    clip: bool,
    #[arg(long, global = true)]
    norm_budget: Option<f64>,
    /// Beam sizes, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    k: Option<Vec<usize>>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Sequential positions (the greedy baseline when k = 1).
    #[arg(long, global = true)]
    greedy: bool,
    #[arg(long, global = true)]
    max_iterations: Option<usize>,
    #[arg(long, global = true)]
    init_text: Option<String>,
    #[arg(long, global = true)]
    tuning: Option<PathBuf>,
    #[arg(long, global = true)]
    hypotheses: Option<PathBuf>,
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    #[arg(long, global = true)]
    init: Option<PathBuf>,
    #[arg(long, global = true)]
    search_result: Option<PathBuf>,
    #[arg(long, global = true)]
    pairs: Option<PathBuf>,
    #[arg(long, global = true)]
    images: Option<PathBuf>,
    #[arg(long, global = true)]
    docs: Option<PathBuf>,
    #[arg(long, global = true)]
    queries: Option<PathBuf>,
    #[arg(long, global = true)]
    qrels: Option<PathBuf>,
    #[arg(long, global = true)]
    hub_text: Option<String>,
    #[arg(long, global = true)]
    hub_name: Option<String>,
    #[arg(long, global = true)]
    top_n: Option<usize>,
    /// Skip hypotheses with unknown tokens instead of failing.
    #[arg(long, global = true)]
    lenient: bool,
    #[arg(long, global = true)]
    resamples: Option<usize>,
    /// Contamination counts, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    counts: Option<Vec<usize>>,
    /// MAP@c normaliser: min_relevant_cutoff or relevant.
    #[arg(long, global = true)]
    map_denominator: Option<String>,
}

impl Flags {
    fn into_config(self) -> RunConfig {
        let mut c = RunConfig {
            output_dir: self.out,
            ..RunConfig::default()
        };
        c.encoder.vocab = self.vocab;
        c.encoder.toy_dim = self.toy_dim;
        c.encoder.toy_seed = self.toy_seed;
        c.encoder.bridge = self
            .bridge
            .map(|b| b.split_whitespace().map(String::from).collect());
        c.encoder.bridge_tcp = self.bridge_tcp;
        c.encoder.timeout_secs = self.timeout_secs;
        c.encoder.max_batch = self.max_batch;
        c.similarity.measure = self.measure;
        c.similarity.scale = self.scale;
        c.similarity.clip = self.clip.then_some(true);
        c.similarity.norm_budget = self.norm_budget;
        c.search.k = self.k;
        c.search.seed = self.seed;
        c.search.workers = self.workers;
        c.search.greedy = self.greedy.then_some(true);
        c.search.max_iterations = self.max_iterations;
        c.search.init_text = self.init_text;
        c.paths.tuning = self.tuning;
        c.paths.hypotheses = self.hypotheses;
        c.paths.corpus = self.corpus;
        c.paths.init = self.init;
        c.paths.search_result = self.search_result;
        c.paths.pairs = self.pairs;
        c.paths.images = self.images;
        c.paths.docs = self.docs;
        c.paths.queries = self.queries;
        c.paths.qrels = self.qrels;
        c.eval.hub_text = self.hub_text;
        c.eval.hub_name = self.hub_name;
        c.eval.top_n = self.top_n;
        c.eval.lenient = self.lenient.then_some(true);
        c.eval.resamples = self.resamples;
        c.eval.counts = self.counts;
        c.eval.map_denominator = self.map_denominator;
        c
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = (|| {
        let base = match &cli.config {
            Some(p) => RunConfig::load(p).map_err(commands::Failure::Validation)?,
            None => RunConfig::default(),
        };
        let cfg = base.overlay(cli.flags.into_config());
        commands::run(&cli.command, &cfg)
    })();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.code())
        }
    }
}
