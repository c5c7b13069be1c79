use std::collections::{BTreeMap, HashMap};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{anyhow, Context};
use serde::{Deserialize, Serialize};

use hubtext_core::candidates::{
    corpus_fallback_init, load_hypotheses, score_hypotheses, Provenance, UnknownTokens,
};
use hubtext_core::caption::{
    broadcast_hub, evaluate_systems, load_eval_pairs, CaptionReport, DEFAULT_RESAMPLES,
};
use hubtext_core::embedding::{Embedding, Measure, SimilarityConfig};
use hubtext_core::encoder::{
    load_embeddings, load_image_fixtures, remote, RemoteEncoder, RemoteOptions, TextEncoder,
    ToyEncoder, Vocabulary,
};
use hubtext_core::hub::{optimal_hub, DEFAULT_NORM_BUDGET};
use hubtext_core::retrieval::{
    load_docs, load_qrels, run_contamination_experiment, Cutoffs, MapDenominator, MetricsReport,
    QuerySet, RetrievalIndex,
};
use hubtext_core::search::{
    beam_local_search, default_workers, trajectory_csv, write_metadata, write_trajectory_csv,
    PositionOrder, RunMetadata, SearchConfig, TrajectoryPoint,
};
use hubtext_core::Error;

use crate::config::{optional_path, require_path, RunConfig};
use crate::Command;

const DEFAULT_TOY_DIM: usize = 64;
const DEFAULT_COUNTS: [usize; 5] = [0, 1, 10, 100, 1000];

pub enum Failure {
    Validation(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }

    pub fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Validation(e) | Failure::Runtime(e) => e,
        }
    }
}

type Outcome<T = ()> = Result<T, Failure>;

trait Classify<T> {
    fn invalid(self) -> Outcome<T>;
    fn runtime(self) -> Outcome<T>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn invalid(self) -> Outcome<T> {
        self.map_err(|e| Failure::Validation(e.into()))
    }

    fn runtime(self) -> Outcome<T> {
        self.map_err(|e| Failure::Runtime(e.into()))
    }
}

/// Library errors raised while computing: bad inputs exit 1, everything else 2.
fn computed<T>(r: hubtext_core::Result<T>) -> Outcome<T> {
    r.map_err(|e| match e {
        Error::Protocol(_)
        | Error::Remote(_)
        | Error::Timeout(_)
        | Error::Transport(_)
        | Error::WorkerFailure { .. }
        | Error::TimeoutAbort { .. }
        | Error::NonFinite { .. }
        | Error::Io { .. } => Failure::Runtime(e.into()),
        _ => Failure::Validation(e.into()),
    })
}

pub fn run(command: &Command, cfg: &RunConfig) -> Outcome {
    match command {
        Command::HubEmbed => hub_embed(cfg),
        Command::Init => init(cfg),
        Command::Search => search(cfg),
        Command::EvalCaption => eval_caption(cfg),
        Command::EvalRetrieval => eval_retrieval(cfg),
        Command::ExportTrajectory { run_k, output } => {
            export_trajectory(cfg, *run_k, output.as_deref())
        }
        Command::ServeToy { listen } => serve_toy(cfg, listen.as_deref()),
    }
}

fn similarity(cfg: &RunConfig) -> Outcome<SimilarityConfig> {
    let s = &cfg.similarity;
    let measure: Measure = match &s.measure {
        Some(m) => m.parse().invalid()?,
        None => Measure::Cosine,
    };
    let base = SimilarityConfig::with_measure(measure);
    let sim = SimilarityConfig {
        scale: s.scale.unwrap_or(base.scale),
        clip_at_zero: s.clip.unwrap_or(false),
        ..base
    };
    if sim.clip_at_zero && measure != Measure::Cosine {
        return Err(Failure::Validation(anyhow!(
            "similarity.clip applies only to the cosine measure"
        )));
    }
    sim.validate().invalid()?;
    Ok(sim)
}

fn encoder(cfg: &RunConfig) -> Outcome<Box<dyn TextEncoder>> {
    let e = &cfg.encoder;
    let opts = || {
        let mut o = RemoteOptions::default();
        if let Some(t) = e.timeout_secs {
            o.timeout = Duration::from_secs(t);
        }
        if let Some(b) = e.max_batch {
            o.max_batch = b;
        }
        o
    };
    if let Some(cmd) = &e.bridge {
        let (program, args) = cmd
            .split_first()
            .ok_or_else(|| Failure::Validation(anyhow!("encoder.bridge is empty")))?;
        let enc = RemoteEncoder::spawn(program, args, opts())
            .with_context(|| format!("starting bridge {program}"))
            .runtime()?;
        return Ok(Box::new(enc));
    }
    if let Some(addr) = &e.bridge_tcp {
        let enc = RemoteEncoder::connect_tcp(addr, opts())
            .with_context(|| format!("connecting to bridge at {addr}"))
            .runtime()?;
        return Ok(Box::new(enc));
    }
    let path = require_path(&e.vocab, "encoder.vocab").invalid()?;
    let vocab = Vocabulary::load(path).invalid()?;
    let enc = ToyEncoder::new(
        vocab,
        e.toy_dim.unwrap_or(DEFAULT_TOY_DIM),
        e.toy_seed.unwrap_or(0),
    )
    .invalid()?;
    Ok(Box::new(enc))
}

fn prepare_output(cfg: &RunConfig, command: &str) -> Outcome<PathBuf> {
    let dir = cfg.output_dir();
    std::fs::create_dir_all(&dir)
        .with_context(|| format!("creating {}", dir.display()))
        .runtime()?;
    let resolved = toml::to_string(cfg)
        .context("serializing config")
        .runtime()?;
    let path = dir.join(format!("{command}.config.toml"));
    std::fs::write(&path, resolved)
        .with_context(|| format!("writing {}", path.display()))
        .runtime()?;
    Ok(dir)
}

fn write_json(path: &Path, value: &impl Serialize) -> Outcome {
    let text = serde_json::to_string_pretty(value)
        .context("serializing output")
        .runtime()?;
    std::fs::write(path, text + "\n")
        .with_context(|| format!("writing {}", path.display()))
        .runtime()
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Outcome<T> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .invalid()?;
    serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", path.display()))
        .invalid()
}

#[derive(Debug, Serialize, Deserialize)]
struct HubOutput {
    measure: Measure,
    tuning_images: usize,
    objective_value: f64,
    degenerate: bool,
    embedding: Vec<f64>,
}

fn hub_embed(cfg: &RunConfig) -> Outcome {
    let sim = similarity(cfg)?;
    let tuning_path = require_path(&cfg.paths.tuning, "paths.tuning").invalid()?;
    let tuning = load_image_fixtures(tuning_path).invalid()?;
    let budget = cfg.similarity.norm_budget.unwrap_or(DEFAULT_NORM_BUDGET);
    let hub = computed(optimal_hub(&tuning, &sim, budget))?;
    let dir = prepare_output(cfg, "hub-embed")?;
    let out = HubOutput {
        measure: hub.measure,
        tuning_images: tuning.len(),
        objective_value: hub.objective_value,
        degenerate: hub.degenerate,
        embedding: hub.embedding.into_vec(),
    };
    write_json(&dir.join("hub.json"), &out)?;
    println!(
        "hub embedding ({}, {} images): J = {:.6}{}",
        out.measure,
        out.tuning_images,
        out.objective_value,
        if out.degenerate { " (degenerate)" } else { "" }
    );
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TextScore {
    text: String,
    score: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct InitOutput {
    provenance: Provenance,
    best: TextScore,
    candidates: Vec<TextScore>,
}

fn init(cfg: &RunConfig) -> Outcome {
    let sim = similarity(cfg)?;
    let tuning = load_image_fixtures(require_path(&cfg.paths.tuning, "paths.tuning").invalid()?)
        .invalid()?;
    let hyp_path = optional_path(&cfg.paths.hypotheses, "paths.hypotheses").invalid()?;
    let corpus_path = optional_path(&cfg.paths.corpus, "paths.corpus").invalid()?;
    if hyp_path.is_none() && corpus_path.is_none() {
        return Err(Failure::Validation(anyhow!(
            "init needs paths.hypotheses or paths.corpus"
        )));
    }
    let mode = if cfg.eval.lenient.unwrap_or(false) {
        UnknownTokens::Lenient
    } else {
        UnknownTokens::Strict
    };
    let top_n = cfg.eval.top_n.unwrap_or(10);
    if top_n == 0 {
        return Err(Failure::Validation(anyhow!(
            "eval.top_n must be at least 1"
        )));
    }
    let enc = encoder(cfg)?;
    let vocab = enc
        .vocab()
        .ok_or_else(|| Failure::Runtime(anyhow!("encoder exposes no vocabulary")))?;

    let (provenance, mut candidates) = match (hyp_path, corpus_path) {
        (Some(p), _) => {
            let set = load_hypotheses(p, vocab, mode).invalid()?;
            let scores = computed(score_hypotheses(&set, enc.as_ref(), &tuning, &sim))?;
            let mut scored: Vec<TextScore> = set
                .hypotheses
                .into_iter()
                .zip(scores)
                .map(|(h, score)| TextScore {
                    text: h.text,
                    score,
                })
                .collect();
            scored.sort_by(|a, b| b.score.total_cmp(&a.score));
            (Provenance::InversionFile, scored)
        }
        (None, Some(p)) => {
            let corpus = read_lines(p)?;
            let scored = computed(corpus_fallback_init(
                &corpus,
                enc.as_ref(),
                &tuning,
                &sim,
                top_n,
                mode,
            ))?;
            let scored = scored
                .into_iter()
                .map(|s| TextScore {
                    text: s.text,
                    score: s.score,
                })
                .collect();
            (Provenance::CorpusFallback, scored)
        }
        (None, None) => unreachable!(),
    };
    candidates.truncate(top_n);
    let out = InitOutput {
        provenance,
        best: candidates[0].clone(),
        candidates,
    };
    let dir = prepare_output(cfg, "init")?;
    write_json(&dir.join("init.json"), &out)?;
    println!(
        "initial text ({:?}): {:?} J = {:.6}",
        out.provenance, out.best.text, out.best.score
    );
    Ok(())
}

fn read_lines(path: &Path) -> Outcome<Vec<String>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .invalid()?;
    let lines: Vec<String> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(String::from)
        .collect();
    if lines.is_empty() {
        return Err(Failure::Validation(anyhow!(
            "{}: file is empty",
            path.display()
        )));
    }
    Ok(lines)
}

#[derive(Debug, Serialize, Deserialize)]
struct RunOutput {
    k: usize,
    best: TextScore,
    initial_score: f64,
    iterations: usize,
    substitutions_applied: usize,
    evaluations: usize,
    final_beam: Vec<TextScore>,
    trajectory: Vec<TrajectoryPoint>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SearchOutput {
    init_text: String,
    seed: u64,
    runs: Vec<RunOutput>,
    best_k: usize,
    best: TextScore,
}

fn init_text(cfg: &RunConfig) -> Outcome<String> {
    if let Some(t) = &cfg.search.init_text {
        return Ok(t.clone());
    }
    let path = require_path(&cfg.paths.init, "paths.init (or search.init_text)").invalid()?;
    let init: InitOutput = read_json(path)?;
    Ok(init.best.text)
}

fn search(cfg: &RunConfig) -> Outcome {
    let sim = similarity(cfg)?;
    let ks = cfg.k_values().invalid()?;
    let tuning = load_image_fixtures(require_path(&cfg.paths.tuning, "paths.tuning").invalid()?)
        .invalid()?;
    let text = init_text(cfg)?;
    let workers = cfg.search.workers.unwrap_or_else(default_workers);
    if workers == 0 {
        return Err(Failure::Validation(anyhow!(
            "search.workers must be at least 1"
        )));
    }
    let seed = cfg.search.seed.unwrap_or(0);
    let enc = encoder(cfg)?;
    let vocab = enc
        .vocab()
        .ok_or_else(|| Failure::Runtime(anyhow!("encoder exposes no vocabulary")))?;
    let init = vocab.tokenize(&text).invalid()?;
    let dir = prepare_output(cfg, "search")?;

    let mut runs = Vec::with_capacity(ks.len());
    for &k in &ks {
        let search = SearchConfig {
            k,
            seed,
            workers,
            position_order: if cfg.search.greedy.unwrap_or(false) {
                PositionOrder::Sequential
            } else {
                PositionOrder::Random
            },
            max_iterations: cfg.search.max_iterations,
            ..SearchConfig::default()
        };
        let report = computed(beam_local_search(
            &init,
            &tuning,
            enc.as_ref(),
            &sim,
            &search,
        ))?;
        write_trajectory_csv(dir.join(format!("trajectory_k{k}.csv")), &report.trajectory)
            .runtime()?;
        write_metadata(
            dir.join(format!("metadata_k{k}.json")),
            &RunMetadata::new(&report, &search, sim, enc.descriptor()),
        )
        .runtime()?;
        println!(
            "k={k:<3} J = {:.6} after {} iterations: {:?}",
            report.best.score, report.iterations, report.best.text
        );
        runs.push(RunOutput {
            k,
            best: TextScore {
                text: report.best.text,
                score: report.best.score,
            },
            initial_score: report.initial.score,
            iterations: report.iterations,
            substitutions_applied: report.substitutions_applied,
            evaluations: report.evaluations,
            final_beam: report
                .final_beam
                .into_iter()
                .map(|e| TextScore {
                    text: e.text,
                    score: e.score,
                })
                .collect(),
            trajectory: report.trajectory,
        });
    }
    // Highest score wins; the earlier k in the list breaks ties.
    let winner = runs
        .iter()
        .reduce(|a, b| if b.best.score > a.best.score { b } else { a })
        .expect("at least one k");
    let out = SearchOutput {
        init_text: text,
        seed,
        best_k: winner.k,
        best: winner.best.clone(),
        runs,
    };
    write_json(&dir.join("search.json"), &out)?;
    println!(
        "best: k={} J = {:.6} {:?}",
        out.best_k, out.best.score, out.best.text
    );
    Ok(())
}

fn hub_text(cfg: &RunConfig) -> Outcome<Option<String>> {
    if let Some(t) = &cfg.eval.hub_text {
        return Ok(Some(t.clone()));
    }
    match optional_path(&cfg.paths.search_result, "paths.search_result").invalid()? {
        Some(p) => Ok(Some(read_json::<SearchOutput>(p)?.best.text)),
        None => Ok(None),
    }
}

fn load_image_map(path: &Path) -> Outcome<HashMap<String, Embedding>> {
    let (ids, vecs) = load_embeddings(path).invalid()?;
    Ok(ids.into_iter().zip(vecs).collect())
}

fn eval_caption(cfg: &RunConfig) -> Outcome {
    let pairs_path = require_path(&cfg.paths.pairs, "paths.pairs").invalid()?;
    let images = load_image_map(require_path(&cfg.paths.images, "paths.images").invalid()?)?;
    let mut pairs = load_eval_pairs(pairs_path, &images).invalid()?;
    let scale = cfg
        .similarity
        .scale
        .unwrap_or(SimilarityConfig::clip_score().scale);
    let sim = SimilarityConfig {
        scale,
        ..SimilarityConfig::clip_score()
    };
    sim.validate().invalid()?;
    let resamples = cfg.eval.resamples.unwrap_or(DEFAULT_RESAMPLES);
    let hub = hub_text(cfg)?;
    let hub_name = cfg.eval.hub_name.clone().unwrap_or_else(|| "hub".into());
    let enc = encoder(cfg)?;
    if let Some(text) = &hub {
        broadcast_hub(&mut pairs, &hub_name, text);
    }
    let report: CaptionReport = computed(evaluate_systems(
        &pairs,
        enc.as_ref(),
        &sim,
        resamples,
        cfg.search.seed.unwrap_or(0),
    ))?;
    let dir = prepare_output(cfg, "eval-caption")?;
    write_json(&dir.join("caption_report.json"), &report)?;
    println!("{} pairs, M = {}", report.pairs, report.scale);
    for (system, score) in &report.corpus_scores {
        println!("  {system:<16} CLIPScore {score:.4}");
    }
    for (a, row) in &report.win_rates {
        for (b, w) in row {
            let p = report.p_values.get(a).and_then(|r| r.get(b));
            let mark = if p.is_some_and(|p| p.significant) {
                " *"
            } else {
                ""
            };
            println!(
                "  {a} vs {b}: win rate {:.3}, p = {}{mark}",
                w,
                p.map_or("n/a".to_string(), |p| format!("{:.3}", p.p_value))
            );
        }
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct RetrievalOutput {
    hub_text: String,
    queries: usize,
    docs: usize,
    /// Metrics keyed by contamination count.
    by_count: BTreeMap<usize, MetricsReport>,
}

fn eval_retrieval(cfg: &RunConfig) -> Outcome {
    let docs = load_docs(require_path(&cfg.paths.docs, "paths.docs").invalid()?).invalid()?;
    let (qids, qvecs) =
        load_embeddings(require_path(&cfg.paths.queries, "paths.queries").invalid()?).invalid()?;
    let qrels = load_qrels(require_path(&cfg.paths.qrels, "paths.qrels").invalid()?).invalid()?;
    let hub = hub_text(cfg)?.ok_or_else(|| {
        Failure::Validation(anyhow!(
            "eval-retrieval needs eval.hub_text or paths.search_result"
        ))
    })?;
    let counts = cfg
        .eval
        .counts
        .clone()
        .unwrap_or_else(|| DEFAULT_COUNTS.to_vec());
    let cutoffs = Cutoffs {
        map_denominator: match &cfg.eval.map_denominator {
            Some(d) => d.parse().invalid()?,
            None => MapDenominator::default(),
        },
        ..Cutoffs::default()
    };
    let enc = encoder(cfg)?;
    let index = computed(RetrievalIndex::from_texts(&docs, enc.as_ref()))?;
    let queries = QuerySet {
        queries: qids.into_iter().zip(qvecs).collect(),
        qrels,
    };
    let rows = computed(run_contamination_experiment(
        &index,
        &queries,
        &hub,
        &counts,
        enc.as_ref(),
        &cutoffs,
    ))?;
    let out = RetrievalOutput {
        hub_text: hub,
        queries: queries.queries.len(),
        docs: index.len(),
        by_count: rows.into_iter().map(|r| (r.count, r.metrics)).collect(),
    };
    let dir = prepare_output(cfg, "eval-retrieval")?;
    write_json(&dir.join("retrieval_report.json"), &out)?;
    println!(
        "hub text {:?}, {} queries, {} docs",
        out.hub_text, out.queries, out.docs
    );
    for (count, m) in &out.by_count {
        println!(
            "  #CT={count:<5} P@1 {:.3}  NDCG@10 {:.3}  Recall@1000 {:.3}  MRR@10 {:.3}",
            m.get("Precision@1").unwrap_or(f64::NAN),
            m.get("NDCG@10").unwrap_or(f64::NAN),
            m.get("Recall@1000").unwrap_or(f64::NAN),
            m.get("MRR@10").unwrap_or(f64::NAN),
        );
    }
    Ok(())
}

fn export_trajectory(cfg: &RunConfig, k: Option<usize>, output: Option<&Path>) -> Outcome {
    let path = require_path(&cfg.paths.search_result, "paths.search_result").invalid()?;
    let result: SearchOutput = read_json(path)?;
    let k = k.unwrap_or(result.best_k);
    let run = result.runs.iter().find(|r| r.k == k).ok_or_else(|| {
        Failure::Validation(anyhow!("{} has no run with k = {k}", path.display()))
    })?;
    let csv = trajectory_csv(&run.trajectory);
    match output {
        Some(p) => std::fs::write(p, csv)
            .with_context(|| format!("writing {}", p.display()))
            .runtime(),
        None => std::io::stdout().write_all(csv.as_bytes()).runtime(),
    }
}

fn serve_toy(cfg: &RunConfig, listen: Option<&str>) -> Outcome {
    if cfg.encoder.bridge.is_some() || cfg.encoder.bridge_tcp.is_some() {
        return Err(Failure::Validation(anyhow!(
            "serve-toy serves the toy encoder only"
        )));
    }
    let enc = encoder(cfg)?;
    let images = match &cfg.paths.images {
        Some(_) => load_image_map(require_path(&cfg.paths.images, "paths.images").invalid()?)?,
        None => HashMap::new(),
    };
    let model = "toy-hash";
    match listen {
        Some(addr) => {
            let listener = std::net::TcpListener::bind(addr)
                .with_context(|| format!("binding {addr}"))
                .runtime()?;
            eprintln!("listening on {}", listener.local_addr().runtime()?);
            let (stream, _) = listener.accept().runtime()?;
            let reader = BufReader::new(stream.try_clone().runtime()?);
            remote::serve(enc.as_ref(), &images, model, reader, stream).runtime()
        }
        None => {
            let stdin = std::io::stdin();
            remote::serve(
                enc.as_ref(),
                &images,
                model,
                stdin.lock(),
                std::io::stdout().lock(),
            )
            .runtime()
        }
    }
}
