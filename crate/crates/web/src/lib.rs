//! Browser demo bindings. Every export takes and returns JSON strings; the
//! `*_json` functions hold the logic and run natively too.

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use hubtext_core::candidates::{corpus_fallback_init, UnknownTokens};
use hubtext_core::embedding::{similarity, Embedding, Measure, SimilarityConfig, TuningSet};
use hubtext_core::hub::{optimal_hub, DEFAULT_NORM_BUDGET};
use hubtext_core::retrieval::{run_contamination_experiment, Cutoffs, RetrievalIndex};
use hubtext_core::search::{beam_local_search, SearchConfig, TrajectoryPoint};
use hubtext_core::toyworld::{ToyWorld, ToyWorldConfig};

#[derive(Debug, Deserialize)]
pub struct HubRequest {
    pub points: Vec<[f64; 2]>,
    #[serde(default = "default_measure")]
    pub measure: String,
}

fn default_measure() -> String {
    "cosine".into()
}

#[derive(Debug, Serialize)]
pub struct HubResponse {
    pub hub: [f64; 2],
    pub objective: f64,
    pub degenerate: bool,
    /// Similarity of the hub to each point, in input order.
    pub similarities: Vec<f64>,
}

pub fn hub_demo_json(input: &str) -> Result<String, String> {
    let req: HubRequest = serde_json::from_str(input).map_err(|e| e.to_string())?;
    let measure: Measure = req
        .measure
        .parse()
        .map_err(|e: hubtext_core::Error| e.to_string())?;
    let points = req
        .points
        .iter()
        .map(|p| Embedding::new(p.to_vec()))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let tuning = TuningSet::from_embeddings(points).map_err(|e| e.to_string())?;
    let cfg = SimilarityConfig::with_measure(measure);
    let sol = optimal_hub(&tuning, &cfg, DEFAULT_NORM_BUDGET).map_err(|e| e.to_string())?;
    let similarities = tuning
        .embeddings()
        .iter()
        .map(|x| similarity(&sol.embedding, x, &cfg))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let e = sol.embedding.as_slice();
    to_json(&HubResponse {
        hub: [e[0], e[1]],
        objective: sol.objective_value,
        degenerate: sol.degenerate,
        similarities,
    })
}

#[derive(Debug, Deserialize)]
#[serde(default)]
pub struct WorldRequest {
    pub seed: u64,
    pub vocab_size: usize,
    pub hub_len: usize,
    pub k: usize,
    pub counts: Vec<usize>,
}

impl Default for WorldRequest {
    fn default() -> Self {
        Self {
            seed: 7,
            vocab_size: 32,
            hub_len: 6,
            k: 5,
            counts: vec![0, 1, 10, 100],
        }
    }
}

impl WorldRequest {
    fn world(&self) -> Result<ToyWorld, String> {
        if self.vocab_size > 256 || self.hub_len > 16 || self.k > 50 {
            return Err(
                "vocab_size <= 256, hub_len <= 16 and k <= 50 keep the demo responsive".into(),
            );
        }
        ToyWorld::generate(ToyWorldConfig {
            seed: self.seed,
            vocab_size: self.vocab_size,
            hub_len: self.hub_len,
            caption_len: self.hub_len,
            dim: 32,
            tuning_images: 32,
            eval_images: 100,
            corpus_extra: 32,
            ..ToyWorldConfig::default()
        })
        .map_err(|e| e.to_string())
    }
}

#[derive(Debug, Serialize)]
pub struct BeamResponse {
    pub planted: String,
    pub planted_score: f64,
    pub initial: String,
    pub best: String,
    pub best_score: f64,
    pub iterations: usize,
    pub trajectory: Vec<TrajectoryPoint>,
}

/// Corpus-fallback start, then beam search on a small toy world.
pub fn beam_demo_json(input: &str) -> Result<String, String> {
    let req: WorldRequest = serde_json::from_str(input).map_err(|e| e.to_string())?;
    let world = req.world()?;
    let cfg = SimilarityConfig::cosine();
    let init = corpus_fallback_init(
        &world.corpus,
        &world.encoder,
        &world.tuning,
        &cfg,
        1,
        UnknownTokens::Strict,
    )
    .map_err(|e| e.to_string())?;
    let search = SearchConfig {
        workers: 1,
        ..SearchConfig::with_k(req.k, req.seed)
    };
    let report = beam_local_search(
        &init[0].tokens,
        &world.tuning,
        &world.encoder,
        &cfg,
        &search,
    )
    .map_err(|e| e.to_string())?;
    let planted = world
        .encoder
        .encode(&world.planted_hub)
        .map_err(|e| e.to_string())?;
    let planted_score = hubtext_core::embedding::objective(&planted, &world.tuning, &cfg)
        .map_err(|e| e.to_string())?;
    to_json(&BeamResponse {
        planted: world.planted_hub_text(),
        planted_score,
        initial: report.initial.text,
        best: report.best.text,
        best_score: report.best.score,
        iterations: report.iterations,
        trajectory: report.trajectory,
    })
}

#[derive(Debug, Serialize)]
pub struct ContaminationResponse {
    pub hub: String,
    pub rows: Vec<ContaminationLine>,
}

#[derive(Debug, Serialize)]
pub struct ContaminationLine {
    pub count: usize,
    pub precision_at_1: f64,
    pub ndcg_at_10: f64,
    pub mrr_at_10: f64,
    pub recall_at_1000: f64,
}

/// Retrieval metrics as copies of the planted hub text are added to the index.
pub fn contamination_demo_json(input: &str) -> Result<String, String> {
    let req: WorldRequest = serde_json::from_str(input).map_err(|e| e.to_string())?;
    let mut counts = req.counts.clone();
    counts.sort_unstable();
    counts.dedup();
    if counts.last().is_some_and(|&c| c > 5000) {
        return Err("counts above 5000 are too slow for the demo".into());
    }
    let world = req.world()?;
    let index = RetrievalIndex::from_texts(&world.retrieval_docs(), &world.encoder)
        .map_err(|e| e.to_string())?;
    let hub = world.planted_hub_text();
    let rows = run_contamination_experiment(
        &index,
        &world.queries(),
        &hub,
        &counts,
        &world.encoder,
        &Cutoffs::default(),
    )
    .map_err(|e| e.to_string())?;
    let metric =
        |m: &hubtext_core::retrieval::MetricsReport, name: &str| m.get(name).unwrap_or(f64::NAN);
    to_json(&ContaminationResponse {
        hub,
        rows: rows
            .iter()
            .map(|r| ContaminationLine {
                count: r.count,
                precision_at_1: metric(&r.metrics, "Precision@1"),
                ndcg_at_10: metric(&r.metrics, "NDCG@10"),
                mrr_at_10: metric(&r.metrics, "MRR@10"),
                recall_at_1000: metric(&r.metrics, "Recall@1000"),
            })
            .collect(),
    })
}

fn to_json(v: &impl Serialize) -> Result<String, String> {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn hub_demo(input: &str) -> Result<String, JsValue> {
    hub_demo_json(input).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn beam_demo(input: &str) -> Result<String, JsValue> {
    beam_demo_json(input).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn contamination_demo(input: &str) -> Result<String, JsValue> {
    contamination_demo_json(input).map_err(|e| JsValue::from_str(&e))
}
