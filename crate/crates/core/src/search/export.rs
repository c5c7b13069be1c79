//! Trajectory CSV (`iteration,best_score,substitutions`) and the JSON
//! run-metadata sidecar.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{SearchConfig, SearchReport, TrajectoryPoint};
use crate::embedding::SimilarityConfig;
use crate::encoder::EncoderDescriptor;
use crate::error::{Error, Result};

pub const TRAJECTORY_HEADER: &str = "iteration,best_score,substitutions";

pub fn trajectory_csv(points: &[TrajectoryPoint]) -> String {
    let mut out = String::from(TRAJECTORY_HEADER);
    out.push('\n');
    for p in points {
        writeln!(out, "{},{},{}", p.iteration, p.best_score, p.substitutions)
            .expect("String write");
    }
    out
}

pub fn write_trajectory_csv(path: impl AsRef<Path>, points: &[TrajectoryPoint]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, trajectory_csv(points)).map_err(|e| Error::io(path, e))
}

/// Parses a trajectory CSV; the `evaluations` column is not stored and reads as 0.
pub fn read_trajectory_csv(path: impl AsRef<Path>) -> Result<Vec<TrajectoryPoint>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == TRAJECTORY_HEADER => {}
        _ => {
            return Err(Error::parse(
                path,
                1,
                format!("expected header {TRAJECTORY_HEADER:?}"),
            ))
        }
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let bad = || Error::parse(path, i + 1, format!("malformed row {l:?}"));
            let mut cols = l.split(',');
            let iteration = cols
                .next()
                .and_then(|c| c.trim().parse().ok())
                .ok_or_else(bad)?;
            let best_score = cols
                .next()
                .and_then(|c| c.trim().parse().ok())
                .ok_or_else(bad)?;
            let substitutions = cols
                .next()
                .and_then(|c| c.trim().parse().ok())
                .ok_or_else(bad)?;
            if cols.next().is_some() {
                return Err(bad());
            }
            Ok(TrajectoryPoint {
                iteration,
                best_score,
                substitutions,
                evaluations: 0,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub seed: u64,
    pub k: usize,
    pub workers: usize,
    pub similarity: SimilarityConfig,
    pub encoder: EncoderDescriptor,
    pub iterations: usize,
    pub evaluations: usize,
    pub wall_time_secs: f64,
    /// Sampling epsilon used by the external inversion model, if known.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inversion_epsilon: Option<f64>,
}

impl RunMetadata {
    pub fn new(
        report: &SearchReport,
        search: &SearchConfig,
        similarity: SimilarityConfig,
        encoder: EncoderDescriptor,
    ) -> Self {
        Self {
            seed: report.seed,
            k: report.k,
            workers: search.workers,
            similarity,
            encoder,
            iterations: report.iterations,
            evaluations: report.evaluations,
            wall_time_secs: report.wall_time_secs,
            inversion_epsilon: None,
        }
    }
}

pub fn write_metadata(path: impl AsRef<Path>, meta: &RunMetadata) -> Result<()> {
    let path = path.as_ref();
    let json =
        serde_json::to_string_pretty(meta).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}
