//! Run configuration: a TOML file overlaid with command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: Option<PathBuf>,
    pub encoder: EncoderConfig,
    pub similarity: SimilaritySection,
    pub search: SearchSection,
    pub paths: PathsSection,
    pub eval: EvalSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    /// Token list for the toy encoder.
    pub vocab: Option<PathBuf>,
    pub toy_dim: Option<usize>,
    pub toy_seed: Option<u64>,
    /// Program and arguments of a bridge process speaking the NDJSON protocol.
    pub bridge: Option<Vec<String>>,
    /// `host:port` of a bridge listening on TCP.
    pub bridge_tcp: Option<String>,
    pub timeout_secs: Option<u64>,
    pub max_batch: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimilaritySection {
    pub measure: Option<String>,
    pub scale: Option<f64>,
    /// Use `M * max(cos, 0)` as the search objective.
    pub clip: Option<bool>,
    pub norm_budget: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSection {
    pub k: Option<Vec<usize>>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub greedy: Option<bool>,
    pub max_iterations: Option<usize>,
    pub init_text: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub tuning: Option<PathBuf>,
    pub hypotheses: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    /// Output of `init`, read by `search`.
    pub init: Option<PathBuf>,
    /// Output of `search`, read by the evaluation commands.
    pub search_result: Option<PathBuf>,
    pub pairs: Option<PathBuf>,
    pub images: Option<PathBuf>,
    pub docs: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub qrels: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub hub_text: Option<String>,
    pub hub_name: Option<String>,
    pub top_n: Option<usize>,
    pub lenient: Option<bool>,
    pub resamples: Option<usize>,
    pub counts: Option<Vec<usize>>,
    /// `min_relevant_cutoff` (default) or `relevant`.
    pub map_denominator: Option<String>,
}

impl RunConfig {
    /// Reads a config file; relative paths inside it are resolved against
    /// the file's directory.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.rebase(base);
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(p) = p {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        };
        fix(&mut self.output_dir);
        fix(&mut self.encoder.vocab);
        let p = &mut self.paths;
        for field in [
            &mut p.tuning,
            &mut p.hypotheses,
            &mut p.corpus,
            &mut p.init,
            &mut p.search_result,
            &mut p.pairs,
            &mut p.images,
            &mut p.docs,
            &mut p.queries,
            &mut p.qrels,
        ] {
            fix(field);
        }
    }

    /// Fields set in `other` replace those in `self`.
    pub fn overlay(mut self, other: RunConfig) -> Self {
        macro_rules! take {
            ($($f:ident).+) => {
                if other.$($f).+.is_some() {
                    self.$($f).+ = other.$($f).+;
                }
            };
        }
        take!(output_dir);
        take!(encoder.vocab);
        take!(encoder.toy_dim);
        take!(encoder.toy_seed);
        take!(encoder.bridge);
        take!(encoder.bridge_tcp);
        take!(encoder.timeout_secs);
        take!(encoder.max_batch);
        take!(similarity.measure);
        take!(similarity.scale);
        take!(similarity.clip);
        take!(similarity.norm_budget);
        take!(search.k);
        take!(search.seed);
        take!(search.workers);
        take!(search.greedy);
        take!(search.max_iterations);
        take!(search.init_text);
        take!(paths.tuning);
        take!(paths.hypotheses);
        take!(paths.corpus);
        take!(paths.init);
        take!(paths.search_result);
        take!(paths.pairs);
        take!(paths.images);
        take!(paths.docs);
        take!(paths.queries);
        take!(paths.qrels);
        take!(eval.hub_text);
        take!(eval.hub_name);
        take!(eval.top_n);
        take!(eval.lenient);
        take!(eval.resamples);
        take!(eval.counts);
        take!(eval.map_denominator);
        self
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn k_values(&self) -> anyhow::Result<Vec<usize>> {
        let ks = self.search.k.clone().unwrap_or_else(|| vec![5]);
        if ks.is_empty() || ks.contains(&0) {
            bail!("search.k must be a non-empty list of values >= 1");
        }
        Ok(ks)
    }
}

/// Returns the path stored under `key`, checking that it exists.
pub fn require_path<'a>(value: &'a Option<PathBuf>, key: &str) -> anyhow::Result<&'a Path> {
    let p = value
        .as_deref()
        .with_context(|| format!("missing required path `{key}`"))?;
    if !p.exists() {
        bail!("{key}: file not found: {}", p.display());
    }
    Ok(p)
}

pub fn optional_path<'a>(
    value: &'a Option<PathBuf>,
    key: &str,
) -> anyhow::Result<Option<&'a Path>> {
    match value {
        Some(_) => require_path(value, key).map(Some),
        None => Ok(None),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overlay_prefers_flags() {
        let file: RunConfig = toml::from_str(
            r#"
            [search]
            k = [5, 10]
            seed = 3
            [encoder]
            toy_dim = 16
            "#,
        )
        .unwrap();
        let mut flags = RunConfig::default();
        flags.search.seed = Some(9);
        let merged = file.overlay(flags);
        assert_eq!(merged.search.seed, Some(9));
        assert_eq!(merged.search.k, Some(vec![5, 10]));
        assert_eq!(merged.encoder.toy_dim, Some(16));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<RunConfig>("[search]\nbeam = 3\n").is_err());
    }

    #[test]
    fn relative_paths_follow_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        std::fs::write(&p, "[paths]\ntuning = \"t.tsv\"\n").unwrap();
        let cfg = RunConfig::load(&p).unwrap();
        assert_eq!(cfg.paths.tuning.unwrap(), dir.path().join("t.tsv"));
    }

    #[test]
    fn zero_k_rejected() {
        let mut cfg = RunConfig::default();
        cfg.search.k = Some(vec![5, 0]);
        assert!(cfg.k_values().is_err());
    }
}
