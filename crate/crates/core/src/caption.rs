//! CLIPScore evaluation of caption systems: corpus means, instance-level
//! win rates and paired bootstrap significance.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{clip_score, order_independent_sum, Embedding, KahanSum, SimilarityConfig};
use crate::encoder::TextEncoder;
use crate::error::{Error, Result};

pub const DEFAULT_RESAMPLES: usize = 1000;
pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalPair {
    pub image_id: String,
    pub image: Embedding,
    /// System name to caption text.
    pub captions: BTreeMap<String, String>,
}

/// One line of the evaluation JSONL file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub image_id: String,
    /// Id of the image vector in the accompanying embedding file.
    pub image_vec_ref: String,
    pub captions: BTreeMap<String, String>,
}

/// Reads a JSONL evaluation file, resolving `image_vec_ref` against `images`.
pub fn load_eval_pairs(
    path: impl AsRef<Path>,
    images: &HashMap<String, Embedding>,
) -> Result<Vec<EvalPair>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: EvalRecord =
            serde_json::from_str(line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        let image = images
            .get(&rec.image_vec_ref)
            .ok_or_else(|| {
                Error::parse(
                    path,
                    i + 1,
                    format!("unknown image_vec_ref {:?}", rec.image_vec_ref),
                )
            })?
            .clone();
        pairs.push(EvalPair {
            image_id: rec.image_id,
            image,
            captions: rec.captions,
        });
    }
    if pairs.is_empty() {
        return Err(Error::EmptyFile(path.to_owned()));
    }
    Ok(pairs)
}

/// Adds `system` with the same caption `text` to every pair.
pub fn broadcast_hub(pairs: &mut [EvalPair], system: &str, text: &str) {
    for p in pairs {
        p.captions.insert(system.to_owned(), text.to_owned());
    }
}

/// Names of systems present in every pair, sorted.
pub fn common_systems(pairs: &[EvalPair]) -> Vec<String> {
    let Some(first) = pairs.first() else {
        return Vec::new();
    };
    first
        .captions
        .keys()
        .filter(|s| pairs.iter().all(|p| p.captions.contains_key(*s)))
        .cloned()
        .collect()
}

/// Per-pair CLIPScore of `system`, in pair order.
pub fn instance_scores(
    pairs: &[EvalPair],
    system: &str,
    enc: &dyn TextEncoder,
    cfg: &SimilarityConfig,
) -> Result<Vec<f64>> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("no evaluation pairs".into()));
    }
    let mut texts: Vec<String> = Vec::new();
    let mut slot: HashMap<&str, usize> = HashMap::new();
    let mut which = Vec::with_capacity(pairs.len());
    for p in pairs {
        let text = p.captions.get(system).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "system {system:?} missing for image {:?}",
                p.image_id
            ))
        })?;
        let idx = *slot.entry(text.as_str()).or_insert_with(|| {
            texts.push(text.clone());
            texts.len() - 1
        });
        which.push(idx);
    }
    let embeddings = enc.encode_texts(&texts)?;
    pairs
        .iter()
        .zip(which)
        .map(|(p, i)| clip_score(&embeddings[i], &p.image, cfg))
        .collect()
}

/// Mean CLIPScore of `system` over `pairs`.
pub fn corpus_clipscore(
    pairs: &[EvalPair],
    system: &str,
    enc: &dyn TextEncoder,
    cfg: &SimilarityConfig,
) -> Result<f64> {
    let mut scores = instance_scores(pairs, system, enc, cfg)?;
    let n = scores.len() as f64;
    Ok(order_independent_sum(&mut scores) / n)
}

/// Fraction of positions where `a` is strictly greater than `b`.
pub fn win_rate_from_scores(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::InvalidArgument("no scores".into()));
    }
    let wins = a.iter().zip(b).filter(|(x, y)| x > y).count();
    Ok(wins as f64 / a.len() as f64)
}

pub fn win_rate(
    pairs: &[EvalPair],
    system_a: &str,
    system_b: &str,
    enc: &dyn TextEncoder,
    cfg: &SimilarityConfig,
) -> Result<f64> {
    win_rate_from_scores(
        &instance_scores(pairs, system_a, enc, cfg)?,
        &instance_scores(pairs, system_b, enc, cfg)?,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub p_value: f64,
    pub significant: bool,
}

/// Paired bootstrap: the fraction of resamples in which `mean(a) <= mean(b)`.
pub fn paired_bootstrap(
    scores_a: &[f64],
    scores_b: &[f64],
    resamples: usize,
    seed: u64,
) -> Result<BootstrapResult> {
    if scores_a.len() != scores_b.len() {
        return Err(Error::LengthMismatch {
            left: scores_a.len(),
            right: scores_b.len(),
        });
    }
    let n = scores_a.len();
    if n < 2 {
        return Err(Error::InvalidArgument(
            "bootstrap needs at least 2 pairs".into(),
        ));
    }
    if resamples == 0 {
        return Err(Error::InvalidArgument(
            "resamples must be at least 1".into(),
        ));
    }
    if scores_a.iter().chain(scores_b).any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("scores must be finite".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut not_better = 0usize;
    for _ in 0..resamples {
        let mut sa = KahanSum::default();
        let mut sb = KahanSum::default();
        for _ in 0..n {
            let i = rng.random_range(0..n);
            sa.add(scores_a[i]);
            sb.add(scores_b[i]);
        }
        if sa.value() <= sb.value() {
            not_better += 1;
        }
    }
    let p_value = not_better as f64 / resamples as f64;
    Ok(BootstrapResult {
        p_value,
        significant: p_value < SIGNIFICANCE_LEVEL,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionReport {
    pub pairs: usize,
    pub scale: f64,
    pub resamples: usize,
    pub seed: u64,
    pub corpus_scores: BTreeMap<String, f64>,
    /// `win_rates[a][b]`: fraction of pairs where `a` scores strictly higher.
    pub win_rates: BTreeMap<String, BTreeMap<String, f64>>,
    /// `p_values[a][b]`: bootstrap p-value for "a outperforms b".
    pub p_values: BTreeMap<String, BTreeMap<String, BootstrapResult>>,
}

/// Scores every system present in all pairs against every other.
pub fn evaluate_systems(
    pairs: &[EvalPair],
    enc: &dyn TextEncoder,
    cfg: &SimilarityConfig,
    resamples: usize,
    seed: u64,
) -> Result<CaptionReport> {
    let systems = common_systems(pairs);
    if systems.is_empty() {
        return Err(Error::InvalidArgument(
            "no caption system is present in every pair".into(),
        ));
    }
    let scores: BTreeMap<String, Vec<f64>> = systems
        .iter()
        .map(|s| Ok((s.clone(), instance_scores(pairs, s, enc, cfg)?)))
        .collect::<Result<_>>()?;
    let n = pairs.len() as f64;
    let corpus_scores = scores
        .iter()
        .map(|(s, v)| (s.clone(), order_independent_sum(&mut v.clone()) / n))
        .collect();
    let mut win_rates: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    let mut p_values: BTreeMap<String, BTreeMap<String, BootstrapResult>> = BTreeMap::new();
    for (a, sa) in &scores {
        for (b, sb) in &scores {
            if a == b {
                continue;
            }
            win_rates
                .entry(a.clone())
                .or_default()
                .insert(b.clone(), win_rate_from_scores(sa, sb)?);
            if pairs.len() >= 2 {
                p_values
                    .entry(a.clone())
                    .or_default()
                    .insert(b.clone(), paired_bootstrap(sa, sb, resamples, seed)?);
            }
        }
    }
    Ok(CaptionReport {
        pairs: pairs.len(),
        scale: cfg.scale,
        resamples,
        seed,
        corpus_scores,
        win_rates,
        p_values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{ToyEncoder, Vocabulary};

    fn toy() -> ToyEncoder {
        let vocab = Vocabulary::new(["a", "b", "c", "d"].map(String::from).to_vec()).unwrap();
        ToyEncoder::new(vocab, 16, 3).unwrap()
    }

    fn pairs_for(enc: &ToyEncoder, texts: &[&str]) -> Vec<EvalPair> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| EvalPair {
                image_id: format!("img{i}"),
                image: enc.encode_texts(&[t.to_string()]).unwrap().remove(0),
                captions: BTreeMap::from([
                    ("self".to_string(), t.to_string()),
                    ("fixed".to_string(), "a b".to_string()),
                ]),
            })
            .collect()
    }

    #[test]
    fn matching_captions_score_scale() {
        let enc = toy();
        let pairs = pairs_for(&enc, &["a b c", "d d", "c a"]);
        let s = corpus_clipscore(&pairs, "self", &enc, &SimilarityConfig::clip_score()).unwrap();
        assert!((s - 2.5).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_captions_score_zero() {
        let image = Embedding::new(vec![0.0, 1.0]).unwrap();
        let text = Embedding::new(vec![1.0, 0.0]).unwrap();
        assert_eq!(
            clip_score(&text, &image, &SimilarityConfig::clip_score()).unwrap(),
            0.0
        );
    }

    #[test]
    fn win_rates() {
        assert_eq!(win_rate_from_scores(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(
            win_rate_from_scores(&[2.0, 2.0, 2.0, 0.0], &[1.0, 1.0, 1.0, 1.0]).unwrap(),
            0.75
        );
        assert!(matches!(
            win_rate_from_scores(&[1.0], &[1.0, 2.0]),
            Err(Error::LengthMismatch { left: 1, right: 2 })
        ));
    }

    #[test]
    fn bootstrap_edges() {
        let a = [0.1, 0.5, 0.3, 0.9];
        assert_eq!(paired_bootstrap(&a, &a, 200, 0).unwrap().p_value, 1.0);
        let b: Vec<f64> = a.iter().map(|x| x - 10.0).collect();
        let r = paired_bootstrap(&a, &b, 200, 0).unwrap();
        assert_eq!(r.p_value, 0.0);
        assert!(r.significant);
        assert!(paired_bootstrap(&a, &b[..3], 10, 0).is_err());
        assert!(paired_bootstrap(&a[..1], &b[..1], 10, 0).is_err());
        assert!(paired_bootstrap(&a, &b, 0, 0).is_err());
    }

    #[test]
    fn bootstrap_is_deterministic() {
        let a = [0.1, 0.5, 0.3, 0.9, 0.2];
        let b = [0.2, 0.4, 0.3, 0.8, 0.3];
        assert_eq!(
            paired_bootstrap(&a, &b, 500, 9).unwrap(),
            paired_bootstrap(&a, &b, 500, 9).unwrap()
        );
    }

    #[test]
    fn report_and_broadcast() {
        let enc = toy();
        let mut pairs = pairs_for(&enc, &["a b c", "d d", "c a", "b"]);
        broadcast_hub(&mut pairs, "hub", "c c");
        let report =
            evaluate_systems(&pairs, &enc, &SimilarityConfig::clip_score(), 100, 0).unwrap();
        assert_eq!(report.corpus_scores.len(), 3);
        assert_eq!(report.win_rates["self"].len(), 2);
        assert!(report.p_values["self"].contains_key("hub"));
        for (a, row) in &report.win_rates {
            for (b, w) in row {
                assert!(w + report.win_rates[b][a] <= 1.0);
            }
        }
        let s = report.corpus_scores["self"];
        assert!((s - 2.5).abs() < 1e-12);
    }

    #[test]
    fn missing_system() {
        let enc = toy();
        let pairs = pairs_for(&enc, &["a"]);
        assert!(corpus_clipscore(&pairs, "nope", &enc, &SimilarityConfig::clip_score()).is_err());
    }

    #[test]
    fn jsonl_loading() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("eval.jsonl");
        std::fs::write(
            &p,
            r#"{"image_id":"i0","image_vec_ref":"v0","captions":{"human":"a b"}}
{"image_id":"i1","image_vec_ref":"v1","captions":{"human":"c"}}
"#,
        )
        .unwrap();
        let images = HashMap::from([
            ("v0".to_string(), Embedding::new(vec![1.0, 0.0]).unwrap()),
            ("v1".to_string(), Embedding::new(vec![0.0, 1.0]).unwrap()),
        ]);
        let pairs = load_eval_pairs(&p, &images).unwrap();
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[1].captions["human"], "c");
        let images = HashMap::from([("v0".to_string(), Embedding::new(vec![1.0, 0.0]).unwrap())]);
        assert!(matches!(
            load_eval_pairs(&p, &images),
            Err(Error::Parse { line: 2, .. })
        ));
    }
}
