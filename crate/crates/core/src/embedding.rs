//! Embedding vectors, similarity measures, CLIPScore and the tuning-set
//! objective `J(e) = mean_I s(e, e_I)`.
//!
//! All arithmetic is done in `f64`. Means over many vectors use compensated
//! summation over a canonically ordered sequence of terms, so they do not
//! depend on the order in which the tuning set was supplied.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Norms at or below this value are treated as zero.
pub const NORM_TOLERANCE: f64 = 1e-12;

/// Scale factor `M` used by CLIPScore.
pub const DEFAULT_CLIP_SCALE: f64 = 2.5;

/// A finite, non-empty real vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyEmbedding);
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { index });
        }
        Ok(Self(values))
    }

    pub fn from_f32(values: &[f32]) -> Result<Self> {
        Self::new(values.iter().map(|&v| f64::from(v)).collect())
    }

    pub fn zeros(dim: usize) -> Result<Self> {
        Self::new(vec![0.0; dim])
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn dot(&self, other: &Embedding) -> Result<f64> {
        check_dims(self.dim(), other.dim())?;
        Ok(dot(&self.0, &other.0))
    }

    pub fn scaled(&self, factor: f64) -> Result<Embedding> {
        Embedding::new(self.0.iter().map(|v| v * factor).collect())
    }
}

impl TryFrom<Vec<f64>> for Embedding {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Embedding::new(values)
    }
}

impl From<Embedding> for Vec<f64> {
    fn from(e: Embedding) -> Self {
        e.0
    }
}

impl AsRef<[f64]> for Embedding {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    Cosine,
    InnerProduct,
    NegSquaredEuclidean,
}

impl std::str::FromStr for Measure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "cosine" | "cos" => Ok(Measure::Cosine),
            "inner_product" | "ip" | "dot" => Ok(Measure::InnerProduct),
            "neg_squared_euclidean" | "sqeuclidean" | "squared_euclidean" | "l2" => {
                Ok(Measure::NegSquaredEuclidean)
            }
            other => Err(Error::InvalidArgument(format!(
                "unknown similarity measure {other:?}"
            ))),
        }
    }
}

impl std::fmt::Display for Measure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Measure::Cosine => "cosine",
            Measure::InnerProduct => "inner_product",
            Measure::NegSquaredEuclidean => "neg_squared_euclidean",
        })
    }
}

/// How a text embedding is compared with an image embedding.
///
/// With `Cosine` and `clip_at_zero = false` the similarity is plain cosine.
/// With `clip_at_zero = true` it becomes CLIPScore, `M * max(cos, 0)`.
/// `scale` has no effect on the other measures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityConfig {
    pub measure: Measure,
    pub scale: f64,
    pub clip_at_zero: bool,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        Self::cosine()
    }
}

impl SimilarityConfig {
    pub fn cosine() -> Self {
        Self {
            measure: Measure::Cosine,
            scale: DEFAULT_CLIP_SCALE,
            clip_at_zero: false,
        }
    }

    pub fn clip_score() -> Self {
        Self {
            measure: Measure::Cosine,
            scale: DEFAULT_CLIP_SCALE,
            clip_at_zero: true,
        }
    }

    pub fn with_measure(measure: Measure) -> Self {
        Self {
            measure,
            ..Self::cosine()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "scale M must be positive, got {}",
                self.scale
            )));
        }
        Ok(())
    }
}

/// Image embeddings the hub is optimised against.
#[derive(Debug, Clone, PartialEq)]
pub struct TuningSet {
    embeddings: Vec<Embedding>,
    ids: Vec<String>,
}

impl TuningSet {
    pub fn new(embeddings: Vec<Embedding>, ids: Vec<String>) -> Result<Self> {
        if embeddings.is_empty() {
            return Err(Error::EmptyTuningSet);
        }
        if embeddings.len() != ids.len() {
            return Err(Error::LengthMismatch {
                left: embeddings.len(),
                right: ids.len(),
            });
        }
        let dim = embeddings[0].dim();
        for e in &embeddings {
            check_dims(dim, e.dim())?;
            let n = e.norm();
            if n <= NORM_TOLERANCE {
                return Err(Error::ZeroNorm { norm: n });
            }
        }
        Ok(Self { embeddings, ids })
    }

    /// Builds a tuning set with ids `0, 1, 2, ...`.
    pub fn from_embeddings(embeddings: Vec<Embedding>) -> Result<Self> {
        let ids = (0..embeddings.len()).map(|i| i.to_string()).collect();
        Self::new(embeddings, ids)
    }

    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings[0].dim()
    }

    pub fn embeddings(&self) -> &[Embedding] {
        &self.embeddings
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    /// Mean of the L2-normalised members (`ē` in the cosine derivation).
    pub fn mean_normalized(&self) -> Vec<f64> {
        let unit: Vec<Vec<f64>> = self
            .embeddings
            .iter()
            .map(|e| {
                let n = e.norm();
                e.as_slice().iter().map(|v| v / n).collect()
            })
            .collect();
        mean_vector(unit.iter().map(Vec::as_slice), self.dim())
    }

    /// Mean of the raw members.
    pub fn mean_raw(&self) -> Vec<f64> {
        mean_vector(self.embeddings.iter().map(Embedding::as_slice), self.dim())
    }
}

pub fn normalize(e: &Embedding) -> Result<Embedding> {
    let n = e.norm();
    if n <= NORM_TOLERANCE {
        return Err(Error::ZeroNorm { norm: n });
    }
    Embedding::new(e.as_slice().iter().map(|v| v / n).collect())
}

pub fn cosine(a: &Embedding, b: &Embedding) -> Result<f64> {
    check_dims(a.dim(), b.dim())?;
    let na = nonzero_norm(a)?;
    let nb = nonzero_norm(b)?;
    Ok((dot(a.as_slice(), b.as_slice()) / (na * nb)).clamp(-1.0, 1.0))
}

/// CLIPScore: `M * max(cos(e_w, e_I), 0)`. Only `cfg.scale` is consulted.
pub fn clip_score(text: &Embedding, image: &Embedding, cfg: &SimilarityConfig) -> Result<f64> {
    Ok(cfg.scale * cosine(text, image)?.max(0.0))
}

/// Similarity `s(e, e_I)` under `cfg`.
pub fn similarity(e: &Embedding, image: &Embedding, cfg: &SimilarityConfig) -> Result<f64> {
    match cfg.measure {
        Measure::Cosine if cfg.clip_at_zero => clip_score(e, image, cfg),
        Measure::Cosine => cosine(e, image),
        Measure::InnerProduct => e.dot(image),
        Measure::NegSquaredEuclidean => {
            check_dims(e.dim(), image.dim())?;
            Ok(-squared_distance(e.as_slice(), image.as_slice()))
        }
    }
}

/// `J(e; D_I)`: the arithmetic mean of `similarity(e, e_I)` over the tuning set,
/// computed by direct summation.
pub fn objective(e: &Embedding, tuning: &TuningSet, cfg: &SimilarityConfig) -> Result<f64> {
    check_dims(tuning.dim(), e.dim())?;
    let mut sum = KahanSum::default();
    for image in tuning.embeddings() {
        sum.add(similarity(e, image, cfg)?);
    }
    Ok(sum.value() / tuning.len() as f64)
}

/// Precomputed form of [`objective`] for repeated evaluation.
///
/// Every measure except clipped cosine collapses to an expression in a
/// single mean vector, so evaluation is `O(D)` instead of `O(|D_I| D)`.
#[derive(Debug, Clone)]
pub struct Objective {
    cfg: SimilarityConfig,
    kind: ObjectiveKind,
    dim: usize,
}

#[derive(Debug, Clone)]
enum ObjectiveKind {
    /// `(e / |e|) . mean_normalized`
    Cosine { mean_unit: Vec<f64> },
    /// `e . mean_raw`
    Inner { mean_raw: Vec<f64> },
    /// `-(|e|^2 - 2 e . mean_raw + mean |e_I|^2)`
    SqEuclidean {
        mean_raw: Vec<f64>,
        mean_sq_norm: f64,
    },
    /// Per-image clipped cosine; no closed form.
    Clipped { units: Vec<Vec<f64>> },
}

impl Objective {
    pub fn new(tuning: &TuningSet, cfg: SimilarityConfig) -> Result<Self> {
        cfg.validate()?;
        let kind = match cfg.measure {
            Measure::Cosine if cfg.clip_at_zero => ObjectiveKind::Clipped {
                units: tuning
                    .embeddings()
                    .iter()
                    .map(|e| {
                        let n = e.norm();
                        e.as_slice().iter().map(|v| v / n).collect()
                    })
                    .collect(),
            },
            Measure::Cosine => ObjectiveKind::Cosine {
                mean_unit: tuning.mean_normalized(),
            },
            Measure::InnerProduct => ObjectiveKind::Inner {
                mean_raw: tuning.mean_raw(),
            },
            Measure::NegSquaredEuclidean => {
                let mut sq = KahanSum::default();
                for e in tuning.embeddings() {
                    sq.add(dot(e.as_slice(), e.as_slice()));
                }
                ObjectiveKind::SqEuclidean {
                    mean_raw: tuning.mean_raw(),
                    mean_sq_norm: sq.value() / tuning.len() as f64,
                }
            }
        };
        Ok(Self {
            cfg,
            kind,
            dim: tuning.dim(),
        })
    }

    pub fn config(&self) -> &SimilarityConfig {
        &self.cfg
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eval(&self, e: &Embedding) -> Result<f64> {
        self.eval_slice(e.as_slice())
    }

    pub fn eval_slice(&self, e: &[f64]) -> Result<f64> {
        check_dims(self.dim, e.len())?;
        Ok(match &self.kind {
            ObjectiveKind::Cosine { mean_unit } => {
                let n = norm(e);
                if n <= NORM_TOLERANCE {
                    return Err(Error::ZeroNorm { norm: n });
                }
                dot(e, mean_unit) / n
            }
            ObjectiveKind::Inner { mean_raw } => dot(e, mean_raw),
            ObjectiveKind::SqEuclidean {
                mean_raw,
                mean_sq_norm,
            } => -(dot(e, e) - 2.0 * dot(e, mean_raw) + mean_sq_norm),
            ObjectiveKind::Clipped { units } => {
                let n = norm(e);
                if n <= NORM_TOLERANCE {
                    return Err(Error::ZeroNorm { norm: n });
                }
                let mut sum = KahanSum::default();
                for u in units {
                    sum.add((dot(e, u) / n).clamp(-1.0, 1.0).max(0.0));
                }
                self.cfg.scale * sum.value() / units.len() as f64
            }
        })
    }
}

/// Neumaier-compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    compensation: f64,
}

impl KahanSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl FromIterator<f64> for KahanSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = KahanSum::default();
        for x in iter {
            s.add(x);
        }
        s
    }
}

/// Compensated sum of `values` taken in ascending total order, so the result
/// is independent of the input order.
pub fn order_independent_sum(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().copied().collect::<KahanSum>().value()
}

/// Coordinate-wise mean; bit-identical under any permutation of `vectors`.
pub fn mean_vector<'a>(vectors: impl Iterator<Item = &'a [f64]>, dim: usize) -> Vec<f64> {
    let rows: Vec<&[f64]> = vectors.collect();
    let n = rows.len() as f64;
    let mut column = Vec::with_capacity(rows.len());
    (0..dim)
        .map(|j| {
            column.clear();
            column.extend(rows.iter().map(|r| r[j]));
            order_independent_sum(&mut column) / n
        })
        .collect()
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub(crate) fn check_dims(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimMismatch { expected, actual });
    }
    Ok(())
}

fn nonzero_norm(e: &Embedding) -> Result<f64> {
    let n = e.norm();
    if n <= NORM_TOLERANCE {
        Err(Error::ZeroNorm { norm: n })
    } else {
        Ok(n)
    }
}
