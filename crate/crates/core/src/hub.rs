//! Closed-form hub embeddings for each similarity measure, and a projected
//! gradient-ascent oracle used to check them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{
    dot, norm, objective, Embedding, Measure, SimilarityConfig, TuningSet, NORM_TOLERANCE,
};
use crate::error::{Error, Result};

/// Norm budget used by the inner-product solver when none is given.
pub const DEFAULT_NORM_BUDGET: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HubSolution {
    pub embedding: Embedding,
    pub measure: Measure,
    pub objective_value: f64,
    /// Set when the solution sits at the origin (squared Euclidean only); the
    /// other solvers report that case as [`Error::DegenerateHub`].
    pub degenerate: bool,
}

/// Unit vector along the mean of the normalised tuning embeddings.
///
/// The objective value is `|ē|`, which is the Cauchy-Schwarz upper bound on
/// mean cosine similarity and is attained exactly along `ē`.
pub fn optimal_hub_cosine(tuning: &TuningSet) -> Result<HubSolution> {
    let mean = tuning.mean_normalized();
    let n = norm(&mean);
    if n <= NORM_TOLERANCE {
        return Err(Error::DegenerateHub { norm: n });
    }
    Ok(HubSolution {
        embedding: Embedding::new(mean.iter().map(|v| v / n).collect())?,
        measure: Measure::Cosine,
        objective_value: n,
        degenerate: false,
    })
}

/// Maximiser of the mean inner product on the ball `|e| <= norm_budget`.
pub fn optimal_hub_inner_product(tuning: &TuningSet, norm_budget: f64) -> Result<HubSolution> {
    if !(norm_budget.is_finite() && norm_budget > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "norm budget must be positive and finite, got {norm_budget}"
        )));
    }
    let mean = tuning.mean_raw();
    let n = norm(&mean);
    if n <= NORM_TOLERANCE {
        return Err(Error::DegenerateHub { norm: n });
    }
    let embedding = Embedding::new(mean.iter().map(|v| norm_budget * v / n).collect())?;
    let objective_value = dot(embedding.as_slice(), &mean);
    Ok(HubSolution {
        embedding,
        measure: Measure::InnerProduct,
        objective_value,
        degenerate: false,
    })
}

/// The centroid of the raw tuning embeddings (not re-normalised).
pub fn optimal_hub_sqeuclidean(tuning: &TuningSet) -> Result<HubSolution> {
    let mean = tuning.mean_raw();
    let degenerate = norm(&mean) <= NORM_TOLERANCE;
    let embedding = Embedding::new(mean)?;
    let objective_value = objective(
        &embedding,
        tuning,
        &SimilarityConfig::with_measure(Measure::NegSquaredEuclidean),
    )?;
    Ok(HubSolution {
        embedding,
        measure: Measure::NegSquaredEuclidean,
        objective_value,
        degenerate,
    })
}

/// Dispatches to the closed-form solver for `cfg.measure`.
///
/// Clipped cosine is solved with the unclipped optimum: at `ē` every image
/// already has non-negative cosine whenever the tuning set lies in an open
/// half-space, which is the case the solver targets.
pub fn optimal_hub(
    tuning: &TuningSet,
    cfg: &SimilarityConfig,
    norm_budget: f64,
) -> Result<HubSolution> {
    let mut solution = match cfg.measure {
        Measure::Cosine => optimal_hub_cosine(tuning)?,
        Measure::InnerProduct => optimal_hub_inner_product(tuning, norm_budget)?,
        Measure::NegSquaredEuclidean => optimal_hub_sqeuclidean(tuning)?,
    };
    if cfg.measure == Measure::Cosine && cfg.clip_at_zero {
        solution.objective_value = objective(&solution.embedding, tuning, cfg)?;
    }
    Ok(solution)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleOptions {
    pub steps: usize,
    pub step_size: f64,
    pub seed: u64,
    /// Radius of the feasible ball for the inner-product objective. `None`
    /// leaves it unconstrained, in which case the iterate grows without bound.
    pub norm_budget: Option<f64>,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            steps: 10_000,
            step_size: 0.5,
            seed: 0,
            norm_budget: Some(DEFAULT_NORM_BUDGET),
        }
    }
}

/// Projected gradient ascent on `J` from a seeded random start.
pub fn numeric_hub_oracle(
    tuning: &TuningSet,
    cfg: &SimilarityConfig,
    opts: &OracleOptions,
) -> Result<HubSolution> {
    if opts.steps == 0 {
        return Err(Error::InvalidArgument(
            "oracle needs at least one step".into(),
        ));
    }
    cfg.validate()?;
    let dim = tuning.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut e: Vec<f64> = (0..dim).map(|_| standard_normal(&mut rng)).collect();

    let units: Vec<Vec<f64>> = tuning
        .embeddings()
        .iter()
        .map(|x| {
            let n = x.norm();
            x.as_slice().iter().map(|v| v / n).collect()
        })
        .collect();
    let mean_unit = tuning.mean_normalized();
    let mean_raw = tuning.mean_raw();

    match cfg.measure {
        Measure::Cosine => project_sphere(&mut e),
        Measure::InnerProduct => {
            if let Some(b) = opts.norm_budget {
                project_ball(&mut e, b);
            }
        }
        Measure::NegSquaredEuclidean => {}
    }

    let mut grad = vec![0.0; dim];
    for step in 0..opts.steps {
        match cfg.measure {
            Measure::Cosine if cfg.clip_at_zero => {
                grad.iter_mut().for_each(|g| *g = 0.0);
                for u in &units {
                    let c = dot(&e, u);
                    if c > 0.0 {
                        for ((g, ui), ei) in grad.iter_mut().zip(u).zip(&e) {
                            *g += cfg.scale * (ui - c * ei);
                        }
                    }
                }
                let n = units.len() as f64;
                grad.iter_mut().for_each(|g| *g /= n);
            }
            Measure::Cosine => {
                let c = dot(&e, &mean_unit);
                for ((g, m), ei) in grad.iter_mut().zip(&mean_unit).zip(&e) {
                    *g = m - c * ei;
                }
            }
            Measure::InnerProduct => grad.copy_from_slice(&mean_raw),
            Measure::NegSquaredEuclidean => {
                for ((g, m), ei) in grad.iter_mut().zip(&mean_raw).zip(&e) {
                    *g = -2.0 * (ei - m);
                }
            }
        }
        for (ei, g) in e.iter_mut().zip(&grad) {
            *ei += opts.step_size * g;
        }
        match cfg.measure {
            Measure::Cosine => project_sphere(&mut e),
            Measure::InnerProduct => {
                if let Some(b) = opts.norm_budget {
                    project_ball(&mut e, b);
                }
            }
            Measure::NegSquaredEuclidean => {}
        }
        if e.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step: step + 1 });
        }
    }

    let embedding = Embedding::new(e).map_err(|_| Error::NonFinite { step: opts.steps })?;
    let objective_value = objective(&embedding, tuning, cfg)?;
    if !objective_value.is_finite() {
        return Err(Error::NonFinite { step: opts.steps });
    }
    Ok(HubSolution {
        degenerate: embedding.norm() <= NORM_TOLERANCE,
        embedding,
        measure: cfg.measure,
        objective_value,
    })
}

fn project_sphere(e: &mut [f64]) {
    let n = norm(e);
    if n > NORM_TOLERANCE {
        e.iter_mut().for_each(|v| *v /= n);
    }
}

fn project_ball(e: &mut [f64], radius: f64) {
    let n = norm(e);
    if n > radius {
        e.iter_mut().for_each(|v| *v *= radius / n);
    }
}

pub(crate) fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    // Box-Muller; u1 in (0, 1] keeps the log finite.
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}
