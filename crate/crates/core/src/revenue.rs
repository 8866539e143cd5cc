//! Revenue component: `revenue ~ Gamma(shape = n_active, rate = λ)` with
//! `log λ = intercept + b_cohort_age·z_cohort_age + b_age·z_age + b_interaction·z_cohort_age·z_age`
//! over standardized features and standard-normal priors on all four coefficients.
//!
//! `1/λ` is the mean revenue per active user.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{fit_standardizer, DataError, FeatureMatrix, FeatureRow, Standardizer};
use crate::inference::{adaptive_mh_sample, ChainDraws, DrawMatrix, InferenceError, RngStream, SamplerConfig};

pub const COEFFICIENT_NAMES: [&str; 4] = ["intercept", "b_cohort_age", "b_age", "b_interaction"];

/// Linear predictors beyond this magnitude are treated as pathological.
pub const MAX_LINEAR_PREDICTOR: f64 = 50.0;

#[derive(Debug, Error)]
pub enum RevenueError {
    #[error("no rows with active users and positive revenue")]
    NoUsableRows,
    #[error("linear predictor {0} exceeds the overflow guard")]
    OverflowGuard(f64),
    #[error("{rows} feature rows but {observations} observations")]
    LengthMismatch { rows: usize, observations: usize },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RevenueCoefficients {
    pub intercept: f64,
    pub b_cohort_age: f64,
    pub b_age: f64,
    pub b_interaction: f64,
}

impl RevenueCoefficients {
    pub fn from_slice(v: &[f64]) -> Self {
        Self {
            intercept: v[0],
            b_cohort_age: v[1],
            b_age: v[2],
            b_interaction: v[3],
        }
    }

    pub fn linear_predictor(&self, z_cohort_age: f64, z_age: f64, z_interaction: f64) -> f64 {
        self.intercept + self.b_cohort_age * z_cohort_age + self.b_age * z_age + self.b_interaction * z_interaction
    }
}

/// `λ = exp(linear predictor)` for a standardized row.
pub fn lambda_of(coeffs: &RevenueCoefficients, row: &FeatureRow) -> Result<f64, RevenueError> {
    let eta = coeffs.linear_predictor(row.z_cohort_age, row.z_age, row.z_interaction);
    if !eta.is_finite() || eta.abs() > MAX_LINEAR_PREDICTOR {
        return Err(RevenueError::OverflowGuard(eta));
    }
    Ok(eta.exp())
}

/// Which standardized columns enter the linear predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RevenueDesign {
    #[default]
    Full,
    /// All z columns fixed at zero; the slope coefficients then sample their priors.
    InterceptOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RevenueConfig {
    pub sampler: SamplerConfig,
    pub design: RevenueDesign,
    /// Multiplies the log-likelihood; 0 samples the prior.
    pub likelihood_weight: f64,
}

impl Default for RevenueConfig {
    fn default() -> Self {
        Self {
            sampler: SamplerConfig {
                thin: 20,
                ..SamplerConfig::default()
            },
            design: RevenueDesign::Full,
            likelihood_weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevenuePosterior {
    pub draws: ChainDraws,
    /// Frozen training standardization; absent for [`RevenueDesign::InterceptOnly`].
    pub standardizer: Option<Standardizer>,
    pub design: RevenueDesign,
}

/// One likelihood term, reduced to what depends on the coefficients.
struct Term {
    shape: f64,
    revenue: f64,
    z: [f64; 3],
}

fn standardize(standardizer: Option<&Standardizer>, row: &FeatureRow) -> FeatureRow {
    match standardizer {
        Some(s) => s.apply_row(row),
        None => FeatureRow {
            z_cohort_age: 0.0,
            z_age: 0.0,
            z_interaction: 0.0,
            ..*row
        },
    }
}

/// Fits the revenue model on rows with `n_active >= 1` and `revenue > 0` off the diagonal.
///
/// `observations[i]` is `(n_active, revenue)` for `features.rows[i]`. The standardizer is fitted
/// on the rows that enter the likelihood.
pub fn fit_revenue(
    features: &FeatureMatrix,
    observations: &[(u64, f64)],
    config: &RevenueConfig,
    rng: RngStream,
) -> Result<RevenuePosterior, RevenueError> {
    if features.len() != observations.len() {
        return Err(RevenueError::LengthMismatch {
            rows: features.len(),
            observations: observations.len(),
        });
    }
    let usable: Vec<(FeatureRow, u64, f64)> = features
        .rows
        .iter()
        .zip(observations)
        .filter(|(f, (a, rev))| !f.is_diagonal() && *a >= 1 && *rev > 0.0)
        .map(|(f, &(a, rev))| (*f, a, rev))
        .collect();
    if usable.is_empty() {
        return Err(RevenueError::NoUsableRows);
    }
    let standardizer = match config.design {
        RevenueDesign::Full => Some(fit_standardizer(&FeatureMatrix {
            rows: usable.iter().map(|u| u.0).collect(),
            ..features.clone()
        })?),
        RevenueDesign::InterceptOnly => None,
    };
    let terms: Vec<Term> = usable
        .iter()
        .map(|(f, a, rev)| {
            let z = standardize(standardizer.as_ref(), f);
            Term {
                shape: *a as f64,
                revenue: *rev,
                z: [z.z_cohort_age, z.z_age, z.z_interaction],
            }
        })
        .collect();

    let weight = config.likelihood_weight;
    let logpost = |theta: &[f64]| -> f64 {
        let prior = -0.5 * theta.iter().map(|t| t * t).sum::<f64>();
        if weight == 0.0 {
            return prior;
        }
        let mut ll = 0.0;
        for t in &terms {
            let eta = theta[0] + theta[1] * t.z[0] + theta[2] * t.z[1] + theta[3] * t.z[2];
            if eta.abs() > MAX_LINEAR_PREDICTOR {
                return f64::NEG_INFINITY;
            }
            // shape·ln λ − λ·x; the remaining gamma terms do not involve the coefficients
            ll += t.shape * eta - eta.exp() * t.revenue;
        }
        prior + weight * ll
    };
    let draws = adaptive_mh_sample(logpost, 4, &config.sampler, rng)?;
    Ok(RevenuePosterior {
        draws,
        standardizer,
        design: config.design,
    })
}

impl RevenuePosterior {
    pub fn coefficients(&self, chain: usize, draw: usize) -> RevenueCoefficients {
        RevenueCoefficients::from_slice(self.draws.draw(chain, draw))
    }

    /// All coefficient draws, chain-major.
    pub fn all_coefficients(&self) -> Vec<RevenueCoefficients> {
        (0..self.draws.chains)
            .flat_map(|c| (0..self.draws.draws_per_chain).map(move |d| (c, d)))
            .map(|(c, d)| self.coefficients(c, d))
            .collect()
    }

    pub fn standardize(&self, features: &FeatureMatrix) -> FeatureMatrix {
        FeatureMatrix {
            rows: features.rows.iter().map(|r| standardize(self.standardizer.as_ref(), r)).collect(),
            ..features.clone()
        }
    }
}

/// λ for every posterior draw (rows of the result) and feature row (columns).
pub fn predict_rate(posterior: &RevenuePosterior, new_features: &FeatureMatrix) -> Result<DrawMatrix, RevenueError> {
    let z = posterior.standardize(new_features);
    let coeffs = posterior.all_coefficients();
    let mut values = Vec::with_capacity(coeffs.len() * z.len());
    for c in &coeffs {
        for row in &z.rows {
            values.push(lambda_of(c, row)?);
        }
    }
    Ok(DrawMatrix::new(coeffs.len(), z.len(), values))
}
