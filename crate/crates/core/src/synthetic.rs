//! Deterministic synthetic cohort data with known ground truth.
//!
//! Retention decays with cohort age and peaks every November; revenue per active user decays
//! slowly with cohort age and carries no seasonality, so seasonal revenue arises only through
//! the number of active users. Newer cohorts are larger.

use rand::distr::Distribution;
use rand_distr::{Binomial, Gamma};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{CohortRow, CohortTable};
use crate::inference::{logistic, RngStream};
use crate::month::YearMonth;

#[derive(Debug, Error)]
pub enum GeneratorError {
    #[error("invalid generator field {field}: {reason}")]
    InvalidField { field: &'static str, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub start_cohort: YearMonth,
    pub end_cohort: YearMonth,
    pub base_cohort_size: u64,
    pub growth_rate: f64,
    pub retention_intercept: f64,
    /// Multiplies `ln(1 + cohort_age)` on the logit scale.
    pub cohort_age_decay: f64,
    /// Amplitude of the cosine seasonal term peaking in November.
    pub seasonal_amplitude: f64,
    pub base_revenue_per_active: f64,
    /// Log-decay of revenue per active user per 12 months of cohort age.
    pub revenue_age_decay: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            start_cohort: YearMonth::new(2020, 1).unwrap(),
            end_cohort: YearMonth::new(2022, 12).unwrap(),
            base_cohort_size: 500,
            growth_rate: 0.03,
            retention_intercept: -1.0,
            cohort_age_decay: 0.35,
            seasonal_amplitude: 0.5,
            base_revenue_per_active: 20.0,
            revenue_age_decay: 0.05,
            seed: 42,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), GeneratorError> {
        let bad = |field, reason: &str| {
            Err(GeneratorError::InvalidField {
                field,
                reason: reason.to_string(),
            })
        };
        if self.end_cohort < self.start_cohort {
            return bad("end_cohort", "must not precede start_cohort");
        }
        for (field, v) in [
            ("cohort_age_decay", self.cohort_age_decay),
            ("seasonal_amplitude", self.seasonal_amplitude),
            ("revenue_age_decay", self.revenue_age_decay),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(field, "must be finite and nonnegative");
            }
        }
        if !(self.base_revenue_per_active.is_finite() && self.base_revenue_per_active > 0.0) {
            return bad("base_revenue_per_active", "must be positive");
        }
        if !self.growth_rate.is_finite() || !self.retention_intercept.is_finite() {
            return bad("growth_rate", "must be finite");
        }
        Ok(())
    }

    pub fn cohort_size(&self, cohort_index: usize) -> u64 {
        (self.base_cohort_size as f64 * (self.growth_rate * cohort_index as f64).exp()).round() as u64
    }

    /// Mean revenue per active user at a given cohort age.
    pub fn revenue_per_active(&self, cohort_age: f64) -> f64 {
        self.base_revenue_per_active * (-self.revenue_age_decay * cohort_age / 12.0).exp()
    }
}

/// Ground-truth retention probability.
pub fn true_retention(config: &GeneratorConfig, cohort_age: u32, month: u8) -> f64 {
    let seasonal = (2.0 * std::f64::consts::PI * (month as f64 - 11.0) / 12.0).cos();
    logistic(
        config.retention_intercept - config.cohort_age_decay * (1.0 + cohort_age as f64).ln()
            + config.seasonal_amplitude * seasonal,
    )
}

/// Full cohort-by-period triangle up to `end_cohort`, diagonal included.
pub fn generate(config: &GeneratorConfig) -> Result<CohortTable, GeneratorError> {
    config.validate()?;
    let mut rng = RngStream::new(config.seed, 0).rng();
    let mut rows = Vec::new();
    for (i, cohort) in config.start_cohort.range_inclusive(config.end_cohort).enumerate() {
        let n_total = config.cohort_size(i);
        for period in cohort.range_inclusive(config.end_cohort) {
            let cohort_age = period.months_since(cohort) as u32;
            let n_active = if cohort_age == 0 {
                n_total
            } else {
                let p = true_retention(config, cohort_age, period.month());
                Binomial::new(n_total, p).expect("p in (0,1)").sample(&mut rng)
            };
            let revenue = if n_active == 0 {
                0.0
            } else {
                let scale = config.revenue_per_active(cohort_age as f64);
                let x = Gamma::new(n_active as f64, scale).expect("positive gamma parameters").sample(&mut rng);
                let cents = (x * 100.0).round() / 100.0;
                if cents > 0.0 {
                    cents
                } else {
                    x
                }
            };
            rows.push(CohortRow {
                cohort,
                period,
                n_total,
                n_active,
                revenue,
            });
        }
    }
    Ok(CohortTable::new(rows).expect("generator output satisfies table invariants"))
}
