//! Coupled cohort retention and revenue model.
//!
//! Retention is a binomial-logit model whose logit is a sum-of-trees (BART) ensemble over
//! cohort age, age and calendar month. Revenue is a gamma likelihood whose shape is the number
//! of active users and whose rate follows a log-link linear model. The two components are
//! coupled through active users when producing predictive distributions.

pub mod bart;
pub mod data;
pub mod forecast;
pub mod inference;
pub mod month;
pub mod revenue;
pub mod synthetic;

pub use bart::{BartConfig, Forest, ForestArchive, RetentionPosterior, TreeNode};
pub use data::{CohortRow, CohortTable, FeatureMatrix, FeatureRow, ReferencePolicy, Standardizer};
pub use forecast::{ForecastConfig, ForecastRow, ForecastTable, GridRow};
pub use inference::{ChainDraws, HdiInterval, RngStream, SamplerConfig};
pub use month::YearMonth;
pub use revenue::{RevenueCoefficients, RevenueConfig, RevenuePosterior};
pub use synthetic::GeneratorConfig;
