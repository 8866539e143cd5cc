//! Shared fixtures for the benchmarks.

use cohort_ledger::bart::BartConfig;
use cohort_ledger::data::{build_features, FeatureMatrix};
use cohort_ledger::synthetic::{generate, GeneratorConfig};

pub struct Fixture {
    pub features: FeatureMatrix,
    pub counts: Vec<(u64, u64)>,
    pub revenue: Vec<(u64, f64)>,
}

/// Non-diagonal rows of the default synthetic table.
pub fn synthetic() -> Fixture {
    let table = generate(&GeneratorConfig::default()).unwrap().non_diagonal();
    let features = build_features(&table, table.max_period().unwrap());
    Fixture {
        features,
        counts: table.rows().iter().map(|r| (r.n_active, r.n_total)).collect(),
        revenue: table.rows().iter().map(|r| (r.n_active, r.revenue)).collect(),
    }
}

/// One short chain, enough to time sweeps without waiting on a full fit.
pub fn short_bart() -> BartConfig {
    BartConfig {
        chains: 1,
        tune: 50,
        draws: 50,
        ..BartConfig::default()
    }
}
