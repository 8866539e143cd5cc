//! Retention model: a sum of regression trees on the logit scale under a binomial likelihood.

mod interpret;
mod sampler;
mod tree;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::FeatureMatrix;
use crate::inference::{ChainDraws, DrawMatrix, InferenceError, RngStream};

pub use interpret::{
    pdp_ice, variable_importance, write_importance_csv, write_pdp_ice_csv, IcePdpCurves, ImportanceConfig,
    ImportanceReport, InclusionStep,
};
pub use tree::{tree_depth_prior, Forest, TreeNode};

#[derive(Debug, Error)]
pub enum BartError {
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("feature matrix has {rows} rows but {counts} count pairs were given")]
    LengthMismatch { rows: usize, counts: usize },
    #[error("row {0} is on the diagonal (cohort age 0)")]
    DiagonalRow(usize),
    #[error("row {row}: invalid counts n_active={n_active}, n_total={n_total}")]
    InvalidCounts { row: usize, n_active: u64, n_total: u64 },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("grid is empty")]
    EmptyGrid,
    #[error("feature index {0} out of range")]
    InvalidFeature(usize),
    #[error("posterior holds no forest snapshots")]
    NoSnapshots,
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BartConfig {
    pub m: usize,
    pub alpha: f64,
    pub beta: f64,
    /// Leaf prior sd; `3 / sqrt(m)` when unset.
    pub sigma_leaf: Option<f64>,
    pub tune: usize,
    pub draws: usize,
    pub chains: usize,
    /// Keep a forest snapshot every this many draws.
    pub snapshot_every: usize,
}

impl Default for BartConfig {
    fn default() -> Self {
        Self {
            m: 50,
            alpha: 0.95,
            beta: 2.0,
            sigma_leaf: None,
            tune: 1000,
            draws: 1000,
            chains: 4,
            snapshot_every: 10,
        }
    }
}

impl BartConfig {
    pub fn sigma_leaf(&self) -> f64 {
        self.sigma_leaf.unwrap_or(3.0 / (self.m as f64).sqrt())
    }

    pub fn validate(&self) -> Result<(), BartError> {
        let bad = |msg: &str| Err(BartError::InvalidConfig(msg.to_string()));
        if self.m == 0 {
            return bad("m must be at least 1");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0, 1)");
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad("beta must be finite and nonnegative");
        }
        if !(self.sigma_leaf() > 0.0 && self.sigma_leaf().is_finite()) {
            return bad("sigma_leaf must be positive");
        }
        if self.chains == 0 || self.draws == 0 {
            return bad("chains and draws must be at least 1");
        }
        if self.snapshot_every == 0 {
            return bad("snapshot_every must be at least 1");
        }
        Ok(())
    }
}

/// Posterior over forests for the retention model.
#[derive(Debug, Clone, PartialEq)]
pub struct RetentionPosterior {
    pub config: BartConfig,
    pub chains: usize,
    pub snapshots_per_chain: usize,
    /// Forest snapshots, chain-major.
    pub forests: Vec<Forest>,
    /// Row of `p_draws` each snapshot was taken at.
    pub snapshot_draws: Vec<usize>,
    /// Retention probability per post-tuning iteration (chain-major) and training row.
    pub p_draws: DrawMatrix,
    /// In-sample binomial log-likelihood per iteration.
    pub loglik: ChainDraws,
    pub leaf_acceptance: Vec<f64>,
    pub structure_acceptance: Vec<f64>,
}

/// What is persisted between fitting and prediction: forests and the config that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestArchive {
    pub config: BartConfig,
    pub chains: usize,
    pub snapshots_per_chain: usize,
    pub forests: Vec<Forest>,
}

impl RetentionPosterior {
    pub fn archive(&self) -> ForestArchive {
        ForestArchive {
            config: self.config.clone(),
            chains: self.chains,
            snapshots_per_chain: self.snapshots_per_chain,
            forests: self.forests.clone(),
        }
    }

    /// Rebuilds a posterior for prediction; training draws are not part of the archive.
    pub fn from_archive(archive: ForestArchive) -> Result<Self, BartError> {
        if archive.forests.is_empty() || archive.forests.len() != archive.chains * archive.snapshots_per_chain {
            return Err(BartError::NoSnapshots);
        }
        let placeholder = vec![0.0; archive.chains];
        Ok(Self {
            loglik: ChainDraws::new(archive.chains, 1, 1, placeholder)?,
            config: archive.config,
            chains: archive.chains,
            snapshots_per_chain: archive.snapshots_per_chain,
            forests: archive.forests,
            snapshot_draws: Vec::new(),
            p_draws: DrawMatrix::new(0, 0, Vec::new()),
            leaf_acceptance: Vec::new(),
            structure_acceptance: Vec::new(),
        })
    }

    /// Snapshot forests' predictions as per-chain traces, usable with R-hat and ESS.
    pub fn snapshot_chains(&self, values: &[f64]) -> Result<ChainDraws, BartError> {
        Ok(ChainDraws::new(self.chains, self.snapshots_per_chain, 1, values.to_vec())?)
    }
}

/// Fits the retention ensemble. `counts[i]` is `(n_active, n_total)` for `features.rows[i]`.
pub fn fit_retention(
    features: &FeatureMatrix,
    counts: &[(u64, u64)],
    config: &BartConfig,
    rng: RngStream,
) -> Result<RetentionPosterior, BartError> {
    config.validate()?;
    let data = sampler::TrainData::new(features, counts)?;
    let outputs: Vec<_> = (0..config.chains)
        .into_par_iter()
        .map(|c| sampler::run_chain(&data, config, rng.substream(c as u64)))
        .collect();
    sampler::assemble(config, features.len(), outputs)
}

/// Retention probability per forest snapshot (rows) and feature row (columns).
pub fn predict_p(posterior: &RetentionPosterior, new_features: &FeatureMatrix) -> DrawMatrix {
    let x = new_features.tree_inputs();
    let values: Vec<f64> = posterior
        .forests
        .par_iter()
        .flat_map_iter(|f| x.iter().map(move |row| f.predict_p(row)))
        .collect();
    DrawMatrix::new(posterior.forests.len(), x.len(), values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{FeatureRow, ReferencePolicy};
    use crate::inference::hdi;
    use crate::month::YearMonth;

    fn ym(s: &str) -> YearMonth {
        s.parse().unwrap()
    }

    fn small_config() -> BartConfig {
        BartConfig {
            m: 10,
            tune: 300,
            draws: 300,
            chains: 2,
            ..BartConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(BartConfig::default().validate().is_ok());
        assert!((BartConfig::default().sigma_leaf() - 3.0 / 50f64.sqrt()).abs() < 1e-15);
        for bad in [
            BartConfig { alpha: 1.0, ..BartConfig::default() },
            BartConfig { beta: -1.0, ..BartConfig::default() },
            BartConfig { m: 0, ..BartConfig::default() },
            BartConfig { sigma_leaf: Some(0.0), ..BartConfig::default() },
        ] {
            assert!(matches!(bad.validate(), Err(BartError::InvalidConfig(_))));
        }
    }

    #[test]
    fn rejects_bad_rows() {
        let cfg = small_config();
        let f = FeatureMatrix::from_keys([(ym("2021-01"), ym("2021-01"))], ym("2021-06"), ReferencePolicy::Frozen);
        assert!(matches!(fit_retention(&f, &[(1, 1)], &cfg, RngStream::new(0, 0)), Err(BartError::DiagonalRow(0))));
        let f = FeatureMatrix::from_keys([(ym("2021-01"), ym("2021-02"))], ym("2021-06"), ReferencePolicy::Frozen);
        assert!(matches!(fit_retention(&f, &[(0, 0)], &cfg, RngStream::new(0, 0)), Err(BartError::InvalidCounts { .. })));
        assert!(matches!(fit_retention(&f, &[], &cfg, RngStream::new(0, 0)), Err(BartError::LengthMismatch { .. })));
        let empty = FeatureMatrix::from_keys([], ym("2021-06"), ReferencePolicy::Frozen);
        assert!(matches!(fit_retention(&empty, &[], &cfg, RngStream::new(0, 0)), Err(BartError::DegenerateData(_))));
    }

    #[test]
    fn constant_data_recovers_pooled_rate() {
        let key = (ym("2021-01"), ym("2021-03"));
        let f = FeatureMatrix::from_keys(vec![key; 20], ym("2021-06"), ReferencePolicy::Frozen);
        let counts = vec![(300, 1000); 20];
        let post = fit_retention(&f, &counts, &small_config(), RngStream::new(7, 0)).unwrap();
        assert!(post.forests.iter().all(|f| f.trees.iter().all(|t| t.n_leaves() == 1)));
        let p = post.p_draws.column(0);
        let mean = p.iter().sum::<f64>() / p.len() as f64;
        assert!((0.28..=0.32).contains(&mean), "{mean}");
        assert!(hdi(&p, 0.94).unwrap().contains(0.30));
    }

    #[test]
    fn two_clusters() {
        let mut keys = Vec::new();
        let mut counts = Vec::new();
        for i in 0..10 {
            keys.push((ym("2021-01"), ym("2021-03")));
            counts.push((100 + i % 3, 500));
            keys.push((ym("2021-01"), ym("2021-09")));
            counts.push((300 - i % 3, 500));
        }
        let f = FeatureMatrix::from_keys(keys, ym("2021-12"), ReferencePolicy::Frozen);
        let post = fit_retention(&f, &counts, &small_config(), RngStream::new(3, 0)).unwrap();
        let means = post.p_draws.column_means();
        assert!((means[0] - 0.2).abs() < 0.05, "{}", means[0]);
        assert!((means[1] - 0.6).abs() < 0.05, "{}", means[1]);
    }

    #[test]
    fn snapshots_match_training_draws() {
        let keys: Vec<_> = (1..=8).map(|k| (ym("2021-01"), ym("2021-01").add_months(k))).collect();
        let counts: Vec<_> = (0..8).map(|i| (100 + 20 * i as u64, 500)).collect();
        let f = FeatureMatrix::from_keys(keys, ym("2021-12"), ReferencePolicy::Frozen);
        let post = fit_retention(&f, &counts, &small_config(), RngStream::new(5, 0)).unwrap();
        let pred = predict_p(&post, &f);
        assert_eq!(pred.n_draws, post.forests.len());
        for (s, &d) in post.snapshot_draws.iter().enumerate() {
            assert_eq!(pred.draw(s), post.p_draws.draw(d));
        }
        assert!(post.p_draws.values.iter().all(|&p| p > 0.0 && p < 1.0));
        let again = fit_retention(&f, &counts, &small_config(), RngStream::new(5, 0)).unwrap();
        assert_eq!(again, post);
    }

    #[test]
    fn zero_leaf_forest_predicts_half() {
        let archive = ForestArchive {
            config: BartConfig::default(),
            chains: 1,
            snapshots_per_chain: 1,
            forests: vec![Forest {
                trees: vec![TreeNode::leaf(0.0)],
            }],
        };
        let post = RetentionPosterior::from_archive(archive).unwrap();
        let row = FeatureRow::new(ym("2020-01"), ym("2020-05"), ym("2020-12"), ReferencePolicy::Frozen);
        let f = FeatureMatrix {
            reference: ym("2020-12"),
            policy: ReferencePolicy::Frozen,
            rows: vec![row; 3],
        };
        assert!(predict_p(&post, &f).values.iter().all(|&p| p == 0.5));
    }
}
