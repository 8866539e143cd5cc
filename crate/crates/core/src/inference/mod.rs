//! Probabilistic machinery shared by both model components: reproducible random streams,
//! log-density kernels, an adaptive Metropolis sampler and convergence / calibration
//! diagnostics.

mod diagnostics;
mod loglik;
mod mh;
mod rng;

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use diagnostics::{ecdf_ppc, ess, hdi, split_rhat, summarize, Ess, HdiInterval, ParamSummary, PpcPoint, PpcReport};
pub use loglik::{binomial_loglik, binomial_loglik_logit, clamp_prob, gamma_loglik, logistic, normal_logpdf, PROB_EPS};
pub use mh::{adaptive_mh_sample, SamplerConfig};
pub(crate) use mh::StepAdapter;
pub use rng::RngStream;

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("log posterior is not finite at the initial point")]
    NonFiniteLogPost,
    #[error("chain {chain} is stuck: acceptance {acceptance:.4} over sampling")]
    StuckChain { chain: usize, acceptance: f64 },
    #[error("need at least 2 draws, got {0}")]
    TooFewDraws(usize),
    #[error("need at least 2 chains with 4 draws each (got {chains} x {draws})")]
    TooFewChains { chains: usize, draws: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("need at least {needed} simulated replicates, got {got}")]
    TooFewReplicates { needed: usize, got: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("draw values must be finite")]
    NonFiniteDraw,
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Post-tuning draws laid out as `[chain][draw][dim]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainDraws {
    pub chains: usize,
    pub draws_per_chain: usize,
    pub dim: usize,
    pub values: Vec<f64>,
    pub tune_discarded: usize,
    /// Per-chain acceptance rate over the sampling phase, when produced by a sampler.
    pub acceptance: Vec<f64>,
}

impl ChainDraws {
    pub fn new(chains: usize, draws_per_chain: usize, dim: usize, values: Vec<f64>) -> Result<Self, InferenceError> {
        if chains == 0 || draws_per_chain == 0 || dim == 0 {
            return Err(InferenceError::EmptyInput);
        }
        if values.len() != chains * draws_per_chain * dim {
            return Err(InferenceError::InvalidConfig(format!(
                "expected {} values for {chains}x{draws_per_chain}x{dim}, got {}",
                chains * draws_per_chain * dim,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(InferenceError::NonFiniteDraw);
        }
        Ok(Self {
            chains,
            draws_per_chain,
            dim,
            values,
            tune_discarded: 0,
            acceptance: Vec::new(),
        })
    }

    /// One-parameter draws from per-chain traces of equal length.
    pub fn from_chains(chains: &[Vec<f64>]) -> Result<Self, InferenceError> {
        let n = chains.first().map_or(0, Vec::len);
        if chains.iter().any(|c| c.len() != n) {
            return Err(InferenceError::InvalidConfig("chains differ in length".into()));
        }
        Self::new(chains.len(), n, 1, chains.concat())
    }

    pub fn get(&self, chain: usize, draw: usize, param: usize) -> f64 {
        self.values[(chain * self.draws_per_chain + draw) * self.dim + param]
    }

    pub fn draw(&self, chain: usize, draw: usize) -> &[f64] {
        let start = (chain * self.draws_per_chain + draw) * self.dim;
        &self.values[start..start + self.dim]
    }

    pub fn total_draws(&self) -> usize {
        self.chains * self.draws_per_chain
    }

    pub fn chain_trace(&self, chain: usize, param: usize) -> Vec<f64> {
        (0..self.draws_per_chain).map(|d| self.get(chain, d, param)).collect()
    }

    /// All draws of one parameter, chain-major.
    pub fn param_values(&self, param: usize) -> Vec<f64> {
        (0..self.chains)
            .flat_map(|c| (0..self.draws_per_chain).map(move |d| (c, d)))
            .map(|(c, d)| self.get(c, d, param))
            .collect()
    }

    pub fn param_mean(&self, param: usize) -> f64 {
        self.param_values(param).iter().sum::<f64>() / self.total_draws() as f64
    }

    /// Long-format CSV with columns `chain,draw,parameter,value`.
    pub fn write_csv<W: Write>(&self, names: &[&str], writer: W) -> Result<(), InferenceError> {
        let mut csv = csv::Writer::from_writer(writer);
        csv.write_record(["chain", "draw", "parameter", "value"])?;
        for c in 0..self.chains {
            for d in 0..self.draws_per_chain {
                for (p, name) in names.iter().enumerate().take(self.dim) {
                    csv.write_record([c.to_string(), d.to_string(), name.to_string(), self.get(c, d, p).to_string()])?;
                }
            }
        }
        csv.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// Per-draw predictions, `n_draws` rows by `n_cols` columns, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawMatrix {
    pub n_draws: usize,
    pub n_cols: usize,
    pub values: Vec<f64>,
}

impl DrawMatrix {
    pub fn new(n_draws: usize, n_cols: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), n_draws * n_cols, "draw matrix shape mismatch");
        Self { n_draws, n_cols, values }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>, n_cols: usize) -> Self {
        let n_draws = rows.len();
        Self::new(n_draws, n_cols, rows.concat())
    }

    pub fn get(&self, draw: usize, col: usize) -> f64 {
        self.values[draw * self.n_cols + col]
    }

    pub fn draw(&self, draw: usize) -> &[f64] {
        &self.values[draw * self.n_cols..(draw + 1) * self.n_cols]
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.n_draws).map(|d| self.get(d, col)).collect()
    }

    pub fn column_means(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.n_cols];
        for d in 0..self.n_draws {
            for (acc, v) in m.iter_mut().zip(self.draw(d)) {
                *acc += v;
            }
        }
        m.iter_mut().for_each(|v| *v /= self.n_draws as f64);
        m
    }

    /// The rows at `indices`, in that order.
    pub fn select_draws(&self, indices: &[usize]) -> DrawMatrix {
        let values = indices.iter().flat_map(|&d| self.draw(d).iter().copied()).collect();
        DrawMatrix::new(indices.len(), self.n_cols, values)
    }
}

/// Summary JSON: parameter name to its diagnostics.
pub fn write_summary_json<W: Write>(summaries: &[ParamSummary], writer: W) -> Result<(), InferenceError> {
    let map: BTreeMap<&str, &ParamSummary> = summaries.iter().map(|s| (s.parameter.as_str(), s)).collect();
    serde_json::to_writer_pretty(writer, &map)?;
    Ok(())
}
