//! Adaptive random-walk Metropolis.
//!
//! Tuning runs in three stages. A fast stage adapts only the global step scale. A slow
//! stage runs doubling windows; at the end of each one the per-coordinate proposal variance
//! is re-estimated from the window's states and the scale adaptation restarts. A final
//! fast stage settles the scale under the last variance estimate. After tuning every
//! adapted quantity is frozen, so the sampling phase is a plain Metropolis chain.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ChainDraws, InferenceError, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub chains: usize,
    pub tune: usize,
    pub draws: usize,
    /// Metropolis steps per stored draw.
    pub thin: usize,
    /// Target acceptance probability; `None` picks 0.44 in one dimension and 0.234 otherwise.
    pub target_accept: Option<f64>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            chains: 4,
            tune: 1000,
            draws: 1000,
            thin: 1,
            target_accept: None,
        }
    }
}

impl SamplerConfig {
    pub fn target_for(&self, dim: usize) -> f64 {
        self.target_accept.unwrap_or(if dim == 1 { 0.44 } else { 0.234 })
    }

    pub(crate) fn validate(&self) -> Result<(), InferenceError> {
        if self.chains == 0 || self.draws == 0 || self.thin == 0 {
            return Err(InferenceError::InvalidConfig(
                "chains, draws and thin must all be at least 1".into(),
            ));
        }
        if let Some(t) = self.target_accept {
            if !(t > 0.0 && t < 1.0) {
                return Err(InferenceError::InvalidConfig(format!("target acceptance {t} outside (0, 1)")));
            }
        }
        Ok(())
    }
}

/// Robbins–Monro update of a log step size toward a target acceptance probability.
#[derive(Debug, Clone)]
pub(crate) struct StepAdapter {
    pub log_step: f64,
    target: f64,
    t: usize,
}

impl StepAdapter {
    pub fn new(step: f64, target: f64) -> Self {
        Self {
            log_step: step.ln(),
            target,
            t: 0,
        }
    }

    pub fn step(&self) -> f64 {
        self.log_step.exp()
    }

    pub fn update(&mut self, accept_prob: f64) {
        self.t += 1;
        let gain = (self.t as f64).powf(-0.6);
        self.log_step = (self.log_step + gain * (accept_prob - self.target)).clamp(-25.0, 5.0);
    }

    pub fn restart(&mut self, step: f64) {
        self.log_step = step.ln();
        self.t = 0;
    }
}

/// Ends (exclusive) of the variance-estimation windows within `tune` iterations.
fn slow_window_ends(tune: usize) -> Vec<usize> {
    let start = tune * 15 / 100;
    let end = tune * 90 / 100;
    let mut ends = Vec::new();
    let mut width = ((end - start) / 15).max(10);
    let mut at = start;
    while at + width < end {
        let next = if at + 3 * width > end { end } else { at + width };
        ends.push(next);
        at = next;
        width *= 2;
    }
    if at < end && end - start >= 10 {
        ends.push(end);
    }
    ends
}

#[derive(Debug, Default)]
struct Welford {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(dim: usize) -> Self {
        Self {
            n: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    fn push(&mut self, x: &[f64]) {
        self.n += 1;
        for ((m, s), &v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let d = v - *m;
            *m += d / self.n as f64;
            *s += d * (v - *m);
        }
    }

    /// Sample variance shrunk toward 1e-3 as in Stan's windowed adaptation.
    fn regularized_variance(&self) -> Vec<f64> {
        let n = self.n as f64;
        self.m2
            .iter()
            .map(|&s| {
                let var = if self.n > 1 { s / (n - 1.0) } else { 1.0 };
                (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
            })
            .collect()
    }
}

struct ChainResult {
    values: Vec<f64>,
    acceptance: f64,
}

fn run_chain<F>(
    logpost: &F,
    dim: usize,
    config: &SamplerConfig,
    rng_stream: RngStream,
) -> Result<ChainResult, InferenceError>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let mut rng = rng_stream.rng();
    let mut x = vec![0.0; dim];
    let mut lp = logpost(&x);
    if !lp.is_finite() {
        return Err(InferenceError::NonFiniteLogPost);
    }
    let target = config.target_for(dim);
    let base_step = 2.38 / (dim as f64).sqrt();
    let mut adapter = StepAdapter::new(base_step, target);
    let mut var = vec![1.0; dim];
    let mut proposal = vec![0.0; dim];

    let mut mh_step = |x: &mut Vec<f64>, lp: &mut f64, step: f64, var: &[f64], rng: &mut rand_chacha::ChaCha8Rng| -> (f64, bool) {
        for ((p, &xi), &v) in proposal.iter_mut().zip(x.iter()).zip(var) {
            let z: f64 = rng.sample(StandardNormal);
            *p = xi + step * v.sqrt() * z;
        }
        let lp_new = logpost(&proposal);
        let log_ratio = if lp_new.is_nan() { f64::NEG_INFINITY } else { lp_new - *lp };
        let accept_prob = log_ratio.min(0.0).exp();
        let u: f64 = rng.random();
        let accepted = u < accept_prob;
        if accepted {
            x.copy_from_slice(&proposal);
            *lp = lp_new;
        }
        (accept_prob, accepted)
    };

    let window_ends = slow_window_ends(config.tune);
    let slow_start = config.tune * 15 / 100;
    let mut window = Welford::new(dim);
    let mut next_window = 0;
    for t in 0..config.tune {
        let (a, _) = mh_step(&mut x, &mut lp, adapter.step(), &var, &mut rng);
        adapter.update(a);
        if t >= slow_start && next_window < window_ends.len() {
            window.push(&x);
            if t + 1 == window_ends[next_window] {
                var = window.regularized_variance();
                window = Welford::new(dim);
                adapter.restart(base_step);
                next_window += 1;
            }
        }
    }

    let step = adapter.step();
    let mut values = Vec::with_capacity(config.draws * dim);
    let mut accepted = 0usize;
    for _ in 0..config.draws {
        for _ in 0..config.thin {
            let (_, acc) = mh_step(&mut x, &mut lp, step, &var, &mut rng);
            accepted += acc as usize;
        }
        values.extend_from_slice(&x);
    }
    Ok(ChainResult {
        values,
        acceptance: accepted as f64 / (config.draws * config.thin) as f64,
    })
}

/// Samples `logpost` from the zero vector with independent chains, one random substream each.
pub fn adaptive_mh_sample<F>(
    logpost: F,
    dim: usize,
    config: &SamplerConfig,
    rng: RngStream,
) -> Result<ChainDraws, InferenceError>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    config.validate()?;
    if dim == 0 {
        return Err(InferenceError::InvalidConfig("dimension must be at least 1".into()));
    }
    let results: Vec<ChainResult> = (0..config.chains)
        .into_par_iter()
        .map(|c| run_chain(&logpost, dim, config, rng.substream(c as u64)))
        .collect::<Result<_, _>>()?;

    for (chain, r) in results.iter().enumerate() {
        if r.acceptance < 0.01 {
            return Err(InferenceError::StuckChain {
                chain,
                acceptance: r.acceptance,
            });
        }
    }
    let acceptance = results.iter().map(|r| r.acceptance).collect();
    let values = results.into_iter().flat_map(|r| r.values).collect();
    let mut draws = ChainDraws::new(config.chains, config.draws, dim, values)?;
    draws.tune_discarded = config.tune;
    draws.acceptance = acceptance;
    Ok(draws)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::split_rhat;

    #[test]
    fn windows_cover_the_slow_stage() {
        let ends = slow_window_ends(1000);
        assert_eq!(*ends.last().unwrap(), 900);
        assert!(ends.windows(2).all(|w| w[0] < w[1]));
        assert!(ends[0] > 150);
        assert!(slow_window_ends(1).is_empty());
        assert!(slow_window_ends(0).is_empty());
    }

    #[test]
    fn standard_normal_moments() {
        let cfg = SamplerConfig {
            chains: 4,
            tune: 1000,
            draws: 2000,
            ..Default::default()
        };
        let d = adaptive_mh_sample(|x: &[f64]| -0.5 * x[0] * x[0], 1, &cfg, RngStream::new(11, 0)).unwrap();
        let all = d.param_values(0);
        let n = all.len() as f64;
        let mean = all.iter().sum::<f64>() / n;
        let sd = (all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!((0.93..=1.07).contains(&sd), "sd {sd}");
        for a in &d.acceptance {
            assert!((0.3..0.6).contains(a), "acceptance {a}");
        }
    }

    #[test]
    fn independent_normals_mix() {
        let scales = [1.0, 0.01, 5.0, 0.3];
        let lp = move |x: &[f64]| -> f64 { x.iter().zip(scales).map(|(v, s)| -0.5 * (v / s).powi(2)).sum() };
        let cfg = SamplerConfig {
            chains: 4,
            tune: 1000,
            draws: 2000,
            thin: 5,
            ..Default::default()
        };
        let d = adaptive_mh_sample(lp, 4, &cfg, RngStream::new(5, 1)).unwrap();
        for p in 0..4 {
            let r = split_rhat(&d, p).unwrap();
            assert!(r < 1.01, "param {p}: rhat {r}");
        }
    }

    #[test]
    fn non_finite_start_is_an_error() {
        let r = adaptive_mh_sample(|_: &[f64]| f64::NEG_INFINITY, 2, &SamplerConfig::default(), RngStream::new(1, 0));
        assert!(matches!(r, Err(InferenceError::NonFiniteLogPost)));
    }

    #[test]
    fn reproducible() {
        let cfg = SamplerConfig {
            chains: 2,
            tune: 200,
            draws: 100,
            ..Default::default()
        };
        let lp = |x: &[f64]| -0.5 * (x[0] * x[0] + 4.0 * x[1] * x[1]);
        let a = adaptive_mh_sample(lp, 2, &cfg, RngStream::new(9, 2)).unwrap();
        let b = adaptive_mh_sample(lp, 2, &cfg, RngStream::new(9, 2)).unwrap();
        assert_eq!(a, b);
    }
}
