use serde::{Deserialize, Serialize};

use super::{ChainDraws, InferenceError};

/// Narrowest interval holding a given share of the draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HdiInterval {
    pub lower: f64,
    pub upper: f64,
    pub mass: f64,
}

impl HdiInterval {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }
}

/// Number of sorted draws an HDI of `mass` must span, `ceil(mass * n)`.
///
/// A relative slack of 1e-9 keeps products such as `0.94 * 100` from rounding up a whole draw.
pub(crate) fn hdi_window_len(mass: f64, n: usize) -> usize {
    let exact = mass * n as f64;
    ((exact - exact * 1e-9).ceil() as usize).clamp(1, n)
}

fn check_mass(mass: f64) -> Result<(), InferenceError> {
    if mass > 0.0 && mass < 1.0 {
        Ok(())
    } else {
        Err(InferenceError::InvalidConfig(format!("HDI mass {mass} outside (0, 1)")))
    }
}

/// Minimal-width window over the sorted draws; ties go to the smallest lower bound.
pub fn hdi(draws: &[f64], mass: f64) -> Result<HdiInterval, InferenceError> {
    check_mass(mass)?;
    if draws.len() < 2 {
        return Err(InferenceError::TooFewDraws(draws.len()));
    }
    let mut sorted = draws.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    Ok(hdi_sorted(&sorted, mass))
}

pub(crate) fn hdi_sorted(sorted: &[f64], mass: f64) -> HdiInterval {
    let k = hdi_window_len(mass, sorted.len());
    let mut best = 0;
    let mut best_width = f64::INFINITY;
    for i in 0..=sorted.len() - k {
        let w = sorted[i + k - 1] - sorted[i];
        if w < best_width {
            best_width = w;
            best = i;
        }
    }
    HdiInterval {
        lower: sorted[best],
        upper: sorted[best + k - 1],
        mass,
    }
}

fn check_chains(draws: &ChainDraws) -> Result<(), InferenceError> {
    if draws.chains < 2 || draws.draws_per_chain < 4 {
        return Err(InferenceError::TooFewChains {
            chains: draws.chains,
            draws: draws.draws_per_chain,
        });
    }
    Ok(())
}

/// Each chain cut into two halves (the middle draw dropped when the length is odd).
fn split_traces(draws: &ChainDraws, param: usize) -> Vec<Vec<f64>> {
    let half = draws.draws_per_chain / 2;
    let offset = draws.draws_per_chain - half;
    (0..draws.chains)
        .flat_map(|c| {
            let t = draws.chain_trace(c, param);
            [t[..half].to_vec(), t[offset..].to_vec()]
        })
        .collect()
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_var(x: &[f64], m: f64) -> f64 {
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Within-chain variance `W` and the pooled estimate `var+` of split traces.
fn variance_components(traces: &[Vec<f64>]) -> (f64, f64, Vec<f64>) {
    let n = traces[0].len() as f64;
    let means: Vec<f64> = traces.iter().map(|t| mean(t)).collect();
    let w = traces.iter().zip(&means).map(|(t, &m)| sample_var(t, m)).sum::<f64>() / traces.len() as f64;
    let b_over_n = sample_var(&means, mean(&means));
    let var_plus = (n - 1.0) / n * w + b_over_n;
    (w, var_plus, means)
}

/// Split-R̂ from between- and within-chain variances of half-chains.
///
/// Chains that are all constant at the same value give 1.0; constant chains at different
/// values give infinity.
pub fn split_rhat(draws: &ChainDraws, param: usize) -> Result<f64, InferenceError> {
    check_chains(draws)?;
    let traces = split_traces(draws, param);
    let (w, var_plus, _) = variance_components(&traces);
    if w <= 0.0 {
        return Ok(if var_plus <= 0.0 { 1.0 } else { f64::INFINITY });
    }
    Ok((var_plus / w).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ess {
    pub value: f64,
    /// Set when every draw is identical; `value` then equals the number of draws.
    pub degenerate_variance: bool,
}

/// Multi-chain effective sample size with Geyer's initial monotone positive sequence,
/// computed on split chains and capped at the number of draws.
pub fn ess(draws: &ChainDraws, param: usize) -> Result<Ess, InferenceError> {
    check_chains(draws)?;
    let total = draws.total_draws() as f64;
    let traces = split_traces(draws, param);
    let n = traces[0].len();
    let m = traces.len() as f64;
    let (w, var_plus, means) = variance_components(&traces);
    if w <= 0.0 || var_plus <= 0.0 {
        return Ok(Ess {
            value: total,
            degenerate_variance: true,
        });
    }

    let autocov = |lag: usize| -> f64 {
        traces
            .iter()
            .zip(&means)
            .map(|(t, &mu)| {
                (0..n - lag).map(|i| (t[i] - mu) * (t[i + lag] - mu)).sum::<f64>() / n as f64
            })
            .sum::<f64>()
            / m
    };
    let rho = |lag: usize| 1.0 - (w - autocov(lag)) / var_plus;

    let mut rho_hat = vec![0.0; n + 1];
    rho_hat[0] = 1.0;
    let mut even = 1.0;
    let mut odd = rho(1);
    rho_hat[1] = odd;
    let mut t = 1;
    while t + 5 < n && even + odd > 0.0 {
        even = rho(t + 1);
        odd = rho(t + 2);
        if even + odd >= 0.0 {
            rho_hat[t + 1] = even;
            rho_hat[t + 2] = odd;
        }
        t += 2;
    }
    let max_t = t;
    if even > 0.0 {
        rho_hat[max_t + 1] = even;
    }
    let mut t = 1;
    while t + 4 <= max_t {
        if rho_hat[t + 1] + rho_hat[t + 2] > rho_hat[t - 1] + rho_hat[t] {
            rho_hat[t + 1] = (rho_hat[t - 1] + rho_hat[t]) / 2.0;
            rho_hat[t + 2] = rho_hat[t + 1];
        }
        t += 2;
    }
    let pooled = m * n as f64;
    let tau = (-1.0 + 2.0 * rho_hat[..max_t].iter().sum::<f64>() + rho_hat[max_t + 1]).max(1.0 / pooled.log10());
    Ok(Ess {
        value: (pooled / tau).min(total),
        degenerate_variance: false,
    })
}

/// Posterior summary of one parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub parameter: String,
    pub mean: f64,
    pub sd: f64,
    pub hdi_low: f64,
    pub hdi_high: f64,
    /// Absent when fewer than two chains were run.
    pub rhat: Option<f64>,
    pub ess: Option<f64>,
}

pub fn summarize(draws: &ChainDraws, names: &[&str], mass: f64) -> Result<Vec<ParamSummary>, InferenceError> {
    (0..draws.dim)
        .map(|p| {
            let values = draws.param_values(p);
            let m = mean(&values);
            let sd = if values.len() > 1 { sample_var(&values, m).sqrt() } else { 0.0 };
            let interval = if values.len() >= 2 {
                hdi(&values, mass)?
            } else {
                HdiInterval { lower: m, upper: m, mass }
            };
            Ok(ParamSummary {
                parameter: names.get(p).map_or_else(|| format!("param_{p}"), |s| s.to_string()),
                mean: m,
                sd,
                hdi_low: interval.lower,
                hdi_high: interval.upper,
                rhat: split_rhat(draws, p).ok(),
                ess: ess(draws, p).ok().map(|e| e.value),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpcPoint {
    pub x: f64,
    pub observed: f64,
    pub lower: f64,
    pub upper: f64,
    pub inside: bool,
}

/// ECDF posterior predictive comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpcReport {
    pub mass: f64,
    pub points: Vec<PpcPoint>,
    pub inside_fraction: f64,
}

pub const MIN_PPC_REPLICATES: usize = 50;

fn ecdf_at(sorted: &[f64], x: f64) -> f64 {
    sorted.partition_point(|&v| v <= x) as f64 / sorted.len() as f64
}

/// Compares the observed ECDF with pointwise HDI bands of replicate ECDFs, evaluated at the
/// distinct observed values.
pub fn ecdf_ppc(observed: &[f64], simulated: &[Vec<f64>], mass: f64) -> Result<PpcReport, InferenceError> {
    check_mass(mass)?;
    if observed.is_empty() || simulated.iter().any(Vec::is_empty) {
        return Err(InferenceError::EmptyInput);
    }
    if simulated.len() < MIN_PPC_REPLICATES {
        return Err(InferenceError::TooFewReplicates {
            needed: MIN_PPC_REPLICATES,
            got: simulated.len(),
        });
    }
    let mut obs = observed.to_vec();
    obs.sort_unstable_by(f64::total_cmp);
    let mut grid = obs.clone();
    grid.dedup();
    let reps: Vec<Vec<f64>> = simulated
        .iter()
        .map(|r| {
            let mut r = r.clone();
            r.sort_unstable_by(f64::total_cmp);
            r
        })
        .collect();

    let points: Vec<PpcPoint> = grid
        .iter()
        .map(|&x| {
            let observed = ecdf_at(&obs, x);
            let mut values: Vec<f64> = reps.iter().map(|r| ecdf_at(r, x)).collect();
            values.sort_unstable_by(f64::total_cmp);
            let band = hdi_sorted(&values, mass);
            PpcPoint {
                x,
                observed,
                lower: band.lower,
                upper: band.upper,
                inside: band.contains(observed),
            }
        })
        .collect();
    let inside_fraction = points.iter().filter(|p| p.inside).count() as f64 / points.len() as f64;
    Ok(PpcReport {
        mass,
        points,
        inside_fraction,
    })
}
