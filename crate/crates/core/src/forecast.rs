//! Joint posterior predictive draws of retention, active users and revenue.
//!
//! For every aligned posterior draw a row gets `n_active ~ Binomial(n_total, p)` and then
//! `revenue ~ Gamma(n_active, λ)`, so the revenue uncertainty carries the active-user noise.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use rand::distr::Distribution;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bart::{predict_p, BartError, RetentionPosterior};
use crate::data::{CohortTable, FeatureMatrix, ReferencePolicy};
use crate::inference::{hdi, DrawMatrix, HdiInterval, InferenceError, RngStream};
use crate::month::YearMonth;
use crate::revenue::{predict_rate, RevenueError, RevenuePosterior};

pub const DEFAULT_HDI_MASS: f64 = 0.94;

#[derive(Debug, Error)]
pub enum ForecastError {
    #[error("posterior draws cannot be aligned: retention has {retention}, revenue has {revenue}")]
    DrawMismatch { retention: usize, revenue: usize },
    #[error("no forecast row for {} actual cell(s): {}", .0.len(), .0.join(", "))]
    JoinMismatch(Vec<String>),
    #[error("invalid forecast grid: {0}")]
    InvalidGrid(String),
    #[error(transparent)]
    Bart(#[from] BartError),
    #[error(transparent)]
    Revenue(#[from] RevenueError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// A cell to forecast. Cohort sizes of future cohorts are scenario inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridRow {
    pub cohort: YearMonth,
    pub period: YearMonth,
    pub n_total: u64,
}

impl GridRow {
    /// Every non-diagonal cell of a table, with its observed cohort size.
    pub fn from_table(table: &CohortTable) -> Vec<GridRow> {
        table
            .non_diagonal()
            .rows()
            .iter()
            .map(|r| GridRow {
                cohort: r.cohort,
                period: r.period,
                n_total: r.n_total,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub hdi: HdiInterval,
}

/// Mean and HDI; a single draw gives a zero-width interval at that draw.
fn summarize(values: &[f64], mass: f64) -> Result<Summary, InferenceError> {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let hdi = match values {
        [only] => HdiInterval {
            lower: *only,
            upper: *only,
            mass,
        },
        _ => hdi(values, mass)?,
    };
    Ok(Summary { mean, hdi })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRow {
    pub cohort: YearMonth,
    pub period: YearMonth,
    pub n_total: u64,
    /// Months past the cutoff; 0 for cells at or before it.
    pub horizon: u32,
    pub p_draws: Vec<f64>,
    pub n_active_draws: Vec<u64>,
    pub revenue_draws: Vec<f64>,
    /// Retention probability.
    pub p: Summary,
    /// Predictive retention `n_active / n_total`; falls back to `p` for empty cohorts.
    pub retention: Summary,
    pub n_active: Summary,
    pub revenue: Summary,
}

impl ForecastRow {
    pub fn key(&self) -> (YearMonth, YearMonth) {
        (self.cohort, self.period)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastTable {
    pub rows: Vec<ForecastRow>,
    pub cutoff: YearMonth,
    pub mass: f64,
    pub reference: YearMonth,
    pub policy: ReferencePolicy,
    pub draws: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastConfig {
    pub cutoff: YearMonth,
    /// Reference period for the `age` feature; normally the training cutoff.
    pub reference: YearMonth,
    pub policy: ReferencePolicy,
    pub mass: f64,
}

impl ForecastConfig {
    pub fn new(cutoff: YearMonth) -> Self {
        Self {
            cutoff,
            reference: cutoff,
            policy: ReferencePolicy::Frozen,
            mass: DEFAULT_HDI_MASS,
        }
    }
}

/// `n` indices spread evenly over `0..len`.
fn spread(len: usize, n: usize) -> Vec<usize> {
    (0..n).map(|k| k * len / n).collect()
}

/// Draws for one row; `rng` is the row's private stream.
pub fn sample_row(n_total: u64, p: &[f64], lambda: &[f64], rng: &mut ChaCha8Rng) -> (Vec<u64>, Vec<f64>) {
    let mut active = Vec::with_capacity(p.len());
    let mut revenue = Vec::with_capacity(p.len());
    for (&p, &lambda) in p.iter().zip(lambda) {
        let a = Binomial::new(n_total, p).expect("p lies in (0, 1)").sample(rng);
        let r = if a == 0 {
            0.0
        } else {
            Gamma::new(a as f64, 1.0 / lambda).expect("positive gamma parameters").sample(rng)
        };
        active.push(a);
        revenue.push(r);
    }
    (active, revenue)
}

pub fn forecast(
    retention: &RetentionPosterior,
    revenue: &RevenuePosterior,
    grid: &[GridRow],
    config: &ForecastConfig,
    rng: RngStream,
) -> Result<ForecastTable, ForecastError> {
    if !(config.mass > 0.0 && config.mass < 1.0) {
        return Err(ForecastError::InvalidGrid(format!("HDI mass {} outside (0, 1)", config.mass)));
    }
    if grid.is_empty() {
        return Err(ForecastError::InvalidGrid("no rows".into()));
    }
    if let Some(g) = grid.iter().find(|g| g.period <= g.cohort) {
        return Err(ForecastError::InvalidGrid(format!("{}/{} is not after its cohort month", g.cohort, g.period)));
    }
    let n_ret = retention.forests.len();
    let n_rev = revenue.draws.total_draws();
    if n_ret == 0 || n_rev == 0 {
        return Err(ForecastError::DrawMismatch {
            retention: n_ret,
            revenue: n_rev,
        });
    }
    let features =
        FeatureMatrix::from_keys(grid.iter().map(|g| (g.cohort, g.period)), config.reference, config.policy);
    let n_draws = n_ret.min(n_rev);
    let p = predict_p(retention, &features).select_draws(&spread(n_ret, n_draws));
    let lambda = predict_rate(revenue, &features)?.select_draws(&spread(n_rev, n_draws));

    let rows = grid
        .par_iter()
        .enumerate()
        .map(|(i, g)| build_row(i, g, &p, &lambda, config, rng))
        .collect::<Result<Vec<_>, InferenceError>>()?;
    Ok(ForecastTable {
        rows,
        cutoff: config.cutoff,
        mass: config.mass,
        reference: config.reference,
        policy: config.policy,
        draws: n_draws,
    })
}

fn build_row(
    i: usize,
    g: &GridRow,
    p: &DrawMatrix,
    lambda: &DrawMatrix,
    config: &ForecastConfig,
    rng: RngStream,
) -> Result<ForecastRow, InferenceError> {
    let p_draws = p.column(i);
    let (n_active_draws, revenue_draws) = sample_row(g.n_total, &p_draws, &lambda.column(i), &mut rng.substream(i as u64).rng());
    let active_f: Vec<f64> = n_active_draws.iter().map(|&a| a as f64).collect();
    let retention_draws: Vec<f64> = if g.n_total == 0 {
        p_draws.clone()
    } else {
        active_f.iter().map(|a| a / g.n_total as f64).collect()
    };
    Ok(ForecastRow {
        cohort: g.cohort,
        period: g.period,
        n_total: g.n_total,
        horizon: g.period.months_since(config.cutoff).max(0) as u32,
        p: summarize(&p_draws, config.mass)?,
        retention: summarize(&retention_draws, config.mass)?,
        n_active: summarize(&active_f, config.mass)?,
        revenue: summarize(&revenue_draws, config.mass)?,
        p_draws,
        n_active_draws,
        revenue_draws,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantity {
    Retention,
    NActive,
    Revenue,
}

/// Replicate datasets: entry `d` holds every row's value at draw `d`.
pub fn replicates(table: &ForecastTable, quantity: Quantity) -> Vec<Vec<f64>> {
    (0..table.draws)
        .map(|d| {
            table
                .rows
                .iter()
                .map(|r| match quantity {
                    Quantity::Retention if r.n_total == 0 => r.p_draws[d],
                    Quantity::Retention => r.n_active_draws[d] as f64 / r.n_total as f64,
                    Quantity::NActive => r.n_active_draws[d] as f64,
                    Quantity::Revenue => r.revenue_draws[d],
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetentionCell {
    pub cohort: YearMonth,
    pub period: YearMonth,
    pub horizon: u32,
    pub mean_p: f64,
    pub mean: f64,
    pub hdi_low: f64,
    pub hdi_high: f64,
    pub observed: Option<f64>,
}

/// Retention matrix in long form, with observed retention overlaid where `actuals` has the cell.
pub fn retention_summary(table: &ForecastTable, actuals: Option<&CohortTable>) -> Vec<RetentionCell> {
    table
        .rows
        .iter()
        .map(|r| RetentionCell {
            cohort: r.cohort,
            period: r.period,
            horizon: r.horizon,
            mean_p: r.p.mean,
            mean: r.retention.mean,
            hdi_low: r.retention.hdi.lower,
            hdi_high: r.retention.hdi.upper,
            observed: actuals.and_then(|a| a.get(r.cohort, r.period)).map(|c| c.retention()),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonCoverage {
    pub horizon: u32,
    pub cells: usize,
    pub retention: f64,
    pub revenue: f64,
    pub mean_retention_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub mass: f64,
    pub cells: usize,
    pub retention: f64,
    pub revenue: f64,
    pub by_horizon: Vec<HorizonCoverage>,
}

/// Share of actual non-diagonal cells inside their HDIs. Every such cell must have a forecast row.
pub fn coverage_report(table: &ForecastTable, actuals: &CohortTable) -> Result<CoverageReport, ForecastError> {
    let index: HashMap<(YearMonth, YearMonth), &ForecastRow> = table.rows.iter().map(|r| (r.key(), r)).collect();
    let actual_rows = actuals.non_diagonal();
    let missing: Vec<String> = actual_rows
        .rows()
        .iter()
        .filter(|a| !index.contains_key(&(a.cohort, a.period)))
        .map(|a| format!("{}/{}", a.cohort, a.period))
        .collect();
    if !missing.is_empty() {
        return Err(ForecastError::JoinMismatch(missing));
    }
    // horizon -> (cells, retention hits, revenue hits, width sum)
    let mut acc: BTreeMap<u32, (usize, usize, usize, f64)> = BTreeMap::new();
    for a in actual_rows.rows() {
        let f = index[&(a.cohort, a.period)];
        let e = acc.entry(f.horizon).or_default();
        e.0 += 1;
        e.1 += f.retention.hdi.contains(a.retention()) as usize;
        e.2 += f.revenue.hdi.contains(a.revenue) as usize;
        e.3 += f.retention.hdi.width();
    }
    let cells: usize = acc.values().map(|v| v.0).sum();
    let share = |hits: usize, n: usize| if n == 0 { 0.0 } else { hits as f64 / n as f64 };
    Ok(CoverageReport {
        mass: table.mass,
        cells,
        retention: share(acc.values().map(|v| v.1).sum(), cells),
        revenue: share(acc.values().map(|v| v.2).sum(), cells),
        by_horizon: acc
            .into_iter()
            .map(|(horizon, (n, ret, rev, width))| HorizonCoverage {
                horizon,
                cells: n,
                retention: share(ret, n),
                revenue: share(rev, n),
                mean_retention_width: width / n as f64,
            })
            .collect(),
    })
}

/// Reads a grid CSV with columns `cohort`, `period` and `n_users`.
pub fn read_grid_csv<R: Read>(reader: R) -> Result<Vec<GridRow>, ForecastError> {
    let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = csv.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| ForecastError::InvalidGrid(format!("missing column {name}")))
    };
    let (c, p, n) = (column("cohort")?, column("period")?, column("n_users")?);
    let mut rows = Vec::new();
    for (i, record) in csv.records().enumerate() {
        let record = record?;
        let bad = |what: &str| ForecastError::InvalidGrid(format!("row {}: unparseable {what}", i + 1));
        rows.push(GridRow {
            cohort: record[c].parse().map_err(|_| bad("cohort"))?,
            period: record[p].parse().map_err(|_| bad("period"))?,
            n_total: record[n].parse().map_err(|_| bad("n_users"))?,
        });
    }
    Ok(rows)
}

/// Summary CSV: `cohort,period,horizon,quantity,mean,hdi_low,hdi_high,observed`.
pub fn write_forecast_csv<W: Write>(
    table: &ForecastTable,
    actuals: Option<&CohortTable>,
    writer: W,
) -> Result<(), ForecastError> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(["cohort", "period", "horizon", "quantity", "mean", "hdi_low", "hdi_high", "observed"])?;
    for r in &table.rows {
        let actual = actuals.and_then(|a| a.get(r.cohort, r.period));
        let observed = [
            actual.map(|a| a.retention()),
            actual.map(|a| a.n_active as f64),
            actual.map(|a| a.revenue),
        ];
        for ((name, s), obs) in [("retention", &r.retention), ("n_active", &r.n_active), ("revenue", &r.revenue)]
            .into_iter()
            .zip(observed)
        {
            csv.write_record([
                r.cohort.to_string(),
                r.period.to_string(),
                r.horizon.to_string(),
                name.to_string(),
                s.mean.to_string(),
                s.hdi.lower.to_string(),
                s.hdi.upper.to_string(),
                obs.map(|v| v.to_string()).unwrap_or_default(),
            ])?;
        }
    }
    csv.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Every draw: `cohort,period,draw,p,n_active,revenue`.
pub fn write_draws_csv<W: Write>(table: &ForecastTable, writer: W) -> Result<(), ForecastError> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(["cohort", "period", "draw", "p", "n_active", "revenue"])?;
    for r in &table.rows {
        for d in 0..r.p_draws.len() {
            csv.write_record([
                r.cohort.to_string(),
                r.period.to_string(),
                d.to_string(),
                r.p_draws[d].to_string(),
                r.n_active_draws[d].to_string(),
                r.revenue_draws[d].to_string(),
            ])?;
        }
    }
    csv.flush().map_err(csv::Error::from)?;
    Ok(())
}
