use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use cohort_ledger::bart::{
    fit_retention, pdp_ice, variable_importance, write_importance_csv, write_pdp_ice_csv, ImportanceConfig,
};
use cohort_ledger::data::{build_features_with_policy, load_cohort_table, LoadOptions, TREE_FEATURES};
use cohort_ledger::forecast::{
    coverage_report, forecast, read_grid_csv, replicates, write_draws_csv, write_forecast_csv, Quantity,
};
use cohort_ledger::inference::{ecdf_ppc, summarize, InferenceError, PpcReport};
use cohort_ledger::revenue::{fit_revenue, RevenueError, COEFFICIENT_NAMES};
use cohort_ledger::synthetic::generate;
use cohort_ledger::{
    BartConfig, ChainDraws, CohortTable, FeatureMatrix, ForecastConfig, ForestArchive, GridRow, ReferencePolicy,
    RetentionPosterior, RevenueConfig, RevenuePosterior, RngStream, SamplerConfig, YearMonth,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::settings::{check_out_dir, RunConfig};

pub const RHAT_GATE: f64 = 1.05;

pub const DATA_FILE: &str = "cohorts.csv";
pub const GENERATOR_FILE: &str = "generator.json";
pub const RUN_FILE: &str = "run.json";
pub const FORESTS_FILE: &str = "retention_forests.json";
pub const TRACE_FILE: &str = "retention_trace.json";
pub const REVENUE_FILE: &str = "revenue_posterior.json";
pub const REVENUE_DRAWS_FILE: &str = "revenue_draws.csv";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.json";
pub const FORECAST_FILE: &str = "forecast.csv";
pub const FORECAST_DRAWS_FILE: &str = "forecast_draws.csv";
pub const COVERAGE_FILE: &str = "coverage.json";
pub const IMPORTANCE_FILE: &str = "importance.csv";
pub const PPC_FILE: &str = "ppc.csv";

pub enum Outcome {
    Done,
    /// Artifacts were written but convergence diagnostics failed.
    GateFailed(String),
}

/// Everything about a fit that later commands need to rebuild its features.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitRun {
    pub cutoff: YearMonth,
    pub reference: YearMonth,
    pub policy: ReferencePolicy,
    pub seed: u64,
    pub chains: usize,
    pub tune: usize,
    pub draws: usize,
    pub trees: usize,
    pub hdi_mass: f64,
    pub training_rows: usize,
}

/// Retention sampler output that is not part of the forests.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct RetentionTrace {
    loglik: ChainDraws,
    leaf_acceptance: Vec<f64>,
    structure_acceptance: Vec<f64>,
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    Ok(BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(dir: &Path, name: &str) -> Result<T> {
    let path = dir.join(name);
    let file = File::open(&path).with_context(|| format!("missing artifact {} (run `fit` first)", path.display()))?;
    serde_json::from_reader(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
}

fn load_table(path: &Path) -> Result<CohortTable> {
    load_cohort_table(path, &LoadOptions::default()).with_context(|| format!("loading {}", path.display()))
}

/// Non-diagonal rows up to `cutoff` and their features.
fn training_set(table: &CohortTable, run: &FitRun) -> (CohortTable, FeatureMatrix) {
    let train = table.filter(|r| r.period <= run.cutoff && !r.is_diagonal());
    let features = build_features_with_policy(&train, run.reference, run.policy);
    (train, features)
}

pub fn simulate(cfg: &RunConfig) -> Result<Outcome> {
    let generator = cfg.generator()?;
    let table = generate(&generator)?;
    check_out_dir(&cfg.out)?;
    let mut w = create(&cfg.out, DATA_FILE)?;
    cohort_ledger::data::write_cohort_table(&table, &mut w, &Default::default())?;
    w.flush()?;
    write_json(&cfg.out, GENERATOR_FILE, &generator)?;
    println!("wrote {} rows to {}", table.len(), cfg.out.join(DATA_FILE).display());
    Ok(Outcome::Done)
}

fn diagnostics(revenue: Result<&ChainDraws, String>, trace: &RetentionTrace, mass: f64) -> Result<(Value, bool)> {
    let loglik = summarize(&trace.loglik, &["loglik"], mass)?;
    let retention = json!({
        "loglik": loglik[0],
        "leaf_acceptance": trace.leaf_acceptance,
        "structure_acceptance": trace.structure_acceptance,
    });
    let (revenue, passed) = match revenue {
        Ok(draws) => {
            let summary = summarize(draws, &COEFFICIENT_NAMES, mass)?;
            let passed = summary.iter().all(|s| s.rhat.is_none_or(|r| r < RHAT_GATE));
            let coefficients: serde_json::Map<String, Value> = summary
                .iter()
                .map(|s| Ok((s.parameter.clone(), serde_json::to_value(s)?)))
                .collect::<Result<_>>()?;
            (json!({ "coefficients": coefficients, "acceptance": draws.acceptance }), passed)
        }
        Err(message) => (json!({ "error": message }), false),
    };
    let value = json!({
        "hdi_mass": mass,
        "rhat_gate": RHAT_GATE,
        "gate_passed": passed,
        "retention": retention,
        "revenue": revenue,
    });
    Ok((value, passed))
}

fn print_diagnostics(value: &Value) {
    if let Some(coefs) = value["revenue"]["coefficients"].as_object() {
        println!("{:<14} {:>10} {:>10} {:>8} {:>8}", "parameter", "mean", "sd", "rhat", "ess");
        for (name, s) in coefs {
            println!(
                "{:<14} {:>10.4} {:>10.4} {:>8.4} {:>8.0}",
                name,
                s["mean"].as_f64().unwrap_or(f64::NAN),
                s["sd"].as_f64().unwrap_or(f64::NAN),
                s["rhat"].as_f64().unwrap_or(f64::NAN),
                s["ess"].as_f64().unwrap_or(f64::NAN)
            );
        }
    } else {
        println!("revenue: {}", value["revenue"]["error"]);
    }
    println!("retention loglik rhat: {}", value["retention"]["loglik"]["rhat"]);
}

pub fn fit(cfg: &RunConfig) -> Result<Outcome> {
    let table = load_table(cfg.require_input()?)?;
    let last = table.max_period().context("input has no rows")?;
    let cutoff = cfg.cutoff.unwrap_or(last);
    let run = FitRun {
        cutoff,
        reference: cutoff,
        policy: cfg.reference_policy.unwrap_or_default(),
        seed: cfg.seed,
        chains: cfg.chains,
        tune: cfg.tune,
        draws: cfg.draws,
        trees: cfg.trees,
        hdi_mass: cfg.hdi_mass,
        training_rows: 0,
    };
    let (train, features) = training_set(&table, &run);
    if train.is_empty() {
        anyhow::bail!("no non-diagonal rows at or before the cutoff {cutoff}");
    }
    let run = FitRun {
        training_rows: train.len(),
        ..run
    };
    check_out_dir(&cfg.out)?;

    let bart = BartConfig {
        m: cfg.trees,
        tune: cfg.tune,
        draws: cfg.draws,
        chains: cfg.chains,
        ..BartConfig::default()
    };
    let counts: Vec<_> = train.rows().iter().map(|r| (r.n_active, r.n_total)).collect();
    let retention = fit_retention(&features, &counts, &bart, RngStream::new(cfg.seed, 0))?;
    write_json(&cfg.out, FORESTS_FILE, &retention.archive())?;
    let trace = RetentionTrace {
        loglik: retention.loglik.clone(),
        leaf_acceptance: retention.leaf_acceptance.clone(),
        structure_acceptance: retention.structure_acceptance.clone(),
    };
    write_json(&cfg.out, TRACE_FILE, &trace)?;
    write_json(&cfg.out, RUN_FILE, &run)?;

    let revenue_cfg = RevenueConfig {
        sampler: SamplerConfig {
            chains: cfg.chains,
            tune: cfg.tune,
            draws: cfg.draws,
            ..RevenueConfig::default().sampler
        },
        ..RevenueConfig::default()
    };
    let observations: Vec<_> = train.rows().iter().map(|r| (r.n_active, r.revenue)).collect();
    let revenue = match fit_revenue(&features, &observations, &revenue_cfg, RngStream::new(cfg.seed, 1)) {
        Ok(posterior) => {
            write_json(&cfg.out, REVENUE_FILE, &posterior)?;
            let mut w = create(&cfg.out, REVENUE_DRAWS_FILE)?;
            posterior.draws.write_csv(&COEFFICIENT_NAMES, &mut w)?;
            w.flush()?;
            Ok(posterior)
        }
        Err(e @ RevenueError::Inference(InferenceError::StuckChain { .. })) => Err(e.to_string()),
        Err(e) => return Err(e.into()),
    };
    let (value, passed) = diagnostics(revenue.as_ref().map(|p| &p.draws).map_err(Clone::clone), &trace, cfg.hdi_mass)?;
    write_json(&cfg.out, DIAGNOSTICS_FILE, &value)?;
    print_diagnostics(&value);
    Ok(if passed {
        Outcome::Done
    } else {
        Outcome::GateFailed(format!("revenue R-hat reached {RHAT_GATE} or a chain stuck; see {DIAGNOSTICS_FILE}"))
    })
}

struct Fitted {
    run: FitRun,
    retention: RetentionPosterior,
    revenue: RevenuePosterior,
}

fn load_fitted(dir: &Path) -> Result<Fitted> {
    let run: FitRun = read_json(dir, RUN_FILE)?;
    let archive: ForestArchive = read_json(dir, FORESTS_FILE)?;
    let revenue: RevenuePosterior = read_json(dir, REVENUE_FILE)?;
    Ok(Fitted {
        run,
        retention: RetentionPosterior::from_archive(archive)?,
        revenue,
    })
}

fn forecast_config(cfg: &RunConfig, run: &FitRun) -> ForecastConfig {
    ForecastConfig {
        cutoff: run.cutoff,
        reference: run.reference,
        policy: cfg.reference_policy.unwrap_or(run.policy),
        mass: cfg.hdi_mass,
    }
}

pub fn predict(cfg: &RunConfig, grid_path: Option<&Path>, export_draws: bool) -> Result<Outcome> {
    let fitted = load_fitted(&cfg.out)?;
    let actuals = cfg.input.as_deref().map(load_table).transpose()?;
    let grid_path = grid_path.map(Path::to_path_buf).or(cfg.extra.get("grid").map(Into::into));
    let grid = match (&grid_path, &actuals) {
        (Some(path), _) => read_grid_csv(File::open(path).with_context(|| format!("opening grid {}", path.display()))?)?,
        (None, Some(table)) => GridRow::from_table(table),
        (None, None) => anyhow::bail!("predict needs --grid or --input"),
    };
    let fc = forecast_config(cfg, &fitted.run);
    let table = forecast(&fitted.retention, &fitted.revenue, &grid, &fc, RngStream::new(cfg.seed, 2))?;

    let mut w = create(&cfg.out, FORECAST_FILE)?;
    write_forecast_csv(&table, actuals.as_ref(), &mut w)?;
    w.flush()?;
    if export_draws {
        let mut w = create(&cfg.out, FORECAST_DRAWS_FILE)?;
        write_draws_csv(&table, &mut w)?;
        w.flush()?;
    }
    if let Some(actuals) = &actuals {
        let keys: HashSet<_> = grid.iter().map(|g| (g.cohort, g.period)).collect();
        let joined = actuals.filter(|r| keys.contains(&(r.cohort, r.period)));
        let report = coverage_report(&table, &joined)?;
        println!(
            "coverage over {} cells: retention {:.3}, revenue {:.3}",
            report.cells, report.retention, report.revenue
        );
        write_json(&cfg.out, COVERAGE_FILE, &report)?;
    }
    println!("wrote {} forecast rows to {}", table.rows.len(), cfg.out.join(FORECAST_FILE).display());
    Ok(Outcome::Done)
}

fn unique_sorted(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.collect();
    v.sort_unstable_by(f64::total_cmp);
    v.dedup();
    v
}

pub fn interpret(cfg: &RunConfig) -> Result<Outcome> {
    let run: FitRun = read_json(&cfg.out, RUN_FILE)?;
    let retention = RetentionPosterior::from_archive(read_json(&cfg.out, FORESTS_FILE)?)?;
    let table = load_table(cfg.require_input()?)?;
    let (_, features) = training_set(&table, &run);
    let inputs = features.tree_inputs();
    for (f, name) in TREE_FEATURES.iter().enumerate() {
        let grid = if *name == "month" {
            (1..=12).map(f64::from).collect()
        } else {
            unique_sorted(inputs.iter().map(|x| x[f]))
        };
        let curves = pdp_ice(&retention, &features, f, &grid)?;
        let mut w = create(&cfg.out, &format!("pdp_ice_{name}.csv"))?;
        write_pdp_ice_csv(&curves, &mut w)?;
        w.flush()?;
    }
    let report = variable_importance(&retention, &features, RngStream::new(cfg.seed, 3), &ImportanceConfig::default())?;
    let mut w = create(&cfg.out, IMPORTANCE_FILE)?;
    write_importance_csv(&report, &mut w)?;
    w.flush()?;
    for (name, freq) in TREE_FEATURES.iter().zip(&report.split_frequency) {
        println!("{name:<12} split share {freq:.3}");
    }
    Ok(Outcome::Done)
}

fn write_ppc(w: &mut impl Write, quantity: &str, report: &PpcReport) -> Result<()> {
    for p in &report.points {
        writeln!(w, "{quantity},{},{},{},{},{}", p.x, p.observed, p.lower, p.upper, p.inside)?;
    }
    Ok(())
}

pub fn diagnose(cfg: &RunConfig) -> Result<Outcome> {
    let fitted = load_fitted(&cfg.out)?;
    let trace: RetentionTrace = read_json(&cfg.out, TRACE_FILE)?;
    let (value, passed) = diagnostics(Ok(&fitted.revenue.draws), &trace, cfg.hdi_mass)?;
    let mut value = value;

    if let Some(path) = &cfg.input {
        let table = load_table(path)?;
        let (train, _) = training_set(&table, &fitted.run);
        let fc = forecast_config(cfg, &fitted.run);
        let sims = forecast(&fitted.retention, &fitted.revenue, &GridRow::from_table(&train), &fc, RngStream::new(cfg.seed, 4))?;
        let coverage = coverage_report(&sims, &train)?;
        let observed_retention: Vec<f64> = train.rows().iter().map(|r| r.retention()).collect();
        let observed_revenue: Vec<f64> = train.rows().iter().map(|r| r.revenue).collect();
        let ppc_retention = ecdf_ppc(&observed_retention, &replicates(&sims, Quantity::Retention), cfg.hdi_mass)?;
        let ppc_revenue = ecdf_ppc(&observed_revenue, &replicates(&sims, Quantity::Revenue), cfg.hdi_mass)?;
        let mut w = create(&cfg.out, PPC_FILE)?;
        writeln!(w, "quantity,x,observed_ecdf,band_low,band_high,inside")?;
        write_ppc(&mut w, "retention", &ppc_retention)?;
        write_ppc(&mut w, "revenue", &ppc_revenue)?;
        w.flush()?;
        value["in_sample"] = json!({
            "coverage": coverage,
            "ppc_inside_fraction": { "retention": ppc_retention.inside_fraction, "revenue": ppc_revenue.inside_fraction },
        });
        println!(
            "in-sample coverage: retention {:.3}, revenue {:.3}; ECDF inside band: retention {:.3}, revenue {:.3}",
            coverage.retention, coverage.revenue, ppc_retention.inside_fraction, ppc_revenue.inside_fraction
        );
    }
    write_json(&cfg.out, DIAGNOSTICS_FILE, &value)?;
    print_diagnostics(&value);
    Ok(if passed {
        Outcome::Done
    } else {
        Outcome::GateFailed(format!("revenue R-hat reached {RHAT_GATE}"))
    })
}
