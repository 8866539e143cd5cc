//! Cohort observations: ingestion, validation, featurization and holdout splits.
//!
//! A [`CohortTable`] holds one row per (cohort, period) cell in long format. Rows on the
//! diagonal (`period == cohort`) are kept in the table but carry no information for either
//! likelihood; [`FeatureRow::is_diagonal`] flags them so the model components can drop them.

use std::collections::HashSet;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::month::YearMonth;

pub const DEFAULT_MAX_ROWS: usize = 10_000_000;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("missing required column {0:?}")]
    MissingColumn(String),
    #[error("row {row}: unparseable month {value:?} in column {column:?}")]
    UnparseableMonth {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}: invalid number {value:?} in column {column:?}")]
    InvalidNumber {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}: negative count in column {column:?}")]
    NegativeCount { row: usize, column: String },
    #[error("row {row}: n_active ({n_active}) exceeds n_total ({n_total})")]
    ActiveExceedsTotal {
        row: usize,
        n_active: u64,
        n_total: u64,
    },
    #[error("row {row}: period {period} precedes cohort {cohort}")]
    PeriodBeforeCohort {
        row: usize,
        cohort: YearMonth,
        period: YearMonth,
    },
    #[error("row {row}: revenue {revenue} must be finite, nonnegative and zero when no users are active")]
    InvalidRevenue { row: usize, revenue: f64 },
    #[error("row {row}: duplicate cell cohort={cohort} period={period}")]
    DuplicateCell {
        row: usize,
        cohort: YearMonth,
        period: YearMonth,
    },
    #[error("input exceeds the row limit of {limit}")]
    TooManyRows { limit: usize },
    #[error("feature {0} is constant and cannot be standardized")]
    DegenerateFeature(&'static str),
    #[error("holdout split at {cutoff} leaves the {side} side empty")]
    EmptySplit { cutoff: YearMonth, side: &'static str },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One cohort-period cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CohortRow {
    pub cohort: YearMonth,
    pub period: YearMonth,
    pub n_total: u64,
    pub n_active: u64,
    pub revenue: f64,
}

impl CohortRow {
    pub fn cohort_age(&self) -> i64 {
        self.period.months_since(self.cohort)
    }

    pub fn is_diagonal(&self) -> bool {
        self.period == self.cohort
    }

    pub fn retention(&self) -> f64 {
        if self.n_total == 0 {
            0.0
        } else {
            self.n_active as f64 / self.n_total as f64
        }
    }

    /// Checks the row invariants. `row` is the 1-based data row used in error messages.
    fn validate(&self, row: usize) -> Result<(), DataError> {
        if self.period < self.cohort {
            return Err(DataError::PeriodBeforeCohort {
                row,
                cohort: self.cohort,
                period: self.period,
            });
        }
        if self.n_active > self.n_total {
            return Err(DataError::ActiveExceedsTotal {
                row,
                n_active: self.n_active,
                n_total: self.n_total,
            });
        }
        let revenue_ok = self.revenue.is_finite()
            && self.revenue >= 0.0
            && (self.n_active > 0 || self.revenue == 0.0);
        if !revenue_ok {
            return Err(DataError::InvalidRevenue {
                row,
                revenue: self.revenue,
            });
        }
        Ok(())
    }
}

/// Validated cohort observations sorted by (cohort, period) with unique keys.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CohortTable {
    rows: Vec<CohortRow>,
}

impl CohortTable {
    pub fn new(rows: Vec<CohortRow>) -> Result<Self, DataError> {
        let mut seen = HashSet::with_capacity(rows.len());
        for (i, r) in rows.iter().enumerate() {
            r.validate(i + 1)?;
            if !seen.insert((r.cohort, r.period)) {
                return Err(DataError::DuplicateCell {
                    row: i + 1,
                    cohort: r.cohort,
                    period: r.period,
                });
            }
        }
        let mut rows = rows;
        rows.sort_by_key(|r| (r.cohort, r.period));
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[CohortRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn min_period(&self) -> Option<YearMonth> {
        self.rows.iter().map(|r| r.period).min()
    }

    pub fn max_period(&self) -> Option<YearMonth> {
        self.rows.iter().map(|r| r.period).max()
    }

    pub fn get(&self, cohort: YearMonth, period: YearMonth) -> Option<&CohortRow> {
        self.rows
            .binary_search_by_key(&(cohort, period), |r| (r.cohort, r.period))
            .ok()
            .map(|i| &self.rows[i])
    }

    /// Rows with `cohort_age >= 1`, the ones entering the likelihoods.
    pub fn non_diagonal(&self) -> CohortTable {
        CohortTable {
            rows: self.rows.iter().filter(|r| !r.is_diagonal()).copied().collect(),
        }
    }

    pub fn filter(&self, keep: impl Fn(&CohortRow) -> bool) -> CohortTable {
        CohortTable {
            rows: self.rows.iter().filter(|r| keep(r)).copied().collect(),
        }
    }
}

/// Column names used when reading or writing cohort CSV files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub cohort: String,
    pub period: String,
    pub n_total: String,
    pub n_active: String,
    pub revenue: String,
}

impl Default for ColumnSchema {
    fn default() -> Self {
        Self {
            cohort: "cohort".into(),
            period: "period".into(),
            n_total: "n_users".into(),
            n_active: "n_active_users".into(),
            revenue: "revenue".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub schema: ColumnSchema,
    pub max_rows: usize,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            schema: ColumnSchema::default(),
            max_rows: DEFAULT_MAX_ROWS,
        }
    }
}

pub fn load_cohort_table(path: impl AsRef<Path>, options: &LoadOptions) -> Result<CohortTable, DataError> {
    read_cohort_table(File::open(path)?, options)
}

pub fn read_cohort_table<R: Read>(reader: R, options: &LoadOptions) -> Result<CohortTable, DataError> {
    let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = csv.headers()?.clone();
    let schema = &options.schema;
    let column = |name: &String| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn(name.clone()))
    };
    let idx = [
        column(&schema.cohort)?,
        column(&schema.period)?,
        column(&schema.n_total)?,
        column(&schema.n_active)?,
        column(&schema.revenue)?,
    ];

    let mut rows = Vec::new();
    for (i, record) in csv.records().enumerate() {
        let row = i + 1;
        if row > options.max_rows {
            return Err(DataError::TooManyRows {
                limit: options.max_rows,
            });
        }
        let record = record?;
        let field = |k: usize| record.get(idx[k]).unwrap_or("");
        let month = |k: usize, name: &String| {
            field(k).parse::<YearMonth>().map_err(|_| DataError::UnparseableMonth {
                row,
                column: name.clone(),
                value: field(k).to_string(),
            })
        };
        let count = |k: usize, name: &String| -> Result<u64, DataError> {
            let raw = field(k);
            let value: i64 = raw.parse().map_err(|_| DataError::InvalidNumber {
                row,
                column: name.clone(),
                value: raw.to_string(),
            })?;
            u64::try_from(value).map_err(|_| DataError::NegativeCount {
                row,
                column: name.clone(),
            })
        };
        let revenue_raw = field(4);
        let revenue: f64 = revenue_raw.parse().map_err(|_| DataError::InvalidNumber {
            row,
            column: schema.revenue.clone(),
            value: revenue_raw.to_string(),
        })?;
        let r = CohortRow {
            cohort: month(0, &schema.cohort)?,
            period: month(1, &schema.period)?,
            n_total: count(2, &schema.n_total)?,
            n_active: count(3, &schema.n_active)?,
            revenue,
        };
        rows.push(r);
    }
    CohortTable::new(rows)
}

/// Writes the table with the given schema's column names, in (cohort, period) order.
pub fn write_cohort_table<W: Write>(table: &CohortTable, writer: W, schema: &ColumnSchema) -> Result<(), DataError> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record([
        &schema.cohort,
        &schema.period,
        &schema.n_total,
        &schema.n_active,
        &schema.revenue,
    ])?;
    for r in table.rows() {
        csv.write_record([
            r.cohort.to_string(),
            r.period.to_string(),
            r.n_total.to_string(),
            r.n_active.to_string(),
            r.revenue.to_string(),
        ])?;
    }
    csv.flush()?;
    Ok(())
}

/// How the `age` feature is computed for rows scored after the reference month.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReferencePolicy {
    /// `age = reference - cohort` for every row.
    #[default]
    Frozen,
    /// `age = max(reference, period) - cohort`: the reference follows the scored period.
    Advancing,
}

impl std::str::FromStr for ReferencePolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "frozen" => Ok(Self::Frozen),
            "advancing" => Ok(Self::Advancing),
            other => Err(format!("unknown reference policy {other:?} (expected frozen or advancing)")),
        }
    }
}

/// Model features of a single cohort-period cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub cohort: YearMonth,
    pub period: YearMonth,
    pub cohort_age: i64,
    pub age: i64,
    pub month: u8,
    pub z_cohort_age: f64,
    pub z_age: f64,
    pub z_interaction: f64,
}

/// Feature names as used by the retention trees, in column order.
pub const TREE_FEATURES: [&str; 3] = ["cohort_age", "age", "month"];

impl FeatureRow {
    pub fn new(cohort: YearMonth, period: YearMonth, reference: YearMonth, policy: ReferencePolicy) -> Self {
        let reference = match policy {
            ReferencePolicy::Frozen => reference,
            ReferencePolicy::Advancing => reference.max(period),
        };
        Self {
            cohort,
            period,
            cohort_age: period.months_since(cohort),
            age: reference.months_since(cohort),
            month: period.month(),
            z_cohort_age: 0.0,
            z_age: 0.0,
            z_interaction: 0.0,
        }
    }

    pub fn is_diagonal(&self) -> bool {
        self.cohort_age == 0
    }

    /// Raw tree inputs in [`TREE_FEATURES`] order.
    pub fn tree_inputs(&self) -> [f64; 3] {
        [self.cohort_age as f64, self.age as f64, self.month as f64]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub reference: YearMonth,
    pub policy: ReferencePolicy,
    pub rows: Vec<FeatureRow>,
}

impl FeatureMatrix {
    pub fn from_keys(
        keys: impl IntoIterator<Item = (YearMonth, YearMonth)>,
        reference: YearMonth,
        policy: ReferencePolicy,
    ) -> Self {
        Self {
            reference,
            policy,
            rows: keys
                .into_iter()
                .map(|(c, p)| FeatureRow::new(c, p, reference, policy))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn tree_inputs(&self) -> Vec<[f64; 3]> {
        self.rows.iter().map(FeatureRow::tree_inputs).collect()
    }
}

/// One feature row per table row, in table order, with `age` measured against a frozen reference.
pub fn build_features(table: &CohortTable, reference: YearMonth) -> FeatureMatrix {
    build_features_with_policy(table, reference, ReferencePolicy::Frozen)
}

pub fn build_features_with_policy(table: &CohortTable, reference: YearMonth, policy: ReferencePolicy) -> FeatureMatrix {
    FeatureMatrix::from_keys(table.rows().iter().map(|r| (r.cohort, r.period)), reference, policy)
}

/// Centering and population-sd scaling for the revenue model's inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean_cohort_age: f64,
    pub sd_cohort_age: f64,
    pub mean_age: f64,
    pub sd_age: f64,
}

fn mean_and_population_sd(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn fit_standardizer(features: &FeatureMatrix) -> Result<Standardizer, DataError> {
    let distinct = |f: fn(&FeatureRow) -> i64| {
        let mut it = features.rows.iter().map(f);
        match it.next() {
            Some(first) => it.any(|v| v != first),
            None => false,
        }
    };
    if !distinct(|r| r.cohort_age) {
        return Err(DataError::DegenerateFeature("cohort_age"));
    }
    if !distinct(|r| r.age) {
        return Err(DataError::DegenerateFeature("age"));
    }
    let (mean_cohort_age, sd_cohort_age) = mean_and_population_sd(features.rows.iter().map(|r| r.cohort_age as f64));
    let (mean_age, sd_age) = mean_and_population_sd(features.rows.iter().map(|r| r.age as f64));
    Ok(Standardizer {
        mean_cohort_age,
        sd_cohort_age,
        mean_age,
        sd_age,
    })
}

impl Standardizer {
    /// `(z_cohort_age, z_age, z_cohort_age * z_age)`.
    pub fn transform(&self, cohort_age: f64, age: f64) -> (f64, f64, f64) {
        let zc = (cohort_age - self.mean_cohort_age) / self.sd_cohort_age;
        let za = (age - self.mean_age) / self.sd_age;
        (zc, za, zc * za)
    }

    pub fn apply_row(&self, row: &FeatureRow) -> FeatureRow {
        let (zc, za, zi) = self.transform(row.cohort_age as f64, row.age as f64);
        FeatureRow {
            z_cohort_age: zc,
            z_age: za,
            z_interaction: zi,
            ..*row
        }
    }

    pub fn apply(&self, features: &FeatureMatrix) -> FeatureMatrix {
        FeatureMatrix {
            rows: features.rows.iter().map(|r| self.apply_row(r)).collect(),
            ..features.clone()
        }
    }
}

/// Splits at `cutoff`: rows with `period <= cutoff` train, the rest test.
pub fn split_holdout(table: &CohortTable, cutoff: YearMonth) -> Result<(CohortTable, CohortTable), DataError> {
    let (train, test): (Vec<_>, Vec<_>) = table.rows().iter().partition(|r| r.period <= cutoff);
    if train.is_empty() {
        return Err(DataError::EmptySplit { cutoff, side: "train" });
    }
    if test.is_empty() {
        return Err(DataError::EmptySplit { cutoff, side: "test" });
    }
    Ok((CohortTable { rows: train }, CohortTable { rows: test }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn ym(s: &str) -> YearMonth {
        s.parse().unwrap()
    }

    fn row(c: &str, p: &str, n: u64, a: u64, rev: f64) -> CohortRow {
        CohortRow {
            cohort: ym(c),
            period: ym(p),
            n_total: n,
            n_active: a,
            revenue: rev,
        }
    }

    const HEADER: &str = "cohort,period,n_users,n_active_users,revenue\n";

    fn parse(body: &str) -> Result<CohortTable, DataError> {
        read_cohort_table(format!("{HEADER}{body}").as_bytes(), &LoadOptions::default())
    }

    #[test]
    fn loads_valid_rows_sorted() {
        let t = parse("2022-09,2022-10,10,4,80.5\n2022-09,2022-09,10,10,200\n2022-08,2022-09,5,1,12\n").unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.rows()[0].cohort, ym("2022-08"));
        assert_eq!(t.rows()[1].period, ym("2022-09"));
        assert_eq!(t.rows()[2].revenue, 80.5);
    }

    #[test]
    fn active_exceeds_total() {
        let err = parse("2022-09,2022-10,3,5,1.0\n").unwrap_err();
        assert!(matches!(err, DataError::ActiveExceedsTotal { row: 1, .. }), "{err}");
    }

    #[test]
    fn period_before_cohort() {
        let err = parse("2022-09,2022-08,3,1,1.0\n").unwrap_err();
        assert!(matches!(err, DataError::PeriodBeforeCohort { row: 1, .. }));
    }

    #[test]
    fn error_paths_name_the_row() {
        assert!(matches!(
            parse("2022-09,2022-10,3,1,1\n2022-09,2022-10,3,1,1\n").unwrap_err(),
            DataError::DuplicateCell { row: 2, .. }
        ));
        assert!(matches!(
            parse("2022-09,2022-10,3,1,1\n2022-9,2022-10,3,1,1\n").unwrap_err(),
            DataError::UnparseableMonth { row: 2, .. }
        ));
        assert!(matches!(
            parse("2022-09,2022-10,-3,1,1\n").unwrap_err(),
            DataError::NegativeCount { row: 1, .. }
        ));
        assert!(matches!(
            parse("2022-09,2022-10,3,0,1\n").unwrap_err(),
            DataError::InvalidRevenue { row: 1, .. }
        ));
        let missing = read_cohort_table("cohort,period,n_users,revenue\n".as_bytes(), &LoadOptions::default());
        assert!(matches!(missing.unwrap_err(), DataError::MissingColumn(c) if c == "n_active_users"));
    }

    #[test]
    fn row_limit_enforced() {
        let opts = LoadOptions {
            max_rows: 1,
            ..Default::default()
        };
        let body = format!("{HEADER}2022-09,2022-10,3,1,1\n2022-09,2022-11,3,1,1\n");
        assert!(matches!(
            read_cohort_table(body.as_bytes(), &opts).unwrap_err(),
            DataError::TooManyRows { limit: 1 }
        ));
    }

    #[test]
    fn custom_schema() {
        let opts = LoadOptions {
            schema: ColumnSchema {
                cohort: "c".into(),
                period: "p".into(),
                n_total: "n".into(),
                n_active: "a".into(),
                revenue: "r".into(),
            },
            ..Default::default()
        };
        let t = read_cohort_table("r,a,n,p,c\n5,1,2,2022-02,2022-01\n".as_bytes(), &opts).unwrap();
        assert_eq!(t.rows()[0], row("2022-01", "2022-02", 2, 1, 5.0));
    }

    #[test]
    fn features_follow_the_age_example() {
        let reference = ym("2022-11");
        let a = FeatureRow::new(ym("2022-09"), ym("2022-10"), reference, ReferencePolicy::Frozen);
        assert_eq!((a.cohort_age, a.age, a.month), (1, 2, 10));
        let b = FeatureRow::new(ym("2022-09"), ym("2022-11"), reference, ReferencePolicy::Frozen);
        assert_eq!((b.cohort_age, b.age, b.month), (2, 2, 11));
        let d = FeatureRow::new(reference, reference, reference, ReferencePolicy::Frozen);
        assert_eq!((d.cohort_age, d.age), (0, 0));
        assert!(d.is_diagonal());
    }

    #[test]
    fn advancing_reference_follows_future_periods() {
        let reference = ym("2022-11");
        let frozen = FeatureRow::new(ym("2022-09"), ym("2023-02"), reference, ReferencePolicy::Frozen);
        let adv = FeatureRow::new(ym("2022-09"), ym("2023-02"), reference, ReferencePolicy::Advancing);
        assert_eq!(frozen.age, 2);
        assert_eq!(adv.age, 5);
        let past = FeatureRow::new(ym("2022-09"), ym("2022-10"), reference, ReferencePolicy::Advancing);
        assert_eq!(past.age, 2);
    }

    #[test]
    fn standardizer_centers_and_scales() {
        let t = CohortTable::new(vec![
            row("2022-01", "2022-02", 10, 1, 1.0),
            row("2022-01", "2022-03", 10, 1, 1.0),
            row("2022-01", "2022-04", 10, 1, 1.0),
            row("2022-02", "2022-04", 10, 1, 1.0),
        ])
        .unwrap();
        let f = build_features(&t, ym("2022-04"));
        let three = FeatureMatrix {
            rows: f.rows[..3].to_vec(),
            ..f.clone()
        };
        // cohort_age [1,2,3] -> [-1.2247, 0, 1.2247]; age is constant on these rows.
        assert!(matches!(fit_standardizer(&three), Err(DataError::DegenerateFeature("age"))));

        let s = fit_standardizer(&f).unwrap();
        let z = s.apply(&f);
        let zc: Vec<f64> = z.rows.iter().map(|r| r.z_cohort_age).collect();
        let mean = zc.iter().sum::<f64>() / 4.0;
        let sd = (zc.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0).sqrt();
        assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(sd, 1.0, epsilon = 1e-10);
        for r in &z.rows {
            assert_abs_diff_eq!(r.z_interaction, r.z_cohort_age * r.z_age, epsilon = 1e-15);
        }
        let (zc_mean, za_mean, zi) = s.transform(s.mean_cohort_age, s.mean_age);
        assert_eq!((zc_mean, za_mean, zi), (0.0, 0.0, 0.0));
    }

    #[test]
    fn standardizer_three_values() {
        let rows: Vec<FeatureRow> = (1..=3)
            .map(|k| FeatureRow::new(ym("2022-01"), ym("2022-01").add_months(k), ym("2022-01").add_months(k + 1), ReferencePolicy::Frozen))
            .collect();
        let f = FeatureMatrix {
            reference: ym("2022-05"),
            policy: ReferencePolicy::Frozen,
            rows,
        };
        let s = fit_standardizer(&f).unwrap();
        let z: Vec<f64> = s.apply(&f).rows.iter().map(|r| r.z_cohort_age).collect();
        for (got, want) in z.iter().zip([-1.2247, 0.0, 1.2247]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-4);
        }
    }

    #[test]
    fn holdout_boundaries() {
        let mut rows = Vec::new();
        for p in ym("2022-09").range_inclusive(ym("2023-02")) {
            rows.push(row("2022-09", &p.to_string(), 10, 5, 10.0));
        }
        let t = CohortTable::new(rows).unwrap();
        let (train, test) = split_holdout(&t, ym("2022-11")).unwrap();
        assert!(train.rows().iter().all(|r| r.period <= ym("2022-11")));
        assert!(test.rows().iter().all(|r| r.period > ym("2022-11")));
        assert_eq!(train.len() + test.len(), t.len());
        assert!(matches!(
            split_holdout(&t, ym("2023-02")),
            Err(DataError::EmptySplit { side: "test", .. })
        ));
        let (one, _) = split_holdout(&t, ym("2022-09")).unwrap();
        assert_eq!(one.len(), 1);
    }

    fn arb_table() -> impl Strategy<Value = CohortTable> {
        prop::collection::vec((0i64..24, 0i64..24, 0u64..1000, 0.0f64..1.0, 0.0f64..50.0), 1..40).prop_map(|cells| {
            let base = ym("2020-01");
            let mut seen = HashSet::new();
            let rows = cells
                .into_iter()
                .filter_map(|(c, lag, n, frac, arpu)| {
                    let cohort = base.add_months(c);
                    let period = cohort.add_months(lag);
                    if !seen.insert((cohort, period)) {
                        return None;
                    }
                    let a = (n as f64 * frac).floor() as u64;
                    let rev = if a == 0 { 0.0 } else { (a as f64 * arpu * 100.0).round() / 100.0 };
                    Some(CohortRow {
                        cohort,
                        period,
                        n_total: n,
                        n_active: a,
                        revenue: rev,
                    })
                })
                .collect();
            CohortTable::new(rows).unwrap()
        })
    }

    proptest! {
        #[test]
        fn csv_round_trip(t in arb_table()) {
            let mut buf = Vec::new();
            write_cohort_table(&t, &mut buf, &ColumnSchema::default()).unwrap();
            let back = read_cohort_table(buf.as_slice(), &LoadOptions::default()).unwrap();
            prop_assert_eq!(back, t);
        }

        #[test]
        fn split_partitions(t in arb_table(), offset in 0i64..30) {
            let cutoff = ym("2020-01").add_months(offset);
            if let Ok((train, test)) = split_holdout(&t, cutoff) {
                prop_assert_eq!(train.len() + test.len(), t.len());
            }
        }

        #[test]
        fn features_are_pure_and_retention_bounded(t in arb_table()) {
            let reference = t.max_period().unwrap();
            let a = build_features(&t, reference);
            prop_assert_eq!(&a, &build_features(&t, reference));
            for (f, r) in a.rows.iter().zip(t.rows()) {
                prop_assert!(f.age >= f.cohort_age);
                prop_assert_eq!(f.month, r.period.month());
                prop_assert!((0.0..=1.0).contains(&r.retention()));
            }
        }
    }
}
