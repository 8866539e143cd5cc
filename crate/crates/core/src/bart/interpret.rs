//! Partial dependence, ICE curves and variable importance for a fitted retention ensemble.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{BartError, Forest, RetentionPosterior};
use crate::data::{FeatureMatrix, TREE_FEATURES};
use crate::inference::RngStream;

fn mean_p(forests: &[&Forest], x: &[f64; 3]) -> f64 {
    forests.iter().map(|f| f.predict_p(x)).sum::<f64>() / forests.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcePdpCurves {
    pub feature: usize,
    pub grid: Vec<f64>,
    /// `ice[i][g]`: posterior-mean retention of observation `i` with the feature set to `grid[g]`.
    pub ice: Vec<Vec<f64>>,
    pub pdp: Vec<f64>,
}

pub fn pdp_ice(
    posterior: &RetentionPosterior,
    features: &FeatureMatrix,
    target_feature: usize,
    grid: &[f64],
) -> Result<IcePdpCurves, BartError> {
    if grid.is_empty() {
        return Err(BartError::EmptyGrid);
    }
    if target_feature >= TREE_FEATURES.len() {
        return Err(BartError::InvalidFeature(target_feature));
    }
    if posterior.forests.is_empty() {
        return Err(BartError::NoSnapshots);
    }
    let forests: Vec<&Forest> = posterior.forests.iter().collect();
    let ice: Vec<Vec<f64>> = features
        .tree_inputs()
        .par_iter()
        .map(|row| {
            grid.iter()
                .map(|&g| {
                    let mut x = *row;
                    x[target_feature] = g;
                    mean_p(&forests, &x)
                })
                .collect()
        })
        .collect();
    let pdp = (0..grid.len())
        .map(|g| ice.iter().map(|c| c[g]).sum::<f64>() / ice.len() as f64)
        .collect();
    Ok(IcePdpCurves {
        feature: target_feature,
        grid: grid.to_vec(),
        ice,
        pdp,
    })
}

/// Tidy CSV `feature,grid_value,curve_id,value`; the PDP has curve id `pdp`, ICE curves use the
/// observation index.
pub fn write_pdp_ice_csv<W: Write>(curves: &IcePdpCurves, writer: W) -> Result<(), BartError> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(["feature", "grid_value", "curve_id", "value"])?;
    let name = TREE_FEATURES[curves.feature];
    for (g, grid_value) in curves.grid.iter().enumerate() {
        csv.write_record([name, &grid_value.to_string(), "pdp", &curves.pdp[g].to_string()])?;
    }
    for (i, curve) in curves.ice.iter().enumerate() {
        for (g, grid_value) in curves.grid.iter().enumerate() {
            csv.write_record([name, &grid_value.to_string(), &i.to_string(), &curve[g].to_string()])?;
        }
    }
    csv.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImportanceConfig {
    /// Observed rows averaged over when marginalizing excluded features.
    pub marginal_samples: usize,
    /// Forest snapshots used for predictions, evenly spaced through the posterior.
    pub max_forests: usize,
}

impl Default for ImportanceConfig {
    fn default() -> Self {
        Self {
            marginal_samples: 20,
            max_forests: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InclusionStep {
    pub features: Vec<String>,
    /// R² of the restricted predictions against the full posterior-mean predictions.
    pub r_squared: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub split_counts: Vec<usize>,
    /// Share of all splits that use each feature, in [`TREE_FEATURES`] order.
    pub split_frequency: Vec<f64>,
    pub inclusion: Vec<InclusionStep>,
}

impl ImportanceReport {
    pub fn frequency_of(&self, name: &str) -> Option<f64> {
        TREE_FEATURES.iter().position(|f| *f == name).map(|i| self.split_frequency[i])
    }
}

fn r_squared(full: &[f64], restricted: &[f64]) -> f64 {
    let mean = full.iter().sum::<f64>() / full.len() as f64;
    let ss_tot: f64 = full.iter().map(|v| (v - mean).powi(2)).sum();
    let ss_res: f64 = full.iter().zip(restricted).map(|(a, b)| (a - b).powi(2)).sum();
    if ss_tot == 0.0 {
        if ss_res == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        1.0 - ss_res / ss_tot
    }
}

/// Split-count frequencies, then a sequential-inclusion curve: features enter in order of split
/// frequency and each prefix is scored by how much of the full prediction it reproduces once the
/// remaining features are averaged over a sample of observed values.
pub fn variable_importance(
    posterior: &RetentionPosterior,
    features: &FeatureMatrix,
    rng: RngStream,
    config: &ImportanceConfig,
) -> Result<ImportanceReport, BartError> {
    if posterior.forests.is_empty() {
        return Err(BartError::NoSnapshots);
    }
    if features.is_empty() {
        return Err(BartError::DegenerateData("no rows".into()));
    }
    let n_feat = TREE_FEATURES.len();
    let mut split_counts = vec![0; n_feat];
    for f in &posterior.forests {
        f.count_splits(&mut split_counts);
    }
    let total: usize = split_counts.iter().sum();
    let split_frequency: Vec<f64> = split_counts
        .iter()
        .map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
        .collect();

    let n_forests = posterior.forests.len().min(config.max_forests.max(1));
    let forests: Vec<&Forest> = (0..n_forests)
        .map(|i| &posterior.forests[i * posterior.forests.len() / n_forests])
        .collect();
    let x = features.tree_inputs();
    let full: Vec<f64> = x.par_iter().map(|row| mean_p(&forests, row)).collect();

    let mut order: Vec<usize> = (0..n_feat).collect();
    order.sort_by(|&a, &b| split_counts[b].cmp(&split_counts[a]).then(a.cmp(&b)));
    let mut draw = rng.rng();
    let donors: Vec<usize> = (0..config.marginal_samples.max(1)).map(|_| draw.random_range(0..x.len())).collect();

    let mut inclusion = Vec::with_capacity(n_feat);
    for k in 1..=n_feat {
        let kept = &order[..k];
        let restricted: Vec<f64> = if k == n_feat {
            full.clone()
        } else {
            x.par_iter()
                .map(|row| {
                    donors
                        .iter()
                        .map(|&d| {
                            let mut z = x[d];
                            for &f in kept {
                                z[f] = row[f];
                            }
                            mean_p(&forests, &z)
                        })
                        .sum::<f64>()
                        / donors.len() as f64
                })
                .collect()
        };
        inclusion.push(InclusionStep {
            features: kept.iter().map(|&f| TREE_FEATURES[f].to_string()).collect(),
            r_squared: r_squared(&full, &restricted),
        });
    }
    Ok(ImportanceReport {
        split_counts,
        split_frequency,
        inclusion,
    })
}

/// Tidy CSV `measure,feature,value`. Inclusion steps name their feature set joined by `+`.
pub fn write_importance_csv<W: Write>(report: &ImportanceReport, writer: W) -> Result<(), BartError> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(["measure", "feature", "value"])?;
    for (name, freq) in TREE_FEATURES.iter().zip(&report.split_frequency) {
        csv.write_record(["split_frequency", name, &freq.to_string()])?;
    }
    for step in &report.inclusion {
        csv.write_record(["r_squared", &step.features.join("+"), &step.r_squared.to_string()])?;
    }
    csv.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::{ForestArchive, TreeNode};
    use super::*;
    use crate::bart::BartConfig;
    use crate::data::ReferencePolicy;
    use crate::month::YearMonth;

    fn posterior(trees: Vec<TreeNode>) -> RetentionPosterior {
        RetentionPosterior::from_archive(ForestArchive {
            config: BartConfig::default(),
            chains: 1,
            snapshots_per_chain: 1,
            forests: vec![Forest { trees }],
        })
        .unwrap()
    }

    fn month_stump() -> TreeNode {
        TreeNode::Split {
            feature: 2,
            threshold: 9.5,
            left: Box::new(TreeNode::leaf(-1.0)),
            right: Box::new(TreeNode::leaf(0.5)),
        }
    }

    fn features() -> FeatureMatrix {
        let start: YearMonth = "2020-01".parse().unwrap();
        let keys = (0..6).flat_map(|c| (1..8).map(move |k| (start.add_months(c), start.add_months(c + k))));
        FeatureMatrix::from_keys(keys, "2021-06".parse().unwrap(), ReferencePolicy::Frozen)
    }

    #[test]
    fn ignored_feature_gives_flat_ice() {
        let post = posterior(vec![month_stump()]);
        let curves = pdp_ice(&post, &features(), 0, &[1.0, 5.0, 20.0]).unwrap();
        for c in &curves.ice {
            assert!(c.iter().all(|v| *v == c[0]));
        }
    }

    #[test]
    fn pdp_is_mean_of_ice() {
        let post = posterior(vec![month_stump(), TreeNode::leaf(0.1)]);
        let grid: Vec<f64> = (1..=12).map(f64::from).collect();
        let curves = pdp_ice(&post, &features(), 2, &grid).unwrap();
        for (g, p) in curves.pdp.iter().enumerate() {
            let mean = curves.ice.iter().map(|c| c[g]).sum::<f64>() / curves.ice.len() as f64;
            assert_eq!(*p, mean);
        }
        assert!(curves.pdp[10] > curves.pdp[5]);
        assert!(matches!(pdp_ice(&post, &features(), 2, &[]), Err(BartError::EmptyGrid)));
        assert!(matches!(pdp_ice(&post, &features(), 3, &[1.0]), Err(BartError::InvalidFeature(3))));
    }

    #[test]
    fn importance_of_single_used_feature() {
        let post = posterior(vec![month_stump(), month_stump()]);
        let report = variable_importance(&post, &features(), RngStream::new(1, 0), &ImportanceConfig::default()).unwrap();
        assert_eq!(report.split_counts, vec![0, 0, 2]);
        assert_eq!(report.frequency_of("month"), Some(1.0));
        assert_eq!(report.inclusion[0].features, vec!["month"]);
        assert!((report.inclusion[0].r_squared - 1.0).abs() < 1e-12);
        assert_eq!(report.inclusion[2].r_squared, 1.0);
        let mut out = Vec::new();
        write_importance_csv(&report, &mut out).unwrap();
        assert!(String::from_utf8(out).unwrap().contains("r_squared,month+cohort_age+age,1"));
    }

    #[test]
    fn tidy_csv_layout() {
        let post = posterior(vec![month_stump()]);
        let curves = pdp_ice(&post, &features(), 2, &[6.0, 11.0]).unwrap();
        let mut out = Vec::new();
        write_pdp_ice_csv(&curves, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "feature,grid_value,curve_id,value");
        assert!(lines[1].starts_with("month,6,pdp,"));
        assert_eq!(lines.len(), 1 + 2 + 2 * curves.ice.len());
    }
}
