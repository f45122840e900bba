use std::path::{Path, PathBuf};

use serde::Serialize;

use super::run::run_procedures;
use super::scenario::Procedure;
use crate::bootstrap::{BootstrapConfig, BootstrapCurve};
use crate::error::{Error, Result};
use crate::estimation::{EmConfig, FitResult};
use crate::evaluation::{sample_fcr, FcrReport};
use crate::io::{read_numeric_csv, read_string_column};
use crate::model::{posterior_matrix, DataMatrix, Family, DEFAULT_DOF};
use crate::selection::SelectiveClustering;

/// Reads the numeric `columns` and the `label_column` of a CSV. Labels are
/// numbered by first appearance; the class names are returned in that order.
pub fn load_labelled(
    path: &Path,
    columns: &[String],
    label_column: &str,
) -> Result<(DataMatrix, Vec<usize>, Vec<String>)> {
    let (data, _) = read_numeric_csv(path, Some(columns))?;
    let raw = read_string_column(path, label_column)?;
    let (labels, classes) = encode_labels(&raw);
    Ok((data, labels, classes))
}

pub fn encode_labels(raw: &[String]) -> (Vec<usize>, Vec<String>) {
    let mut classes: Vec<String> = Vec::new();
    let labels = raw
        .iter()
        .map(|s| match classes.iter().position(|c| c == s) {
            Some(k) => k,
            None => {
                classes.push(s.clone());
                classes.len() - 1
            }
        })
        .collect();
    (labels, classes)
}

/// Centers and scales each column to unit sample standard deviation; constant
/// columns are only centered.
pub fn standardize(data: &DataMatrix) -> DataMatrix {
    let (n, d) = (data.n(), data.d());
    let mean = data.mean();
    let mut sd = vec![0.0; d];
    for row in data.rows() {
        for j in 0..d {
            sd[j] += (row[j] - mean[j]).powi(2);
        }
    }
    for s in &mut sd {
        *s = if n > 1 { (*s / (n - 1) as f64).sqrt() } else { 0.0 };
        if *s == 0.0 {
            *s = 1.0;
        }
    }
    let values = data.rows().flat_map(|row| (0..d).map(|j| (row[j] - mean[j]) / sd[j]).collect::<Vec<_>>()).collect();
    DataMatrix::new(n, d, values).and_then(|m| m.with_columns(data.columns().to_vec())).expect("same shape")
}

#[derive(Clone, Debug)]
pub struct RealDataConfig {
    pub path: PathBuf,
    pub columns: Vec<String>,
    pub q: usize,
    pub alpha: f64,
    pub procedure: Procedure,
    /// Fitted with Student-t components; a Gaussian family here is replaced by
    /// Student-t with 4 degrees of freedom.
    pub em: EmConfig,
    pub boot: BootstrapConfig,
    pub ground_truth_column: Option<String>,
    pub standardize: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct RealDataOutcome {
    pub clustering: SelectiveClustering,
    pub t_values: Vec<f64>,
    #[serde(skip)]
    pub fit: FitResult,
    pub curve: Option<BootstrapCurve>,
    /// Scores against the ground truth column, when supplied.
    pub report: Option<FcrReport>,
    /// Score of the MAP labels without abstention.
    pub map_report: Option<FcrReport>,
    pub classes: Vec<String>,
}

impl RealDataOutcome {
    pub fn write_labels_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.clustering.write_csv(&self.t_values, file)
    }
}

/// Student-t mixture workflow on a user-supplied table.
pub fn run_real_data(cfg: &RealDataConfig) -> Result<RealDataOutcome> {
    if cfg.procedure == Procedure::Oracle {
        return Err(Error::InvalidConfig("the oracle procedure needs a known truth".into()));
    }
    let (data, _) = read_numeric_csv(&cfg.path, Some(&cfg.columns))?;
    if data.n() < cfg.q {
        return Err(Error::TooFewRows { needed: cfg.q, got: data.n() });
    }
    let data = if cfg.standardize { standardize(&data) } else { data };
    let dof = cfg.em.family.dof().unwrap_or(DEFAULT_DOF);
    let em = EmConfig { family: Family::StudentT { dof }, ..cfg.em.clone() };
    let (fit, mut runs) = run_procedures(&data, cfg.q, cfg.alpha, &[cfg.procedure], None, &em, &cfg.boot)?;
    let fit = fit.expect("non-oracle procedures fit the model");
    let run = runs.remove(0);
    let t_values = posterior_matrix(&fit.params, &data)?.t_values().to_vec();

    // Ground truth is read only after the clustering is final.
    let (report, map_report, classes) = match &cfg.ground_truth_column {
        Some(column) => {
            let raw = read_string_column(&cfg.path, column)?;
            let (truth, classes) = encode_labels(&raw);
            let q_eval = cfg.q.max(classes.len());
            let all: Vec<usize> = (0..truth.len()).collect();
            let report = sample_fcr(&truth, &run.clustering.labels, &run.clustering.selection.selected, q_eval)?;
            let map_report = sample_fcr(&truth, &run.clustering.labels, &all, q_eval)?;
            (Some(report), Some(map_report), classes)
        }
        None => (None, None, Vec::new()),
    };
    Ok(RealDataOutcome { clustering: run.clustering, t_values, fit, curve: run.curve, report, map_report, classes })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_numbered_by_first_appearance() {
        let raw: Vec<String> = ["M", "B", "B", "M", "X"].iter().map(|s| s.to_string()).collect();
        let (labels, classes) = encode_labels(&raw);
        assert_eq!(labels, vec![0, 1, 1, 0, 2]);
        assert_eq!(classes, vec!["M", "B", "X"]);
    }

    #[test]
    fn standardized_columns_have_unit_spread() {
        let data = DataMatrix::from_rows(&[[1.0, 5.0], [2.0, 5.0], [3.0, 5.0]]).unwrap();
        let z = standardize(&data);
        assert_eq!(z.row(0), &[-1.0, 0.0]);
        assert_eq!(z.row(2), &[1.0, 0.0]);
    }
}
