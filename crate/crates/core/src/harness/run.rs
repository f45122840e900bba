use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;

use super::scenario::{Procedure, ScenarioConfig, SweepParameter, SweepPoint, Truth};
use crate::bootstrap::{bootstrap_from_fit, BootstrapConfig, BootstrapCurve, BootstrapMode};
use crate::error::{Error, Result};
use crate::estimation::{fit_mixture, EmConfig, FitResult};
use crate::evaluation::{sample_fcr, FcrReport};
use crate::model::{posterior_matrix, sample_mixture, DataMatrix, MixtureParams};
use crate::rng;
use crate::selection::{select_and_label, SelectionRule, SelectiveClustering};

/// Output of one procedure on one data set.
#[derive(Clone, Debug)]
pub struct ProcedureRun {
    pub procedure: Procedure,
    pub clustering: SelectiveClustering,
    /// Level at which the cumulative rule was finally applied; `None` when a
    /// bootstrap calibration found no admissible level.
    pub level: Option<f64>,
    pub curve: Option<BootstrapCurve>,
}

/// Runs the requested procedures on `data`. Only `theta_star` (for the oracle)
/// and the data enter; no labels are involved.
pub fn run_procedures(
    data: &DataMatrix,
    q: usize,
    alpha: f64,
    procedures: &[Procedure],
    theta_star: Option<&MixtureParams>,
    em: &EmConfig,
    boot: &BootstrapConfig,
) -> Result<(Option<FitResult>, Vec<ProcedureRun>)> {
    let needs_fit = procedures.iter().any(|&p| p != Procedure::Oracle);
    let fit = if needs_fit { Some(fit_mixture(data, q, em)?) } else { None };
    let fitted_post = match &fit {
        Some(f) => Some(posterior_matrix(&f.params, data)?),
        None => None,
    };
    let mut runs = Vec::with_capacity(procedures.len());
    for &procedure in procedures {
        let run = match procedure {
            Procedure::Oracle => {
                let theta =
                    theta_star.ok_or_else(|| Error::InvalidConfig("the oracle needs the true parameter".into()))?;
                let post = posterior_matrix(theta, data)?;
                let clustering = select_and_label(&post, alpha, SelectionRule::Cumulative)?;
                ProcedureRun { procedure, clustering, level: Some(alpha), curve: None }
            }
            Procedure::PlugIn | Procedure::FixedBaseline => {
                let rule =
                    if procedure == Procedure::PlugIn { SelectionRule::Cumulative } else { SelectionRule::Fixed };
                let clustering = select_and_label(fitted_post.as_ref().unwrap(), alpha, rule)?;
                ProcedureRun { procedure, clustering, level: Some(alpha), curve: None }
            }
            Procedure::BootParam | Procedure::BootNonParam => {
                let (mode, stream) = if procedure == Procedure::BootParam {
                    (BootstrapMode::Parametric, 0)
                } else {
                    (BootstrapMode::NonParametric, 1)
                };
                let cfg = BootstrapConfig { mode, seed: rng::derive_seed(boot.seed, &[stream]), ..boot.clone() };
                let out = bootstrap_from_fit(data, fit.clone().unwrap(), alpha, &cfg)?;
                ProcedureRun {
                    procedure,
                    clustering: out.clustering,
                    level: out.curve.chosen_level(),
                    curve: Some(out.curve),
                }
            }
        };
        runs.push(run);
    }
    Ok((fit, runs))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProcedureRecord {
    pub procedure: Procedure,
    pub sample_fcr: f64,
    pub selection_frequency: f64,
    pub n_selected: usize,
    pub level: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReplicationRecord {
    pub sweep: String,
    pub sweep_index: usize,
    pub point_index: usize,
    pub point: SweepPoint,
    pub rep: usize,
    pub outcomes: Vec<ProcedureRecord>,
    pub error: Option<String>,
}

/// Per-replication inputs that do not depend on the replication index.
pub enum DataSource {
    Model(MixtureParams),
    File { data: DataMatrix, labels: Vec<usize>, resample: bool },
}

impl DataSource {
    pub fn for_point(cfg: &ScenarioConfig, point: &SweepPoint) -> Result<Self> {
        match &cfg.truth {
            Truth::FromCsv { path, columns, label_column, resample, .. } => {
                let (data, labels, _) = super::real_data::load_labelled(path, columns, label_column)?;
                Ok(DataSource::File { data, labels, resample: *resample })
            }
            truth => Ok(DataSource::Model(truth.params(point.epsilon)?.expect("model truth"))),
        }
    }
}

/// One replication of one sweep point: draw data, run every procedure, score.
pub fn run_replication(
    cfg: &ScenarioConfig,
    source: &DataSource,
    sweep_index: usize,
    point_index: usize,
    point: &SweepPoint,
    rep: usize,
) -> ReplicationRecord {
    let path = [sweep_index as u64, point_index as u64, rep as u64];
    let record = |outcomes, error| ReplicationRecord {
        sweep: cfg.sweeps[sweep_index].label.clone(),
        sweep_index,
        point_index,
        point: *point,
        rep,
        outcomes,
        error,
    };
    match replicate(cfg, source, point, &path) {
        Ok(outcomes) => record(outcomes, None),
        Err(e) => {
            warn!("{} / {} = {} / rep {rep}: {e}", cfg.name, cfg.sweeps[sweep_index].label, point.value);
            record(Vec::new(), Some(e.to_string()))
        }
    }
}

fn replicate(
    cfg: &ScenarioConfig,
    source: &DataSource,
    point: &SweepPoint,
    path: &[u64; 3],
) -> Result<Vec<ProcedureRecord>> {
    let q = cfg.q()?;
    let mut data_rng = rng::stream(cfg.seed, &[path[0], path[1], path[2], 0]);
    let (labels, data, theta_star) = match source {
        DataSource::Model(theta) => {
            let (labels, data) = sample_mixture(theta, point.n, &mut data_rng);
            (labels, data, Some(theta))
        }
        DataSource::File { data, labels, resample } => {
            if *resample {
                let n = if point.n == 0 { data.n() } else { point.n };
                let idx: Vec<usize> = (0..n).map(|_| rand::Rng::random_range(&mut data_rng, 0..data.n())).collect();
                (idx.iter().map(|&i| labels[i]).collect(), data.select_rows(&idx), None)
            } else {
                (labels.clone(), data.clone(), None)
            }
        }
    };
    let em = match theta_star {
        Some(t) => cfg.em_for(t)?,
        None => cfg.em.clone(),
    };
    let em = em.with_seed(rng::derive_seed(cfg.seed, &[path[0], path[1], path[2], 1]));
    let boot = cfg.boot.clone().with_seed(rng::derive_seed(cfg.seed, &[path[0], path[1], path[2], 2]));
    let (_, runs) = run_procedures(&data, q, point.alpha, &cfg.procedures, theta_star, &em, &boot)?;
    let q_eval = q.max(labels.iter().map(|&l| l + 1).max().unwrap_or(0));
    runs.into_iter()
        .map(|run| {
            let report: FcrReport =
                sample_fcr(&labels, &run.clustering.labels, &run.clustering.selection.selected, q_eval)?;
            Ok(ProcedureRecord {
                procedure: run.procedure,
                sample_fcr: report.sample_fcr,
                selection_frequency: report.selection_frequency,
                n_selected: report.n_selected,
                level: run.level,
            })
        })
        .collect()
}

/// Aggregate of one procedure at one sweep point.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Cell {
    pub sweep: String,
    pub sweep_index: usize,
    pub point: SweepPoint,
    pub procedure: Procedure,
    /// Replications that completed.
    pub reps: usize,
    pub failures: usize,
    /// Set when some replications failed; the means cover completed ones only.
    pub partial: bool,
    pub fcr_mean: f64,
    pub fcr_se: f64,
    pub selection_mean: f64,
    pub selection_se: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepSummary {
    pub label: String,
    pub parameter: SweepParameter,
    pub points: Vec<SweepPoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepResult {
    pub scenario: String,
    pub sweeps: Vec<SweepSummary>,
    pub cells: Vec<Cell>,
    pub records: Vec<ReplicationRecord>,
}

impl SweepResult {
    pub fn empty(scenario: &str) -> Self {
        Self { scenario: scenario.to_string(), sweeps: Vec::new(), cells: Vec::new(), records: Vec::new() }
    }

    pub fn cell(&self, sweep: &str, value: f64, procedure: Procedure) -> Option<&Cell> {
        self.cells.iter().find(|c| c.sweep == sweep && c.point.value == value && c.procedure == procedure)
    }

    pub fn is_partial(&self) -> bool {
        self.cells.iter().any(|c| c.partial)
    }
}

/// Mean and standard error (sample SD over `√m`).
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let m = values.len();
    if m == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / m as f64;
    if m == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1) as f64;
    (mean, (var / m as f64).sqrt())
}

fn aggregate(cfg: &ScenarioConfig, sweeps: &[SweepSummary], records: &[ReplicationRecord]) -> Vec<Cell> {
    let mut cells = Vec::new();
    for (s, sweep) in sweeps.iter().enumerate() {
        for (p, point) in sweep.points.iter().enumerate() {
            let recs: Vec<&ReplicationRecord> =
                records.iter().filter(|r| r.sweep_index == s && r.point_index == p).collect();
            let failures = recs.iter().filter(|r| r.error.is_some()).count();
            for &procedure in &cfg.procedures {
                let outs: Vec<&ProcedureRecord> =
                    recs.iter().filter_map(|r| r.outcomes.iter().find(|o| o.procedure == procedure)).collect();
                let fcr: Vec<f64> = outs.iter().map(|o| o.sample_fcr).collect();
                let sel: Vec<f64> = outs.iter().map(|o| o.selection_frequency).collect();
                let (fcr_mean, fcr_se) = mean_se(&fcr);
                let (selection_mean, selection_se) = mean_se(&sel);
                cells.push(Cell {
                    sweep: sweep.label.clone(),
                    sweep_index: s,
                    point: *point,
                    procedure,
                    reps: outs.len(),
                    failures,
                    partial: failures > 0,
                    fcr_mean,
                    fcr_se,
                    selection_mean,
                    selection_se,
                });
            }
        }
    }
    cells
}

/// Runs every sweep point and replication of `cfg`. Work units run in parallel;
/// results are collected and aggregated in index order.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let sweeps: Vec<SweepSummary> = cfg
        .sweeps
        .iter()
        .map(|s| SweepSummary { label: s.label.clone(), parameter: s.parameter, points: cfg.points(s) })
        .collect();
    let mut sources = Vec::new();
    let mut jobs = Vec::new();
    for (s, sweep) in sweeps.iter().enumerate() {
        for (p, point) in sweep.points.iter().enumerate() {
            sources.push(DataSource::for_point(cfg, point)?);
            let source = sources.len() - 1;
            jobs.extend((0..cfg.reps).map(|r| (s, p, source, r)));
        }
    }
    info!("scenario {}: {} replications over {} sweeps", cfg.name, jobs.len(), sweeps.len());
    let records: Vec<ReplicationRecord> = jobs
        .par_iter()
        .map(|&(s, p, source, r)| run_replication(cfg, &sources[source], s, p, &sweeps[s].points[p], r))
        .collect();
    let cells = aggregate(cfg, &sweeps, &records);
    let result = SweepResult { scenario: cfg.name.clone(), sweeps, cells, records };
    if result.is_partial() {
        warn!("scenario {}: some replications failed; affected cells are flagged partial", cfg.name);
    }
    Ok(result)
}
