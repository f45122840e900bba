use std::path::Path;

use log::debug;
use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rayon::prelude::*;
use serde::Serialize;

use super::kmeanspp::{accumulate_outer, kmeanspp_init};
use super::{Constraint, EmConfig};
use crate::error::{Error, Result};
use crate::model::{
    floor_eigenvalues, normalize_log_rows, ComponentParams, CovarianceStructure, DataMatrix, Family, MixtureParams,
    PreparedMixture, EIGEN_FLOOR,
};
use crate::rng::{self, Rng};

/// Smallest responsibility kept in the E-step.
const RESP_FLOOR: f64 = 1e-300;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FitResult {
    pub params: MixtureParams,
    /// Log-likelihood of the selected start: entry `k` is evaluated after `k`
    /// EM updates following the k-means++ seeding step.
    pub loglik_trace: Vec<f64>,
    pub n_starts_run: usize,
    pub best_start: usize,
    /// Final log-likelihood of every start, in start order.
    pub start_logliks: Vec<f64>,
    pub converged: bool,
    /// Iterations at which a degenerate component was re-seeded in the selected start.
    pub reinitializations: Vec<usize>,
}

impl FitResult {
    pub fn loglik(&self) -> f64 {
        *self.loglik_trace.last().unwrap_or(&f64::NEG_INFINITY)
    }

    pub fn write_trace_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        w.write_record(["iteration", "loglik"])?;
        for (k, ll) in self.loglik_trace.iter().enumerate() {
            w.write_record([k.to_string(), ll.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

pub(crate) fn normalized(mut w: Vec<f64>) -> Vec<f64> {
    let sum: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= sum);
    w
}

/// Projects a scatter estimate onto the constraint and floors its spectrum.
/// Diagonal and spherical projections stay exactly diagonal.
pub(crate) fn constrain(s: &DMatrix<f64>, structure: CovarianceStructure) -> DMatrix<f64> {
    let d = s.nrows();
    let trace = s.trace();
    let floor = if trace > 0.0 && trace.is_finite() { EIGEN_FLOOR * trace / d as f64 } else { EIGEN_FLOOR };
    match structure {
        CovarianceStructure::Full | CovarianceStructure::Known => floor_eigenvalues(s),
        CovarianceStructure::Diagonal => DMatrix::from_fn(d, d, |i, j| if i == j { s[(i, i)].max(floor) } else { 0.0 }),
        CovarianceStructure::Spherical => {
            let v = (trace / d as f64).max(floor);
            DMatrix::from_fn(d, d, |i, j| if i == j { v } else { 0.0 })
        }
    }
}

struct Context<'a> {
    data: &'a DataMatrix,
    q: usize,
    family: Family,
    structure: CovarianceStructure,
    known_weights: Option<Vec<f64>>,
    known_scatters: Option<Vec<DMatrix<f64>>>,
    /// Scatter given to re-seeded components.
    reseed_scatter: DMatrix<f64>,
}

impl<'a> Context<'a> {
    fn new(data: &'a DataMatrix, q: usize, family: Family, constraint: &Constraint) -> Result<Self> {
        if q == 0 {
            return Err(Error::InvalidConfig("number of components must be at least 1".into()));
        }
        if data.n() < q {
            return Err(Error::TooFewRows { needed: q, got: data.n() });
        }
        let d = data.d();
        if d == 0 {
            return Err(Error::InvalidConfig("data has no columns".into()));
        }
        constraint.validate(q, d)?;
        let known_scatters = match constraint.structure {
            CovarianceStructure::Known => Some(constraint.known_scatter_matrices(q, d)?),
            _ => None,
        };
        let mean = data.mean();
        let mut cov = DMatrix::zeros(d, d);
        for x in data.rows() {
            accumulate_outer(&mut cov, x, &mean, 1.0);
        }
        cov /= data.n() as f64;
        if !(cov.trace() > 0.0) {
            cov = DMatrix::identity(d, d);
        }
        Ok(Self {
            data,
            q,
            family,
            structure: constraint.structure,
            known_weights: constraint.known_weights.clone(),
            known_scatters,
            reseed_scatter: constrain(&cov, constraint.structure),
        })
    }

    /// Computes responsibilities (and Student-t precision weights) and returns the log-likelihood.
    fn e_step(&self, mix: &PreparedMixture, resp: &mut [f64], prec: &mut [f64]) -> f64 {
        mix.log_joint_matrix(self.data, resp);
        let total = normalize_log_rows(resp, self.q, RESP_FLOOR);
        match self.family {
            Family::Gaussian => prec.fill(1.0),
            Family::StudentT { dof } => {
                let d = self.data.d();
                let mut scratch = vec![0.0; d];
                for (k, c) in mix.components().iter().enumerate() {
                    for (x, u) in self.data.values().chunks_exact(d).zip(prec.chunks_exact_mut(self.q)) {
                        u[k] = (dof + d as f64) / (dof + c.mahalanobis_sq(x, &mut scratch));
                    }
                }
            }
        }
        total
    }

    /// Weighted M-step; components with no mass keep their previous values.
    fn m_step(&self, resp: &[f64], prec: &[f64], prev: &MixtureParams) -> Result<MixtureParams> {
        let (q, d, n) = (self.q, self.data.d(), self.data.n());
        let mut mass = vec![0.0; q];
        let mut umass = vec![0.0; q];
        let mut sums = vec![0.0; q * d];
        let vals = self.data.values();
        for k in 0..q {
            let s = &mut sums[k * d..(k + 1) * d];
            let (mut m, mut um) = (0.0, 0.0);
            for ((x, &r), &u) in vals.chunks_exact(d).zip(resp[k..].iter().step_by(q)).zip(prec[k..].iter().step_by(q))
            {
                let ru = r * u;
                m += r;
                um += ru;
                for (sj, xj) in s.iter_mut().zip(x) {
                    *sj += ru * xj;
                }
            }
            mass[k] = m;
            umass[k] = um;
        }
        let means: Vec<Vec<f64>> = (0..q)
            .map(|k| {
                if umass[k] > 0.0 {
                    sums[k * d..(k + 1) * d].iter().map(|s| s / umass[k]).collect()
                } else {
                    prev.components()[k].mean().iter().cloned().collect()
                }
            })
            .collect();

        let scatters: Vec<DMatrix<f64>> = match &self.known_scatters {
            Some(known) => known.clone(),
            None => {
                // lower triangle only, or just the diagonal when that is all the constraint keeps
                let diag_only =
                    matches!(self.structure, CovarianceStructure::Diagonal | CovarianceStructure::Spherical);
                let mut flat = vec![vec![0.0; d * d]; q];
                let mut dev = vec![0.0; d];
                for (k, a) in flat.iter_mut().enumerate() {
                    let m = &means[k];
                    let weights = resp[k..].iter().step_by(q).zip(prec[k..].iter().step_by(q));
                    for (x, (&r, &u)) in vals.chunks_exact(d).zip(weights) {
                        let w = r * u;
                        if w == 0.0 {
                            continue;
                        }
                        for ((dv, xv), mv) in dev.iter_mut().zip(x).zip(m) {
                            *dv = xv - mv;
                        }
                        if diag_only {
                            for (j, dv) in dev.iter().enumerate() {
                                a[j * d + j] += w * dv * dv;
                            }
                        } else {
                            for row in 0..d {
                                let wr = w * dev[row];
                                for (acj, dc) in a[row * d..=row * d + row].iter_mut().zip(&dev) {
                                    *acj += wr * dc;
                                }
                            }
                        }
                    }
                }
                let acc: Vec<DMatrix<f64>> = flat
                    .iter()
                    .map(|a| DMatrix::from_fn(d, d, |r, c| if r >= c { a[r * d + c] } else { a[c * d + r] }))
                    .collect();
                acc.into_iter()
                    .enumerate()
                    .map(|(k, s)| {
                        if mass[k] > 0.0 {
                            constrain(&(s / mass[k]), self.structure)
                        } else {
                            prev.components()[k].scatter().clone()
                        }
                    })
                    .collect()
            }
        };
        let weights = match &self.known_weights {
            Some(w) => w.clone(),
            None => normalized(mass.iter().map(|m| m / n as f64).collect()),
        };
        let components = means
            .into_iter()
            .zip(scatters)
            .map(|(m, s)| ComponentParams::new(self.family, DVector::from_vec(m), s))
            .collect::<Result<Vec<_>>>()?;
        MixtureParams::new(weights, components, self.structure)
    }

    /// Moves component `k` onto a random data point with the reseed scatter.
    fn reseed(&self, params: &MixtureParams, k: usize, rng: &mut Rng) -> Result<MixtureParams> {
        let row = self.data.row(rng.random_range(0..self.data.n()));
        let mut components = params.components().to_vec();
        let scatter = match &self.known_scatters {
            Some(known) => known[k].clone(),
            None => self.reseed_scatter.clone(),
        };
        components[k] = ComponentParams::new(self.family, DVector::from_column_slice(row), scatter)?;
        let weights = match &self.known_weights {
            Some(w) => w.clone(),
            None => {
                let mut w = params.weights().to_vec();
                w[k] = 1.0 / self.q as f64;
                normalized(w)
            }
        };
        MixtureParams::new(weights, components, self.structure)
    }
}

struct Run {
    params: MixtureParams,
    trace: Vec<f64>,
    reinits: Vec<usize>,
    converged: bool,
}

fn rel_gain(trace: &[f64]) -> f64 {
    match trace {
        [.., a, b] => (b - a) / a.abs().max(f64::MIN_POSITIVE),
        _ => f64::INFINITY,
    }
}

fn iterate(
    ctx: &Context,
    mut params: MixtureParams,
    iters: usize,
    rel_tol: f64,
    early_stop: bool,
    rng: &mut Rng,
) -> Result<Run> {
    let nq = ctx.data.n() * ctx.q;
    let mut resp = vec![0.0; nq];
    let mut prec = vec![0.0; nq];
    let mut trace = Vec::with_capacity(iters + 1);
    let mut reinits = Vec::new();
    let mut stopped = false;
    for it in 0..iters {
        let ll = ctx.e_step(&params.prepare(), &mut resp, &mut prec);
        trace.push(ll);
        if early_stop && it > 0 && rel_gain(&trace).abs() < rel_tol {
            stopped = true;
            break;
        }
        let degenerate: Vec<usize> =
            (0..ctx.q).filter(|&k| (0..ctx.data.n()).map(|i| resp[i * ctx.q + k]).sum::<f64>() < 1.0).collect();
        if !degenerate.is_empty() {
            for &k in &degenerate {
                debug!("re-seeding degenerate component {k} at iteration {it}");
                params = ctx.reseed(&params, k, rng)?;
            }
            reinits.push(it);
            continue;
        }
        params = ctx.m_step(&resp, &prec, &params)?;
    }
    if !stopped {
        trace.push(ctx.e_step(&params.prepare(), &mut resp, &mut prec));
    }
    let converged = rel_gain(&trace).abs() < rel_tol;
    if !trace.last().is_some_and(|ll| ll.is_finite()) {
        return Err(Error::InvalidParams("EM produced a non-finite log-likelihood".into()));
    }
    Ok(Run { params, trace, reinits, converged })
}

fn one_start(ctx: &Context, cfg: &EmConfig, start: usize) -> Result<Run> {
    let mut rng = rng::stream(cfg.seed, &[start as u64]);
    let init = kmeanspp_init(ctx.data, ctx.q, ctx.family, &cfg.constraint, &mut rng)?;
    let nq = ctx.data.n() * ctx.q;
    let mut resp = vec![0.0; nq];
    for (i, &k) in init.assignment.iter().enumerate() {
        resp[i * ctx.q + k] = 1.0;
    }
    let ones = vec![1.0; nq];
    let seeded = ctx.m_step(&resp, &ones, &init.params)?;
    iterate(ctx, seeded, cfg.max_iter, cfg.rel_tol, cfg.early_stop, &mut rng)
}

/// Multi-start EM for the family named in `cfg.family`.
///
/// Each start seeds with k-means++, performs one M-step from the hard
/// assignment, then runs `max_iter` EM iterations. The start with the highest
/// final log-likelihood is returned (lowest start index on ties); starts run in
/// parallel on independent streams derived from `cfg.seed`.
pub fn fit_mixture(data: &DataMatrix, q: usize, cfg: &EmConfig) -> Result<FitResult> {
    cfg.validate()?;
    let ctx = Context::new(data, q, cfg.family, &cfg.constraint)?;
    let runs: Vec<Result<Run>> = (0..cfg.n_starts).into_par_iter().map(|s| one_start(&ctx, cfg, s)).collect();
    let mut start_logliks = Vec::with_capacity(runs.len());
    let mut best: Option<(usize, Run)> = None;
    let mut first_err = None;
    for (s, run) in runs.into_iter().enumerate() {
        match run {
            Ok(run) => {
                let ll = *run.trace.last().unwrap();
                start_logliks.push(ll);
                if best.as_ref().is_none_or(|(_, b)| ll > *b.trace.last().unwrap()) {
                    best = Some((s, run));
                }
            }
            Err(e) => {
                start_logliks.push(f64::NEG_INFINITY);
                first_err.get_or_insert(e);
            }
        }
    }
    let (best_start, run) = match best {
        Some(b) => b,
        None => return Err(first_err.expect("at least one start")),
    };
    Ok(FitResult {
        params: run.params,
        loglik_trace: run.trace,
        n_starts_run: cfg.n_starts,
        best_start,
        start_logliks,
        converged: run.converged,
        reinitializations: run.reinits,
    })
}

/// Gaussian-mixture EM (overrides `cfg.family`).
pub fn em_fit(data: &DataMatrix, q: usize, cfg: &EmConfig) -> Result<FitResult> {
    let cfg = EmConfig { family: Family::Gaussian, ..cfg.clone() };
    fit_mixture(data, q, &cfg)
}

/// Student-t mixture EM with the dof held fixed: `cfg.family`'s dof when it is
/// already Student-t, otherwise the default of 4.
pub fn student_em_fit(data: &DataMatrix, q: usize, cfg: &EmConfig) -> Result<FitResult> {
    let dof = cfg.family.dof().unwrap_or(crate::model::DEFAULT_DOF);
    let cfg = EmConfig { family: Family::StudentT { dof }, ..cfg.clone() };
    fit_mixture(data, q, &cfg)
}

/// Runs `iters` EM iterations starting from `init` (single start, no seeding).
/// With `iters = 0` the returned parameters are `init` itself.
pub fn em_refine(data: &DataMatrix, init: &MixtureParams, cfg: &EmConfig, iters: usize) -> Result<FitResult> {
    let family = init.components()[0].family();
    let constraint = match init.structure() {
        CovarianceStructure::Known if cfg.constraint.structure != CovarianceStructure::Known => {
            Constraint::known_from(init)
        }
        _ => cfg.constraint.clone(),
    };
    if data.n() > 0 && data.d() != init.dim() {
        return Err(Error::DimensionMismatch { expected: init.dim(), got: data.d() });
    }
    let ctx = Context::new(data, init.q(), family, &constraint)?;
    let mut rng = rng::stream(cfg.seed, &[u64::MAX]);
    let run = iterate(&ctx, init.clone(), iters, cfg.rel_tol, cfg.early_stop, &mut rng)?;
    let ll = *run.trace.last().unwrap();
    Ok(FitResult {
        params: run.params,
        loglik_trace: run.trace,
        n_starts_run: 1,
        best_start: 0,
        start_logliks: vec![ll],
        converged: run.converged,
        reinitializations: run.reinits,
    })
}
