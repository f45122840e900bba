use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::component::{ComponentParams, Family, PreparedComponent};
use super::data::DataMatrix;
use crate::error::{Error, Result};
use crate::rng::Rng;

const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Constraint placed on the component scatter matrices during estimation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceStructure {
    /// Weights and scatters are supplied and held fixed; only means are estimated.
    Known,
    Spherical,
    Diagonal,
    Full,
}

/// Weights and component parameters of a finite mixture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MixtureDoc", into = "MixtureDoc")]
pub struct MixtureParams {
    weights: Vec<f64>,
    components: Vec<ComponentParams>,
    structure: CovarianceStructure,
}

impl MixtureParams {
    pub fn new(weights: Vec<f64>, components: Vec<ComponentParams>, structure: CovarianceStructure) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidParams("at least one component is required".into()));
        }
        if weights.len() != components.len() {
            return Err(Error::InvalidParams(format!("{} weights for {} components", weights.len(), components.len())));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidParams("weights must be finite and non-negative".into()));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidParams(format!("weights sum to {sum}, not 1")));
        }
        let d = components[0].dim();
        if let Some(c) = components.iter().find(|c| c.dim() != d) {
            return Err(Error::DimensionMismatch { expected: d, got: c.dim() });
        }
        for (q, c) in components.iter().enumerate() {
            check_structure(structure, c.scatter())
                .map_err(|msg| Error::InvalidParams(format!("component {}: {msg}", q + 1)))?;
        }
        Ok(Self { weights, components, structure })
    }

    /// Gaussian mixture from means and covariances given as plain rows.
    pub fn gaussian(
        weights: Vec<f64>,
        means: &[Vec<f64>],
        covariances: &[DMatrix<f64>],
        structure: CovarianceStructure,
    ) -> Result<Self> {
        if means.len() != covariances.len() {
            return Err(Error::InvalidParams("means and covariances differ in length".into()));
        }
        let comps = means
            .iter()
            .zip(covariances)
            .map(|(m, c)| ComponentParams::gaussian(m, c.clone()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(weights, comps, structure)
    }

    pub fn q(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[ComponentParams] {
        &self.components
    }

    pub fn structure(&self) -> CovarianceStructure {
        self.structure
    }

    pub fn with_structure(mut self, structure: CovarianceStructure) -> Result<Self> {
        for c in &self.components {
            check_structure(structure, c.scatter()).map_err(Error::InvalidParams)?;
        }
        self.structure = structure;
        Ok(self)
    }

    /// Component `q` of the result is component `perm[q]` of `self`.
    pub fn relabel(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.q())?;
        Ok(Self {
            weights: perm.iter().map(|&p| self.weights[p]).collect(),
            components: perm.iter().map(|&p| self.components[p].clone()).collect(),
            structure: self.structure,
        })
    }

    pub fn prepare(&self) -> PreparedMixture {
        PreparedMixture {
            log_weights: self.weights.iter().map(|w| w.ln()).collect(),
            components: self.components.iter().map(ComponentParams::prepare).collect(),
            weights: self.weights.clone(),
        }
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json { path: path.into(), source })
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

pub(crate) fn check_permutation(perm: &[usize], q: usize) -> Result<()> {
    if perm.len() != q {
        return Err(Error::InvalidPermutation(format!("length {} for {q} classes", perm.len())));
    }
    let mut seen = vec![false; q];
    for &p in perm {
        if p >= q || seen[p] {
            return Err(Error::InvalidPermutation(format!("{perm:?} is not a bijection")));
        }
        seen[p] = true;
    }
    Ok(())
}

fn check_structure(structure: CovarianceStructure, s: &DMatrix<f64>) -> std::result::Result<(), String> {
    let d = s.nrows();
    match structure {
        CovarianceStructure::Known | CovarianceStructure::Full => Ok(()),
        CovarianceStructure::Diagonal => {
            for i in 0..d {
                for j in 0..d {
                    if i != j && s[(i, j)] != 0.0 {
                        return Err("diagonal structure requires zero off-diagonal entries".into());
                    }
                }
            }
            Ok(())
        }
        CovarianceStructure::Spherical => {
            let v = s[(0, 0)];
            for i in 0..d {
                for j in 0..d {
                    let expected = if i == j { v } else { 0.0 };
                    if s[(i, j)] != expected {
                        return Err("spherical structure requires a multiple of the identity".into());
                    }
                }
            }
            Ok(())
        }
    }
}

/// Factorized mixture for repeated density evaluation.
#[derive(Clone, Debug)]
pub struct PreparedMixture {
    weights: Vec<f64>,
    log_weights: Vec<f64>,
    components: Vec<PreparedComponent>,
}

impl PreparedMixture {
    pub fn q(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn components(&self) -> &[PreparedComponent] {
        &self.components
    }

    pub fn log_weight(&self, q: usize) -> f64 {
        self.log_weights[q]
    }

    /// Fills `out[q] = ln(pi_q) + ln f_q(x)` and returns the log-sum-exp of `out`.
    pub fn log_joint(&self, x: &[f64], scratch: &mut [f64], out: &mut [f64]) -> f64 {
        for ((o, c), lw) in out.iter_mut().zip(&self.components).zip(&self.log_weights) {
            *o = lw + c.log_density(x, scratch);
        }
        log_sum_exp(out)
    }

    /// Fills the row-major `n × q` matrix `out[i q + k] = ln(pi_k) + ln f_k(x_i)`.
    pub fn log_joint_matrix(&self, data: &DataMatrix, out: &mut [f64]) {
        let (q, d) = (self.q(), data.d());
        if d == 0 {
            return;
        }
        let mut scratch = vec![0.0; d];
        for (k, (c, lw)) in self.components.iter().zip(&self.log_weights).enumerate() {
            for (x, o) in data.values().chunks_exact(d).zip(out.chunks_exact_mut(q)) {
                o[k] = lw + c.log_density(x, &mut scratch);
            }
        }
    }

    /// Draws one label and one observation.
    pub fn sample_one(&self, rng: &mut Rng, out: &mut [f64]) -> usize {
        let label = draw_category(&self.weights, rng);
        self.components[label].sample_into(rng, out);
        label
    }
}

/// Replaces each length-`q` row of log joint densities by the posterior
/// probabilities (floored at `floor`) and returns the sum of the row
/// log-sum-exps, i.e. the log-likelihood.
pub fn normalize_log_rows(values: &mut [f64], q: usize, floor: f64) -> f64 {
    let mut total = 0.0;
    for row in values.chunks_exact_mut(q) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        total += max + sum.ln();
        let inv = 1.0 / sum;
        for v in row.iter_mut() {
            *v = (*v * inv).max(floor);
        }
    }
    total
}

/// Numerically stable `ln Σ exp(v)`; `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn draw_category(weights: &[f64], rng: &mut Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (q, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            last_positive = q;
            acc += w;
            if u < acc {
                return q;
            }
        }
    }
    last_positive
}

/// Draws `n` labelled observations from the mixture.
pub fn sample_mixture(params: &MixtureParams, n: usize, rng: &mut Rng) -> (Vec<usize>, DataMatrix) {
    let prepared = params.prepare();
    let d = params.dim();
    let mut labels = Vec::with_capacity(n);
    let mut values = vec![0.0; n * d];
    for chunk in values.chunks_exact_mut(d) {
        labels.push(prepared.sample_one(rng, chunk));
    }
    (labels, DataMatrix::from_raw(n, d, values))
}

// JSON document shape.

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum KindDoc {
    Gaussian,
    StudentT,
}

#[derive(Serialize, Deserialize)]
struct ComponentDoc {
    kind: KindDoc,
    mean: Vec<f64>,
    scatter: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dof: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct MixtureDoc {
    q: usize,
    weights: Vec<f64>,
    components: Vec<ComponentDoc>,
    structure: CovarianceStructure,
}

impl TryFrom<MixtureDoc> for MixtureParams {
    type Error = Error;

    fn try_from(doc: MixtureDoc) -> Result<Self> {
        if doc.q != doc.weights.len() || doc.q != doc.components.len() {
            return Err(Error::InvalidParams(format!(
                "q = {} but {} weights and {} components",
                doc.q,
                doc.weights.len(),
                doc.components.len()
            )));
        }
        let components = doc
            .components
            .into_iter()
            .map(|c| {
                let d = c.mean.len();
                if c.scatter.len() != d || c.scatter.iter().any(|r| r.len() != d) {
                    return Err(Error::InvalidParams(format!("scatter must be {d}x{d}")));
                }
                let scatter = DMatrix::from_fn(d, d, |i, j| c.scatter[i][j]);
                let family = match c.kind {
                    KindDoc::Gaussian => Family::Gaussian,
                    KindDoc::StudentT => Family::StudentT { dof: c.dof.unwrap_or(super::component::DEFAULT_DOF) },
                };
                ComponentParams::new(family, DVector::from_vec(c.mean), scatter)
            })
            .collect::<Result<Vec<_>>>()?;
        MixtureParams::new(doc.weights, components, doc.structure)
    }
}

impl From<MixtureParams> for MixtureDoc {
    fn from(p: MixtureParams) -> Self {
        let components = p
            .components
            .iter()
            .map(|c| {
                let s = c.scatter();
                ComponentDoc {
                    kind: match c.family() {
                        Family::Gaussian => KindDoc::Gaussian,
                        Family::StudentT { .. } => KindDoc::StudentT,
                    },
                    mean: c.mean().iter().cloned().collect(),
                    scatter: (0..s.nrows()).map(|i| (0..s.ncols()).map(|j| s[(i, j)]).collect()).collect(),
                    dof: c.family().dof(),
                }
            })
            .collect();
        MixtureDoc { q: p.q(), weights: p.weights, components, structure: p.structure }
    }
}
