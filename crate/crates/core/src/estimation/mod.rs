//! Maximum-likelihood fitting of Gaussian and fixed-dof Student-t mixtures by
//! EM, with k-means++ seeded multi-start and the covariance constraint regimes
//! used in the simulation scenarios.

mod em;
mod kmeanspp;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use em::{em_fit, em_refine, fit_mixture, student_em_fit, FitResult};
pub use kmeanspp::{kmeanspp_init, KmeansppInit};

use crate::error::{Error, Result};
use crate::model::{CovarianceStructure, Family, MixtureParams};

/// Covariance structure plus any parameters held fixed during estimation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub structure: CovarianceStructure,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub known_weights: Option<Vec<f64>>,
    /// One `d × d` matrix per component, as nested rows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub known_scatters: Option<Vec<Vec<Vec<f64>>>>,
}

impl Constraint {
    pub fn new(structure: CovarianceStructure) -> Self {
        Self { structure, known_weights: None, known_scatters: None }
    }

    /// The `Known` regime with weights and scatters copied from `params`.
    pub fn known_from(params: &MixtureParams) -> Self {
        let scatters = params
            .components()
            .iter()
            .map(|c| {
                let s = c.scatter();
                (0..s.nrows()).map(|i| (0..s.ncols()).map(|j| s[(i, j)]).collect()).collect()
            })
            .collect();
        Self {
            structure: CovarianceStructure::Known,
            known_weights: Some(params.weights().to_vec()),
            known_scatters: Some(scatters),
        }
    }

    pub(crate) fn known_scatter_matrices(&self, q: usize, d: usize) -> Result<Vec<DMatrix<f64>>> {
        let rows = self
            .known_scatters
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("known structure requires known_scatters".into()))?;
        if rows.len() != q {
            return Err(Error::InvalidConfig(format!("{} known scatters for {q} components", rows.len())));
        }
        rows.iter()
            .map(|m| {
                if m.len() != d || m.iter().any(|r| r.len() != d) {
                    return Err(Error::InvalidConfig(format!("known scatter must be {d}x{d}")));
                }
                Ok(DMatrix::from_fn(d, d, |i, j| m[i][j]))
            })
            .collect()
    }

    pub(crate) fn validate(&self, q: usize, d: usize) -> Result<()> {
        if self.structure == CovarianceStructure::Known {
            self.known_scatter_matrices(q, d)?;
            if self.known_weights.is_none() {
                return Err(Error::InvalidConfig("known structure requires known_weights".into()));
            }
        }
        if let Some(w) = &self.known_weights {
            if w.len() != q {
                return Err(Error::InvalidConfig(format!("{} known weights for {q} components", w.len())));
            }
            let sum: f64 = w.iter().sum();
            if w.iter().any(|v| !(*v >= 0.0)) || (sum - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidConfig("known weights must form a probability vector".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmConfig {
    pub max_iter: usize,
    pub n_starts: usize,
    /// Relative log-likelihood gain below which a run counts as converged.
    pub rel_tol: f64,
    /// Stop as soon as the relative gain drops below `rel_tol`. Off by default,
    /// so every start runs exactly `max_iter` iterations.
    pub early_stop: bool,
    pub family: Family,
    pub constraint: Constraint,
    pub seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            max_iter: 100,
            n_starts: 10,
            rel_tol: 1e-8,
            early_stop: false,
            family: Family::Gaussian,
            constraint: Constraint::new(CovarianceStructure::Full),
            seed: 0,
        }
    }
}

impl EmConfig {
    pub fn with_structure(mut self, structure: CovarianceStructure) -> Self {
        self.constraint = Constraint::new(structure);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(Error::InvalidConfig("max_iter must be at least 1".into()));
        }
        if self.n_starts == 0 {
            return Err(Error::InvalidConfig("n_starts must be at least 1".into()));
        }
        if let Family::StudentT { dof } = self.family {
            if !(dof > 2.0 && dof.is_finite()) {
                return Err(Error::InvalidConfig(format!("Student-t dof must exceed 2, got {dof}")));
            }
        }
        Ok(())
    }
}
