//! Mixture-model parameters, densities, sampling and posterior quantities.

mod component;
mod data;
mod mixture;
mod posterior;

pub use component::{
    floor_eigenvalues, log_density, ComponentParams, Family, PreparedComponent, DEFAULT_DOF, EIGEN_FLOOR,
};
pub use data::DataMatrix;
pub use mixture::{
    log_sum_exp, normalize_log_rows, sample_mixture, CovarianceStructure, MixtureParams, PreparedMixture,
};
pub use posterior::{argmax, log_likelihood, map_labels, posterior_matrix, risk_statistic, PosteriorMatrix};
