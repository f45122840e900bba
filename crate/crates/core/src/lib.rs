//! Selective clustering for finite mixture models.
//!
//! Items are labelled by their maximum a posteriori class, but only those whose
//! labels are trustworthy enough are kept: the selection is calibrated so that
//! the expected proportion of misclassified items among the selected ones (the
//! false clustering rate, minimized over label permutations) stays at a target
//! level `alpha`.
//!
//! * [`model`]: mixture parameters, densities, sampling, posteriors.
//! * [`selection`]: the cumulative and fixed-threshold abstention rules.
//! * [`estimation`]: EM for Gaussian and fixed-dof Student-t mixtures.
//! * [`bootstrap`]: bootstrap estimation of the plug-in FCR and level calibration.
//! * [`evaluation`]: permutation-invariant scoring and Monte-Carlo oracles.
//! * [`harness`]: simulation scenarios, the real-data workflow and report output.

pub mod bootstrap;
pub mod error;
pub mod estimation;
pub mod evaluation;
pub mod harness;
pub mod io;
pub mod model;
pub mod rng;
pub mod selection;

pub use error::{Error, Result};
