//! Scoring against ground truth (invariant to label switching) and
//! Monte-Carlo oracles for population quantities at a known parameter.

mod gaussian_law;
mod oracle;
mod permutation;

pub use gaussian_law::gaussian_t_tail;
pub use oracle::{
    bayes_rule, clustering_risk_mc, default_t_grid, is_homoscedastic_gaussian_pair, mfcr_oracle_mc, oracle_curve,
    selection_risk, t_of_row, t_star_mc, McEstimate, OracleCurve, TSample, T_STAR_TOL,
};
pub use permutation::{
    best_assignment, best_permutation, next_permutation, sample_fcr, score_selection, FcrReport, MAX_CLASSES,
};
