//! Bootstrap estimation of the plug-in procedure's FCR and calibration of the
//! nominal level over a grid.
//!
//! For each resample `X^b` the plug-in procedure is rerun (with a refit of the
//! parameter) and its selections are scored against posteriors computed under
//! the parameter fitted on the original data. All grid levels share the same
//! resamples and refits; only the selection threshold moves.

use std::fmt::Write as _;
use std::path::Path;

use log::{info, warn};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{em_refine, fit_mixture, Constraint, EmConfig, FitResult};
use crate::evaluation::{best_assignment, MAX_CLASSES};
use crate::model::{map_labels, posterior_matrix, CovarianceStructure, DataMatrix, MixtureParams, PreparedMixture};
use crate::rng::{self, Rng};
use crate::selection::{abstain_all, select_and_label, CumulativeOrder, SelectionRule, SelectiveClustering};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BootstrapMode {
    /// Draw from the fitted mixture.
    Parametric,
    /// Draw rows of the data uniformly with replacement.
    NonParametric,
}

/// How the parameter is re-estimated on each resample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Refit {
    /// `iters` EM iterations from the original fit, single start.
    WarmStart { iters: usize },
    /// Complete multi-start fit with the given settings (seed overridden per resample).
    FullRefit(EmConfig),
}

impl Default for Refit {
    fn default() -> Self {
        Refit::WarmStart { iters: 20 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapConfig {
    pub mode: BootstrapMode,
    pub b: usize,
    /// Explicit increasing levels; when absent the grid is
    /// `alpha * grid_max_factor * k / grid_points`, `k = 1..=grid_points`.
    pub grid: Option<Vec<f64>>,
    pub grid_points: usize,
    pub grid_max_factor: f64,
    pub refit: Refit,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            mode: BootstrapMode::Parametric,
            b: 1000,
            grid: None,
            grid_points: 25,
            grid_max_factor: 1.0,
            refit: Refit::default(),
            seed: 0,
        }
    }
}

impl BootstrapConfig {
    pub fn with_mode(mut self, mode: BootstrapMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_b(mut self, b: usize) -> Self {
        self.b = b;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.b == 0 {
            return Err(Error::InvalidConfig("bootstrap needs at least one resample".into()));
        }
        if self.grid.is_none() && (self.grid_points == 0 || !(self.grid_max_factor > 0.0)) {
            return Err(Error::InvalidConfig("grid_points and grid_max_factor must be positive".into()));
        }
        if let Refit::FullRefit(cfg) = &self.refit {
            cfg.validate()?;
        }
        Ok(())
    }

    /// The level grid used for target `alpha`.
    pub fn levels(&self, alpha: f64) -> Result<Vec<f64>> {
        let levels = match &self.grid {
            Some(g) => g.clone(),
            None => {
                let top = alpha * self.grid_max_factor;
                (1..=self.grid_points).map(|k| top * k as f64 / self.grid_points as f64).collect()
            }
        };
        if levels.is_empty() {
            return Err(Error::InvalidConfig("empty level grid".into()));
        }
        if let Some(&bad) = levels.iter().find(|&&a| !(a > 0.0 && a < 1.0)) {
            return Err(Error::InvalidLevel(bad));
        }
        if levels.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidConfig("level grid must be strictly increasing".into()));
        }
        Ok(levels)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BootstrapCurve {
    pub levels: Vec<f64>,
    pub fcr_hat: Vec<f64>,
    /// Index (0-based) of the largest level whose estimate is at most `alpha`.
    pub chosen_index: Option<usize>,
    pub alpha: f64,
    pub b: usize,
    /// Resamples whose refit failed once and were retried.
    pub retries: usize,
    /// Resamples whose retry also failed; these reuse the original fit.
    pub fallbacks: usize,
}

impl BootstrapCurve {
    pub fn chosen_level(&self) -> Option<f64> {
        self.chosen_index.map(|k| self.levels[k])
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["level", "fcr_hat"])?;
        for (a, f) in self.levels.iter().zip(&self.fcr_hat) {
            w.write_record([a.to_string(), f.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<bootstrap curve csv>", e))
    }

    pub fn write_csv_file(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(file)
    }

    /// Plain-text summary of the calibration.
    pub fn report(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "target level: {}", self.alpha);
        let _ = writeln!(s, "resamples: {}", self.b);
        let _ = writeln!(
            s,
            "grid: {} levels in [{}, {}]",
            self.levels.len(),
            self.levels[0],
            self.levels[self.levels.len() - 1]
        );
        match self.chosen_index {
            Some(k) => {
                let _ = writeln!(s, "chosen level: {} (index {k}, estimated FCR {})", self.levels[k], self.fcr_hat[k]);
            }
            None => {
                let _ = writeln!(s, "chosen level: none (no grid level has estimated FCR <= target); nothing selected");
            }
        }
        let _ = writeln!(s, "refit retries: {}", self.retries);
        let _ = writeln!(s, "refit failures reusing the original fit: {}", self.fallbacks);
        s
    }
}

/// Largest index `k` with `fcr_hat[k] <= alpha`.
pub fn chosen_index(fcr_hat: &[f64], alpha: f64) -> Option<usize> {
    fcr_hat.iter().rposition(|&f| f <= alpha)
}

/// Draws one bootstrap sample of the same size as `data`.
pub fn resample(data: &DataMatrix, theta_hat: &MixtureParams, mode: BootstrapMode, rng: &mut Rng) -> DataMatrix {
    let n = data.n();
    match mode {
        BootstrapMode::Parametric => crate::model::sample_mixture(theta_hat, n, rng).1,
        BootstrapMode::NonParametric => {
            if n == 0 {
                return DataMatrix::empty(data.d());
            }
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            data.select_rows(&idx)
        }
    }
}

/// Estimated FCR of the cumulative plug-in on `resampled` at each of the
/// increasing `levels`, given the refitted parameter `theta_b` and the
/// reference parameter `theta_hat`.
pub fn resample_fcr_curve(
    resampled: &DataMatrix,
    theta_hat: &MixtureParams,
    theta_b: &MixtureParams,
    levels: &[f64],
) -> Result<Vec<f64>> {
    let q = theta_hat.q();
    if theta_b.q() != q {
        return Err(Error::InvalidParams(format!("refit has {} components, expected {q}", theta_b.q())));
    }
    if q > MAX_CLASSES {
        return Err(Error::TooManyClasses(q));
    }
    let post_b = posterior_matrix(theta_b, resampled)?;
    let labels = map_labels(&post_b);
    let reference = posterior_matrix(theta_hat, resampled)?;
    let order = CumulativeOrder::new(post_b.t_values());

    // score[p][r]: summed reference probability of class r over selected
    // items labelled p; the cost of σ is |S| minus Σ_p score[p][σ(p)].
    let mut score = vec![0.0; q * q];
    let mut taken = 0;
    let mut out = Vec::with_capacity(levels.len());
    for &level in levels {
        let k = order.k_star(level);
        for &i in &order.order()[taken..k] {
            let row = reference.row(i);
            let p = labels[i];
            for r in 0..q {
                score[p * q + r] += row[r];
            }
        }
        taken = k;
        if k == 0 {
            out.push(0.0);
            continue;
        }
        let (_, best) = best_assignment(&score, q)?;
        out.push(((k as f64 - best) / k as f64).clamp(0.0, 1.0));
    }
    Ok(out)
}

struct ResampleOutcome {
    curve: Vec<f64>,
    retried: bool,
    fell_back: bool,
}

fn refit_constraint(theta_hat: &MixtureParams) -> Constraint {
    match theta_hat.structure() {
        CovarianceStructure::Known => Constraint::known_from(theta_hat),
        s => Constraint::new(s),
    }
}

fn refit_once(xb: &DataMatrix, theta_hat: &MixtureParams, refit: &Refit, seed: u64) -> Result<FitResult> {
    match refit {
        Refit::WarmStart { iters } => {
            let cfg = EmConfig {
                n_starts: 1,
                family: theta_hat.components()[0].family(),
                constraint: refit_constraint(theta_hat),
                seed,
                ..EmConfig::default()
            };
            em_refine(xb, theta_hat, &cfg, *iters)
        }
        Refit::FullRefit(cfg) => {
            let cfg = EmConfig { seed, ..cfg.clone() };
            fit_mixture(xb, theta_hat.q(), &cfg)
        }
    }
}

fn one_resample(
    data: &DataMatrix,
    theta_hat: &MixtureParams,
    levels: &[f64],
    cfg: &BootstrapConfig,
    b: usize,
) -> Result<ResampleOutcome> {
    let b = b as u64;
    let xb = resample(data, theta_hat, cfg.mode, &mut rng::stream(cfg.seed, &[b]));
    let (theta_b, retried, fell_back) =
        match refit_once(&xb, theta_hat, &cfg.refit, rng::derive_seed(cfg.seed, &[b, 1])) {
            Ok(fit) => (fit.params, false, false),
            Err(e) => {
                warn!("resample {b}: refit failed ({e}); retrying with a fresh seed");
                match refit_once(&xb, theta_hat, &cfg.refit, rng::derive_seed(cfg.seed, &[b, 2])) {
                    Ok(fit) => (fit.params, true, false),
                    Err(e) => {
                        warn!("resample {b}: retry failed ({e}); scoring with the original fit");
                        (theta_hat.clone(), true, true)
                    }
                }
            }
        };
    let curve = resample_fcr_curve(&xb, theta_hat, &theta_b, levels)?;
    Ok(ResampleOutcome { curve, retried, fell_back })
}

fn bootstrap_curve(
    data: &DataMatrix,
    theta_hat: &MixtureParams,
    levels: &[f64],
    cfg: &BootstrapConfig,
) -> Result<(Vec<f64>, usize, usize)> {
    cfg.validate()?;
    if data.d() != theta_hat.dim() {
        return Err(Error::DimensionMismatch { expected: theta_hat.dim(), got: data.d() });
    }
    if theta_hat.q() > MAX_CLASSES {
        return Err(Error::TooManyClasses(theta_hat.q()));
    }
    // fail fast on parameters that cannot be evaluated
    let _: PreparedMixture = theta_hat.prepare();
    let outcomes: Vec<Result<ResampleOutcome>> =
        (0..cfg.b).into_par_iter().map(|b| one_resample(data, theta_hat, levels, cfg, b)).collect();
    let mut sums = vec![0.0; levels.len()];
    let (mut retries, mut fallbacks) = (0, 0);
    for outcome in outcomes {
        let o = outcome?;
        for (s, v) in sums.iter_mut().zip(&o.curve) {
            *s += v;
        }
        retries += o.retried as usize;
        fallbacks += o.fell_back as usize;
    }
    let b = cfg.b as f64;
    Ok((sums.into_iter().map(|s| s / b).collect(), retries, fallbacks))
}

/// Bootstrap estimate of the FCR of the cumulative plug-in at level `alpha_prime`.
pub fn bootstrap_fcr(
    data: &DataMatrix,
    theta_hat: &MixtureParams,
    alpha_prime: f64,
    cfg: &BootstrapConfig,
) -> Result<f64> {
    if !(alpha_prime > 0.0 && alpha_prime < 1.0) {
        return Err(Error::InvalidLevel(alpha_prime));
    }
    Ok(bootstrap_curve(data, theta_hat, &[alpha_prime], cfg)?.0[0])
}

/// Estimates the plug-in FCR over the level grid and picks the largest level
/// whose estimate does not exceed `alpha`.
pub fn calibrate_level(
    data: &DataMatrix,
    theta_hat: &MixtureParams,
    alpha: f64,
    cfg: &BootstrapConfig,
) -> Result<BootstrapCurve> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidLevel(alpha));
    }
    let levels = cfg.levels(alpha)?;
    let (fcr_hat, retries, fallbacks) = bootstrap_curve(data, theta_hat, &levels, cfg)?;
    let chosen = chosen_index(&fcr_hat, alpha);
    if retries > 0 {
        warn!("{retries} of {} resample refits were retried ({fallbacks} reused the original fit)", cfg.b);
    }
    match chosen {
        Some(k) => info!("calibrated level {} (estimated FCR {}) for target {alpha}", levels[k], fcr_hat[k]),
        None => info!("no grid level meets target {alpha}; abstaining on every item"),
    }
    Ok(BootstrapCurve { levels, fcr_hat, chosen_index: chosen, alpha, b: cfg.b, retries, fallbacks })
}

/// Fit, posterior and cumulative selection at `alpha`.
#[derive(Clone, Debug)]
pub struct PlugInOutcome {
    pub fit: FitResult,
    pub clustering: SelectiveClustering,
}

/// The plug-in procedure: fit the mixture, then apply the cumulative rule to the
/// fitted posterior.
pub fn plug_in_procedure(data: &DataMatrix, q: usize, alpha: f64, em_cfg: &EmConfig) -> Result<PlugInOutcome> {
    let fit = fit_mixture(data, q, em_cfg)?;
    let post = posterior_matrix(&fit.params, data)?;
    let clustering = select_and_label(&post, alpha, SelectionRule::Cumulative)?;
    Ok(PlugInOutcome { fit, clustering })
}

#[derive(Clone, Debug)]
pub struct BootstrapOutcome {
    pub fit: FitResult,
    pub curve: BootstrapCurve,
    pub clustering: SelectiveClustering,
}

/// Plug-in procedure run at the bootstrap-calibrated level; MAP labels with an
/// empty selection when no grid level is admissible.
pub fn bootstrap_procedure(
    data: &DataMatrix,
    q: usize,
    alpha: f64,
    em_cfg: &EmConfig,
    boot_cfg: &BootstrapConfig,
) -> Result<BootstrapOutcome> {
    let fit = fit_mixture(data, q, em_cfg)?;
    bootstrap_from_fit(data, fit, alpha, boot_cfg)
}

/// [`bootstrap_procedure`] reusing an existing fit of `data`.
pub fn bootstrap_from_fit(
    data: &DataMatrix,
    fit: FitResult,
    alpha: f64,
    boot_cfg: &BootstrapConfig,
) -> Result<BootstrapOutcome> {
    let curve = calibrate_level(data, &fit.params, alpha, boot_cfg)?;
    let post = posterior_matrix(&fit.params, data)?;
    let mut clustering = match curve.chosen_level() {
        Some(level) => select_and_label(&post, level, SelectionRule::Cumulative)?,
        None => abstain_all(&post, alpha),
    };
    clustering.alpha = alpha;
    Ok(BootstrapOutcome { fit, curve, clustering })
}

#[cfg(test)]
mod tests {
    use nalgebra::DMatrix;

    use super::*;
    use crate::model::{sample_mixture, ComponentParams};

    fn pair(eps: f64) -> MixtureParams {
        MixtureParams::gaussian(
            vec![0.5, 0.5],
            &[vec![0.0, 0.0], vec![eps / 2f64.sqrt(), eps / 2f64.sqrt()]],
            &[DMatrix::identity(2, 2), DMatrix::identity(2, 2)],
            CovarianceStructure::Diagonal,
        )
        .unwrap()
    }

    fn em() -> EmConfig {
        EmConfig { n_starts: 3, max_iter: 50, ..EmConfig::default() }.with_structure(CovarianceStructure::Diagonal)
    }

    #[test]
    fn nonparametric_single_row_repeats() {
        let data = DataMatrix::from_rows(&[[1.5, -2.0]]).unwrap();
        let out = resample(&data, &pair(1.0), BootstrapMode::NonParametric, &mut rng::stream(0, &[]));
        assert_eq!(out.values(), &[1.5, -2.0]);
    }

    #[test]
    fn parametric_with_degenerate_weight_uses_one_component() {
        let theta = MixtureParams::gaussian(
            vec![1.0, 0.0],
            &[vec![0.0], vec![1000.0]],
            &[DMatrix::identity(1, 1), DMatrix::identity(1, 1)],
            CovarianceStructure::Full,
        )
        .unwrap();
        let data = DataMatrix::from_rows(&vec![[0.0]; 500]).unwrap();
        let out = resample(&data, &theta, BootstrapMode::Parametric, &mut rng::stream(1, &[]));
        assert!(out.values().iter().all(|v| v.abs() < 10.0));
    }

    #[test]
    fn nonparametric_frequencies_are_balanced() {
        let data = DataMatrix::from_rows(&[[0.0], [1.0]]).unwrap();
        let big = data.select_rows(&(0..10_000).map(|i| i % 2).collect::<Vec<_>>());
        let out = resample(
            &big,
            &pair(1.0).relabel(&[0, 1]).unwrap(),
            BootstrapMode::NonParametric,
            &mut rng::stream(2, &[]),
        );
        let ones = out.values().iter().filter(|&&v| v == 1.0).count() as f64 / 10_000.0;
        assert!((ones - 0.5).abs() < 0.02);
    }

    #[test]
    fn single_component_estimate_is_zero() {
        let theta = MixtureParams::new(
            vec![1.0],
            vec![ComponentParams::gaussian(&[0.0, 0.0], DMatrix::identity(2, 2)).unwrap()],
            CovarianceStructure::Full,
        )
        .unwrap();
        let (_, data) = sample_mixture(&theta, 50, &mut rng::stream(3, &[]));
        let cfg = BootstrapConfig::default().with_b(20);
        for a in [0.01, 0.2, 0.6] {
            assert_eq!(bootstrap_fcr(&data, &theta, a, &cfg).unwrap(), 0.0);
        }
    }

    #[test]
    fn identity_resample_reproduces_plug_in_bound() {
        let theta = pair(1.5);
        let (_, data) = sample_mixture(&theta, 120, &mut rng::stream(4, &[]));
        let alpha = 0.1;
        let curve = resample_fcr_curve(&data, &theta, &theta, &[alpha]).unwrap();
        let post = posterior_matrix(&theta, &data).unwrap();
        let sel = crate::selection::cumulative_select(post.t_values(), alpha).unwrap();
        let direct = sel.selected.iter().map(|&i| post.t_values()[i]).sum::<f64>() / sel.selected.len() as f64;
        assert!((curve[0] - direct).abs() < 1e-12, "{} vs {direct}", curve[0]);
        // warm start with zero iterations leaves the fit unchanged
        let refit = refit_once(&data, &theta, &Refit::WarmStart { iters: 0 }, 9).unwrap();
        assert_eq!(refit.params, theta);
    }

    #[test]
    fn well_separated_estimate_is_small() {
        let truth = pair(4.0);
        let (_, data) = sample_mixture(&truth, 200, &mut rng::stream(5, &[]));
        let fit = fit_mixture(&data, 2, &em()).unwrap();
        let cfg = BootstrapConfig::default().with_b(100).with_seed(5);
        let v = bootstrap_fcr(&data, &fit.params, 0.1, &cfg).unwrap();
        assert!(v < 0.05, "{v}");
    }

    #[test]
    fn scan_picks_largest_admissible_index() {
        assert_eq!(chosen_index(&[0.04, 0.08, 0.12], 0.1), Some(1));
        assert_eq!(chosen_index(&[0.01, 0.02], 0.1), Some(1));
        assert_eq!(chosen_index(&[0.2, 0.3], 0.1), None);
    }

    #[test]
    fn curve_is_monotone_reproducible_and_respects_target() {
        let truth = pair(1.0);
        let (_, data) = sample_mixture(&truth, 150, &mut rng::stream(6, &[]));
        let fit = fit_mixture(&data, 2, &em()).unwrap();
        for mode in [BootstrapMode::Parametric, BootstrapMode::NonParametric] {
            let cfg = BootstrapConfig::default().with_b(40).with_seed(11).with_mode(mode);
            let a = calibrate_level(&data, &fit.params, 0.1, &cfg).unwrap();
            let b = calibrate_level(&data, &fit.params, 0.1, &cfg).unwrap();
            assert_eq!(a, b);
            assert!(a.fcr_hat.windows(2).all(|w| w[1] >= w[0] - 1e-12), "{:?}", a.fcr_hat);
            assert!(a.fcr_hat.iter().all(|&f| (0.0..=0.5).contains(&f)));
            if let Some(k) = a.chosen_index {
                assert!(a.fcr_hat[k] <= 0.1);
                assert!(a.fcr_hat[k + 1..].iter().all(|&f| f > 0.1));
            }
        }
    }

    #[test]
    fn single_level_grid_matches_plug_in() {
        let truth = pair(4.0);
        let (_, data) = sample_mixture(&truth, 150, &mut rng::stream(7, &[]));
        let cfg = BootstrapConfig { grid: Some(vec![0.1]), b: 30, ..BootstrapConfig::default() };
        let boot = bootstrap_procedure(&data, 2, 0.1, &em(), &cfg).unwrap();
        let plug = plug_in_procedure(&data, 2, 0.1, &em()).unwrap();
        assert_eq!(boot.curve.chosen_index, Some(0));
        assert_eq!(boot.clustering.selection, plug.clustering.selection);
        assert_eq!(boot.clustering.labels, plug.clustering.labels);
    }

    #[test]
    fn invalid_grids_are_rejected() {
        let mut cfg = BootstrapConfig { grid: Some(vec![0.1, 0.05]), ..BootstrapConfig::default() };
        assert!(cfg.levels(0.1).is_err());
        cfg.grid = Some(vec![0.0, 0.05]);
        assert!(cfg.levels(0.1).is_err());
        cfg.grid = None;
        cfg.b = 0;
        assert!(cfg.validate().is_err());
        let levels = BootstrapConfig::default().levels(0.1).unwrap();
        assert_eq!(levels.len(), 25);
        assert!((levels[24] - 0.1).abs() < 1e-15 && (levels[0] - 0.004).abs() < 1e-15);
    }
}
