//! Monte-Carlo estimates of population quantities at a known parameter: the
//! clustering risk, the marginal FCR of thresholding `T` at `t`, the optimal
//! threshold `t*(alpha)` and the admissible level range `(alpha_c, alpha_bar)`.

use serde::Serialize;

use super::permutation::best_permutation;
use crate::error::{Error, Result};
use crate::model::{map_labels, posterior_matrix, risk_statistic, sample_mixture, DataMatrix, Family, MixtureParams};
use crate::rng::Rng;

/// Bisection tolerance on `t` for [`t_star_mc`].
pub const T_STAR_TOL: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub standard_error: f64,
    pub mc_size: usize,
}

impl McEstimate {
    pub fn from_values(values: &[f64]) -> Self {
        let m = values.len();
        if m == 0 {
            return Self { estimate: 0.0, standard_error: 0.0, mc_size: 0 };
        }
        let mean = values.iter().sum::<f64>() / m as f64;
        let var =
            if m > 1 { values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1) as f64 } else { 0.0 };
        Self { estimate: mean, standard_error: (var / m as f64).sqrt(), mc_size: m }
    }
}

/// Bayes (MAP) clustering under a fixed parameter.
pub fn bayes_rule(theta: &MixtureParams) -> impl Fn(&DataMatrix) -> Result<Vec<usize>> + '_ {
    move |data| Ok(map_labels(&posterior_matrix(theta, data)?))
}

/// Average over `reps` simulated samples of size `n` of the misclassification
/// proportion of `rule`, minimized over label permutations.
pub fn clustering_risk_mc<F>(
    theta_star: &MixtureParams,
    rule: F,
    n: usize,
    reps: usize,
    rng: &mut Rng,
) -> Result<McEstimate>
where
    F: Fn(&DataMatrix) -> Result<Vec<usize>>,
{
    let all: Vec<usize> = (0..n).collect();
    let mut values = Vec::with_capacity(reps);
    for _ in 0..reps {
        let (truth, data) = sample_mixture(theta_star, n, rng);
        let pred = rule(&data)?;
        let (_, errors) = best_permutation(&truth, &pred, &all, theta_star.q())?;
        values.push(errors as f64 / n.max(1) as f64);
    }
    Ok(McEstimate::from_values(&values))
}

/// Sorted Monte-Carlo draws of `T(X, theta_eval)` with `X ~ P_{theta_true}`.
#[derive(Clone, Debug)]
pub struct TSample {
    sorted: Vec<f64>,
    prefix: Vec<f64>,
    prefix_sq: Vec<f64>,
}

impl TSample {
    pub fn draw(theta_eval: &MixtureParams, theta_true: &MixtureParams, mc_size: usize, rng: &mut Rng) -> Result<Self> {
        if theta_eval.dim() != theta_true.dim() {
            return Err(Error::DimensionMismatch { expected: theta_eval.dim(), got: theta_true.dim() });
        }
        let mut values = Vec::with_capacity(mc_size);
        let chunk = 65_536;
        let mut remaining = mc_size;
        while remaining > 0 {
            let m = remaining.min(chunk);
            let (_, data) = sample_mixture(theta_true, m, rng);
            values.extend_from_slice(posterior_matrix(theta_eval, &data)?.t_values());
            remaining -= m;
        }
        Ok(Self::from_values(values))
    }

    pub fn from_values(mut values: Vec<f64>) -> Self {
        values.sort_by(f64::total_cmp);
        let mut prefix = Vec::with_capacity(values.len() + 1);
        let mut prefix_sq = Vec::with_capacity(values.len() + 1);
        let (mut s, mut s2) = (0.0, 0.0);
        prefix.push(0.0);
        prefix_sq.push(0.0);
        for &v in &values {
            s += v;
            s2 += v * v;
            prefix.push(s);
            prefix_sq.push(s2);
        }
        Self { sorted: values, prefix, prefix_sq }
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.sorted
    }

    /// Empirical `P(T > t)`.
    pub fn tail(&self, t: f64) -> f64 {
        let above = self.sorted.len() - self.sorted.partition_point(|&v| v <= t);
        above as f64 / self.sorted.len().max(1) as f64
    }

    /// Empirical `E(T | T < t)`, `0` when no draw falls below `t`.
    pub fn mfcr(&self, t: f64) -> McEstimate {
        let m = self.sorted.partition_point(|&v| v < t);
        if m == 0 {
            return McEstimate { estimate: 0.0, standard_error: 0.0, mc_size: 0 };
        }
        let mf = m as f64;
        let mean = self.prefix[m] / mf;
        let var = if m > 1 { ((self.prefix_sq[m] - mf * mean * mean) / (mf - 1.0)).max(0.0) } else { 0.0 };
        McEstimate { estimate: mean, standard_error: (var / mf).sqrt(), mc_size: m }
    }

    /// `sup { t in [0, 1] : mfcr(t) <= alpha }` by bisection to [`T_STAR_TOL`].
    pub fn t_star(&self, alpha: f64) -> f64 {
        if self.mfcr(1.0).estimate <= alpha {
            return 1.0;
        }
        let (mut lo, mut hi) = (0.0, 1.0);
        while hi - lo > T_STAR_TOL {
            let mid = 0.5 * (lo + hi);
            if self.mfcr(mid).estimate <= alpha {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }
}

/// `E(T(X, θ*) | T(X, θ*) < t)` by Monte Carlo with `0/0 = 0`.
pub fn mfcr_oracle_mc(theta_star: &MixtureParams, t: f64, mc_size: usize, rng: &mut Rng) -> Result<McEstimate> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::InvalidParams(format!("threshold {t} outside (0, 1]")));
    }
    Ok(TSample::draw(theta_star, theta_star, mc_size, rng)?.mfcr(t))
}

/// Two Gaussian components sharing one covariance matrix.
pub fn is_homoscedastic_gaussian_pair(theta: &MixtureParams) -> bool {
    theta.q() == 2
        && theta.components().iter().all(|c| c.family() == Family::Gaussian)
        && theta.components()[0].scatter() == theta.components()[1].scatter()
}

/// Default threshold grid `k / 100`, `k = 1..=100`.
pub fn default_t_grid() -> Vec<f64> {
    (1..=100).map(|k| k as f64 / 100.0).collect()
}

fn alpha_c_estimate(theta: &MixtureParams, sample: &TSample, t_grid: &[f64]) -> f64 {
    if is_homoscedastic_gaussian_pair(theta) {
        return 0.0;
    }
    t_grid
        .iter()
        .map(|&t| sample.mfcr(t).estimate)
        .filter(|&v| v > 0.0)
        .fold(f64::INFINITY, f64::min)
        .min(sample.mfcr(1.0).estimate)
}

/// Optimal oracle threshold `t*(alpha)`, estimated on one Monte-Carlo sample.
pub fn t_star_mc(theta_star: &MixtureParams, alpha: f64, mc_size: usize, rng: &mut Rng) -> Result<f64> {
    let sample = TSample::draw(theta_star, theta_star, mc_size, rng)?;
    let alpha_bar = sample.mfcr(1.0).estimate;
    let alpha_c = alpha_c_estimate(theta_star, &sample, &default_t_grid());
    if alpha >= alpha_bar {
        return Ok(1.0);
    }
    if alpha <= alpha_c {
        return Err(Error::LevelOutOfRange { alpha, alpha_c, alpha_bar });
    }
    Ok(sample.t_star(alpha))
}

#[derive(Clone, Debug, Serialize)]
pub struct OracleCurve {
    pub t_grid: Vec<f64>,
    pub mfcr_values: Vec<McEstimate>,
    pub alpha: f64,
    /// `None` when `alpha` is at or below `alpha_c`.
    pub t_star: Option<f64>,
    pub alpha_c: f64,
    pub alpha_bar: f64,
    pub mc_size: usize,
}

impl OracleCurve {
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "mfcr", "standard_error", "mc_size"])?;
        for (t, v) in self.t_grid.iter().zip(&self.mfcr_values) {
            w.write_record([
                t.to_string(),
                v.estimate.to_string(),
                v.standard_error.to_string(),
                v.mc_size.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<oracle curve csv>", e))
    }
}

/// Evaluates the oracle mFCR curve on `t_grid` from a single sample of size
/// `mc_size`, so the curve is exactly monotone in `t`.
pub fn oracle_curve(
    theta_star: &MixtureParams,
    alpha: f64,
    t_grid: &[f64],
    mc_size: usize,
    rng: &mut Rng,
) -> Result<OracleCurve> {
    let sample = TSample::draw(theta_star, theta_star, mc_size, rng)?;
    let alpha_bar = sample.mfcr(1.0).estimate;
    let alpha_c = alpha_c_estimate(theta_star, &sample, t_grid);
    let t_star = if alpha >= alpha_bar {
        Some(1.0)
    } else if alpha <= alpha_c {
        None
    } else {
        Some(sample.t_star(alpha))
    };
    Ok(OracleCurve {
        t_grid: t_grid.to_vec(),
        mfcr_values: t_grid.iter().map(|&t| sample.mfcr(t)).collect(),
        alpha,
        t_star,
        alpha_c,
        alpha_bar,
        mc_size,
    })
}

/// Sum of `T` over the selection divided by `max(|S|, 1)`.
pub fn selection_risk(t_values: &[f64], selected: &[usize]) -> f64 {
    selected.iter().map(|&i| t_values[i]).sum::<f64>() / selected.len().max(1) as f64
}

/// `T` for one posterior row; re-exported for callers that work row by row.
pub fn t_of_row(row: &[f64]) -> f64 {
    risk_statistic(row)
}
