use nalgebra::DVector;
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::model::{Family, MixtureParams};

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

fn check_pair(theta: &MixtureParams, name: &str) -> Result<()> {
    if theta.q() != 2 {
        return Err(Error::Unsupported(format!("{name}: two components required, got {}", theta.q())));
    }
    if theta.components().iter().any(|c| c.family() != Family::Gaussian) {
        return Err(Error::Unsupported(format!("{name}: Gaussian components required")));
    }
    if theta.components()[0].scatter() != theta.components()[1].scatter() {
        return Err(Error::Unsupported(format!("{name}: components must share one covariance matrix")));
    }
    Ok(())
}

/// Exact `P_{θ*}(T(X, θ) > t)` when `θ` and `θ*` are both two-component
/// Gaussian mixtures with a shared covariance matrix.
///
/// Under such `θ`, twice the log posterior odds is the affine statistic
/// `aᵀX + b` with `a = 2Σ⁻¹(μ₁ − μ₂)` and
/// `b = −(μ₁ − μ₂)ᵀΣ⁻¹(μ₁ + μ₂) + 2 ln(π₁/π₂)`, and `T > t` exactly when
/// `|aᵀX + b| < 2 ln(1/t − 1)`. Under `θ*` the statistic is a two-component
/// univariate normal mixture.
pub fn gaussian_t_tail(theta: &MixtureParams, theta_star: &MixtureParams, t: f64) -> Result<f64> {
    check_pair(theta, "theta")?;
    check_pair(theta_star, "theta_star")?;
    if theta.dim() != theta_star.dim() {
        return Err(Error::DimensionMismatch { expected: theta.dim(), got: theta_star.dim() });
    }
    if t <= 0.0 {
        return Ok(1.0);
    }
    if t >= 0.5 {
        return Ok(0.0);
    }
    let c = theta.components();
    let (m1, m2) = (c[0].mean(), c[1].mean());
    let chol =
        c[0].scatter().clone().cholesky().ok_or_else(|| Error::NotPositiveDefinite("theta covariance".into()))?;
    let diff: DVector<f64> = m1 - m2;
    let a = chol.solve(&diff) * 2.0;
    let w = theta.weights();
    let b = -(diff.dot(&chol.solve(&(m1 + m2)))) + 2.0 * (w[0] / w[1]).ln();
    let s_star = theta_star.components()[0].scatter();
    let sd = (a.dot(&(s_star * &a))).sqrt();
    let half_width = 2.0 * (1.0 / t - 1.0).ln();
    let tail = theta_star
        .weights()
        .iter()
        .zip(theta_star.components())
        .map(|(pi, comp)| {
            let center = a.dot(comp.mean()) + b;
            pi * (std_normal_cdf((half_width - center) / sd) - std_normal_cdf((-half_width - center) / sd))
        })
        .sum::<f64>();
    Ok(tail.clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use nalgebra::DMatrix;

    use super::*;
    use crate::evaluation::TSample;
    use crate::model::CovarianceStructure;
    use crate::rng;

    fn pair(mu2: Vec<f64>, cov: DMatrix<f64>, w: f64) -> MixtureParams {
        let d = mu2.len();
        MixtureParams::gaussian(vec![w, 1.0 - w], &[vec![0.0; d], mu2], &[cov.clone(), cov], CovarianceStructure::Full)
            .unwrap()
    }

    #[test]
    fn boundaries() {
        let theta = pair(vec![2.0], DMatrix::identity(1, 1), 0.5);
        assert!((gaussian_t_tail(&theta, &theta, 1e-12).unwrap() - 1.0).abs() < 1e-3);
        assert_eq!(gaussian_t_tail(&theta, &theta, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn matches_monte_carlo_frequency() {
        let theta = pair(vec![2.0], DMatrix::identity(1, 1), 0.5);
        let sample = TSample::draw(&theta, &theta, 100_000, &mut rng::stream(1, &[])).unwrap();
        let exact = gaussian_t_tail(&theta, &theta, 0.2).unwrap();
        assert!((exact - sample.tail(0.2)).abs() < 0.01);
    }

    #[test]
    fn mismatched_parameter_and_truth() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 2.0]);
        let theta = pair(vec![1.0, 1.5], cov.clone(), 0.4);
        let truth = pair(vec![1.2, 1.0], cov * 1.5, 0.55);
        let sample = TSample::draw(&theta, &truth, 100_000, &mut rng::stream(2, &[])).unwrap();
        for t in [0.05, 0.15, 0.3, 0.45] {
            let exact = gaussian_t_tail(&theta, &truth, t).unwrap();
            assert!((exact - sample.tail(t)).abs() < 0.01, "t={t}: {exact} vs {}", sample.tail(t));
        }
    }

    #[test]
    fn non_increasing_in_t() {
        let theta = pair(vec![1.0, 1.0], DMatrix::identity(2, 2), 0.3);
        let vals: Vec<f64> = (1..100).map(|k| gaussian_t_tail(&theta, &theta, k as f64 / 100.0).unwrap()).collect();
        assert!(vals.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn rejects_unequal_covariances() {
        let theta = MixtureParams::gaussian(
            vec![0.5, 0.5],
            &[vec![0.0], vec![1.0]],
            &[DMatrix::identity(1, 1), DMatrix::identity(1, 1) * 2.0],
            CovarianceStructure::Full,
        )
        .unwrap();
        assert!(matches!(gaussian_t_tail(&theta, &theta, 0.1), Err(Error::Unsupported(_))));
    }
}
