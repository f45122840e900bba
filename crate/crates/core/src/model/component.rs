//! Single mixture components: multivariate Gaussian and Student-t with a fixed
//! number of degrees of freedom. All densities are evaluated in log space.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng as _;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Degrees of freedom used for Student-t components unless configured otherwise.
pub const DEFAULT_DOF: f64 = 4.0;

/// Relative eigenvalue floor: eigenvalues below `EIGEN_FLOOR * trace / d` are
/// raised to that value before a scatter matrix is factorized.
pub const EIGEN_FLOOR: f64 = 1e-8;

const SYMMETRY_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Family {
    Gaussian,
    StudentT { dof: f64 },
}

impl Family {
    pub fn student(dof: f64) -> Self {
        Family::StudentT { dof }
    }

    pub fn dof(&self) -> Option<f64> {
        match *self {
            Family::Gaussian => None,
            Family::StudentT { dof } => Some(dof),
        }
    }
}

/// Location, scatter and family of one component. The scatter is the
/// covariance for a Gaussian and the scale matrix for a Student-t.
#[derive(Clone, Debug, PartialEq)]
pub struct ComponentParams {
    family: Family,
    mean: DVector<f64>,
    scatter: DMatrix<f64>,
}

impl ComponentParams {
    pub fn new(family: Family, mean: DVector<f64>, scatter: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(Error::InvalidParams("component dimension must be at least 1".into()));
        }
        if scatter.nrows() != d || scatter.ncols() != d {
            return Err(Error::DimensionMismatch { expected: d, got: scatter.nrows() });
        }
        if let Family::StudentT { dof } = family {
            if !(dof.is_finite() && dof > 2.0) {
                return Err(Error::InvalidParams(format!("Student-t dof must exceed 2, got {dof}")));
            }
        }
        if mean.iter().chain(scatter.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("non-finite mean or scatter entry".into()));
        }
        check_spd(&scatter)?;
        Ok(Self { family, mean, scatter })
    }

    pub fn gaussian(mean: &[f64], covariance: DMatrix<f64>) -> Result<Self> {
        Self::new(Family::Gaussian, DVector::from_column_slice(mean), covariance)
    }

    pub fn student_t(mean: &[f64], scale: DMatrix<f64>, dof: f64) -> Result<Self> {
        Self::new(Family::StudentT { dof }, DVector::from_column_slice(mean), scale)
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn scatter(&self) -> &DMatrix<f64> {
        &self.scatter
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn prepare(&self) -> PreparedComponent {
        PreparedComponent::new(self)
    }

    /// Draws one observation from this component.
    pub fn sample_into(&self, prepared: &PreparedComponent, rng: &mut Rng, out: &mut [f64]) {
        prepared.sample_into(rng, out);
    }
}

fn check_spd(scatter: &DMatrix<f64>) -> Result<()> {
    let scale = scatter.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let d = scatter.nrows();
    for i in 0..d {
        for j in 0..i {
            if (scatter[(i, j)] - scatter[(j, i)]).abs() > SYMMETRY_TOL * scale {
                return Err(Error::NotPositiveDefinite(format!("entries ({i},{j}) and ({j},{i}) differ")));
            }
        }
    }
    let eig = SymmetricEigen::new(scatter.clone());
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(min > 0.0) {
        return Err(Error::NotPositiveDefinite(format!("smallest eigenvalue {min:e}")));
    }
    Ok(())
}

/// Raises eigenvalues below `EIGEN_FLOOR * trace / d`. Returns the input
/// unchanged (bit for bit) when no eigenvalue needs adjusting.
pub fn floor_eigenvalues(scatter: &DMatrix<f64>) -> DMatrix<f64> {
    let d = scatter.nrows();
    let sym = (scatter + scatter.transpose()) * 0.5;
    let trace = sym.trace();
    let floor = if trace > 0.0 && trace.is_finite() { EIGEN_FLOOR * trace / d as f64 } else { EIGEN_FLOOR };
    let eig = SymmetricEigen::new(sym);
    if eig.eigenvalues.iter().all(|&l| l >= floor) {
        return scatter.clone();
    }
    let clamped = eig.eigenvalues.map(|l| l.max(floor));
    let v = &eig.eigenvectors;
    let m = v * DMatrix::from_diagonal(&clamped) * v.transpose();
    (&m + m.transpose()) * 0.5
}

/// A component with its scatter factorized, ready for repeated evaluation.
#[derive(Clone, Debug)]
pub struct PreparedComponent {
    family: Family,
    d: usize,
    mean: Vec<f64>,
    /// Lower Cholesky factor, row-major.
    chol: Vec<f64>,
    /// Inverse of the Cholesky factor, row-major (lower triangular).
    inv_chol: Vec<f64>,
    /// Reciprocal standard deviations when the scatter is diagonal.
    inv_sd: Option<Vec<f64>>,
    log_norm: f64,
}

impl PreparedComponent {
    fn new(c: &ComponentParams) -> Self {
        let d = c.dim();
        let floored = floor_eigenvalues(&c.scatter);
        let l = match floored.clone().cholesky() {
            Some(ch) => ch.l(),
            // Only reachable through rounding right at the floor.
            None => {
                let eps = EIGEN_FLOOR * floored.trace().abs().max(1.0) / d as f64;
                (floored + DMatrix::identity(d, d) * eps).cholesky().expect("floored scatter is positive definite").l()
            }
        };
        let inv = l.clone().solve_lower_triangular(&DMatrix::identity(d, d)).expect("non-singular factor");
        let mut chol = vec![0.0; d * d];
        let mut inv_chol = vec![0.0; d * d];
        let mut log_det = 0.0;
        for i in 0..d {
            for j in 0..=i {
                chol[i * d + j] = l[(i, j)];
                inv_chol[i * d + j] = inv[(i, j)];
            }
            log_det += 2.0 * l[(i, i)].ln();
        }
        let dd = d as f64;
        let log_norm = match c.family {
            Family::Gaussian => -0.5 * dd * (2.0 * PI).ln() - 0.5 * log_det,
            Family::StudentT { dof } => {
                ln_gamma(0.5 * (dof + dd)) - ln_gamma(0.5 * dof) - 0.5 * dd * (dof * PI).ln() - 0.5 * log_det
            }
        };
        let is_diag = (0..d).all(|i| (0..i).all(|j| chol[i * d + j] == 0.0));
        let inv_sd = is_diag.then(|| (0..d).map(|i| 1.0 / chol[i * d + i]).collect());
        Self { family: c.family, d, mean: c.mean.iter().cloned().collect(), chol, inv_chol, inv_sd, log_norm }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn family(&self) -> Family {
        self.family
    }

    /// Squared Mahalanobis distance of `x` from the mean. `scratch` must hold `d` values.
    #[inline]
    pub fn mahalanobis_sq(&self, x: &[f64], scratch: &mut [f64]) -> f64 {
        if let Some(inv_sd) = &self.inv_sd {
            return x
                .iter()
                .zip(&self.mean)
                .zip(inv_sd)
                .map(|((xv, m), s)| {
                    let z = (xv - m) * s;
                    z * z
                })
                .sum();
        }
        let d = self.d;
        let dev = &mut scratch[..d];
        for ((v, xv), m) in dev.iter_mut().zip(x).zip(&self.mean) {
            *v = xv - m;
        }
        let mut acc = 0.0;
        for (i, row) in self.inv_chol.chunks_exact(d).enumerate() {
            let y: f64 = row[..=i].iter().zip(&dev[..=i]).map(|(a, b)| a * b).sum();
            acc += y * y;
        }
        acc
    }

    #[inline]
    pub fn log_density_from_mahalanobis(&self, m2: f64) -> f64 {
        match self.family {
            Family::Gaussian => self.log_norm - 0.5 * m2,
            Family::StudentT { dof } => self.log_norm - 0.5 * (dof + self.d as f64) * (m2 / dof).ln_1p(),
        }
    }

    pub fn log_density(&self, x: &[f64], scratch: &mut [f64]) -> f64 {
        let m2 = self.mahalanobis_sq(x, scratch);
        self.log_density_from_mahalanobis(m2)
    }

    pub fn sample_into(&self, rng: &mut Rng, out: &mut [f64]) {
        let d = self.d;
        let mut z = [0.0_f64; 32];
        let mut heap;
        let z: &mut [f64] = if d <= 32 {
            &mut z[..d]
        } else {
            heap = vec![0.0; d];
            &mut heap
        };
        for zi in z.iter_mut() {
            *zi = rng.sample(StandardNormal);
        }
        let scale = match self.family {
            Family::Gaussian => 1.0,
            Family::StudentT { dof } => {
                let w: f64 = ChiSquared::new(dof).expect("dof > 2").sample(rng);
                (dof / w).sqrt()
            }
        };
        for i in 0..d {
            let row = &self.chol[i * d..i * d + i + 1];
            let s: f64 = row.iter().zip(z.iter()).map(|(l, zj)| l * zj).sum();
            out[i] = self.mean[i] + scale * s;
        }
    }
}

/// `ln f(x)` for a single component.
pub fn log_density(component: &ComponentParams, x: &[f64]) -> Result<f64> {
    if x.len() != component.dim() {
        return Err(Error::DimensionMismatch { expected: component.dim(), got: x.len() });
    }
    let prepared = component.prepare();
    let mut scratch = vec![0.0; x.len()];
    Ok(prepared.log_density(x, &mut scratch))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn approx(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn standard_gaussian_at_mode() {
        let c = ComponentParams::gaussian(&[0.0], DMatrix::identity(1, 1)).unwrap();
        approx(log_density(&c, &[0.0]).unwrap(), -0.5 * (2.0 * PI).ln(), 1e-14);
        let c2 = ComponentParams::gaussian(&[0.0, 0.0], DMatrix::identity(2, 2)).unwrap();
        approx(log_density(&c2, &[0.0, 0.0]).unwrap(), -(2.0 * PI).ln(), 1e-14);
    }

    #[test]
    fn student_t_dof4_at_mode() {
        // Gamma(5/2) / (Gamma(2) sqrt(4 pi)) = (3 sqrt(pi) / 4) / (2 sqrt(pi)) = 3/8
        let c = ComponentParams::student_t(&[0.0], DMatrix::identity(1, 1), 4.0).unwrap();
        approx(log_density(&c, &[0.0]).unwrap(), (3.0_f64 / 8.0).ln(), 1e-13);
    }

    #[test]
    fn gaussian_matches_explicit_formula_off_mode() {
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let c = ComponentParams::gaussian(&[1.0, -1.0], cov.clone()).unwrap();
        let x = [0.3, 0.4];
        let diff = DVector::from_column_slice(&[x[0] - 1.0, x[1] + 1.0]);
        let inv = cov.clone().try_inverse().unwrap();
        let m2 = (diff.transpose() * inv * &diff)[(0, 0)];
        let expected = -(2.0 * PI).ln() - 0.5 * cov.determinant().ln() - 0.5 * m2;
        approx(log_density(&c, &x).unwrap(), expected, 1e-12);
    }

    #[test]
    fn errors() {
        let c = ComponentParams::gaussian(&[0.0, 0.0], DMatrix::identity(2, 2)).unwrap();
        assert!(matches!(log_density(&c, &[0.0]), Err(Error::DimensionMismatch { .. })));
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(ComponentParams::gaussian(&[0.0, 0.0], bad), Err(Error::NotPositiveDefinite(_))));
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(ComponentParams::gaussian(&[0.0, 0.0], asym).is_err());
        assert!(ComponentParams::student_t(&[0.0], DMatrix::identity(1, 1), 2.0).is_err());
    }

    #[test]
    fn floor_leaves_well_conditioned_matrices_untouched() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 2.0]);
        assert_eq!(floor_eigenvalues(&m), m);
        let near_singular = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let f = floor_eigenvalues(&near_singular);
        let min = SymmetricEigen::new(f).eigenvalues.min();
        assert!(min >= 0.99 * EIGEN_FLOOR);
    }
}
