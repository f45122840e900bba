use super::data::DataMatrix;
use super::mixture::{normalize_log_rows, MixtureParams, PreparedMixture};
use crate::error::{Error, Result};

/// Posterior class probabilities for every item, with the risk statistic
/// `T_i = 1 - max_q P(Z_i = q | X_i)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorMatrix {
    q: usize,
    probs: Vec<f64>,
    t_values: Vec<f64>,
}

impl PosteriorMatrix {
    /// Builds a posterior matrix from already-normalized rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let q = rows.first().map_or(1, |r| r.as_ref().len());
        let mut probs = Vec::with_capacity(rows.len() * q);
        for r in rows {
            let r = r.as_ref();
            if r.len() != q {
                return Err(Error::DimensionMismatch { expected: q, got: r.len() });
            }
            let sum: f64 = r.iter().sum();
            if r.iter().any(|p| !(0.0..=1.0).contains(p)) || (sum - 1.0).abs() > 1e-10 {
                return Err(Error::InvalidParams(format!("row {r:?} is not a probability vector")));
            }
            probs.extend_from_slice(r);
        }
        Ok(Self::from_probs(q, probs))
    }

    pub(crate) fn from_probs(q: usize, probs: Vec<f64>) -> Self {
        let t_values = probs.chunks_exact(q).map(risk_statistic).collect();
        Self { q, probs, t_values }
    }

    pub fn n(&self) -> usize {
        self.t_values.len()
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.probs[i * self.q..(i + 1) * self.q]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.probs.chunks_exact(self.q)
    }

    pub fn t_values(&self) -> &[f64] {
        &self.t_values
    }

    /// Column-permuted copy: column `q` of the result is column `perm[q]` of `self`.
    pub fn permute_columns(&self, perm: &[usize]) -> Result<Self> {
        super::mixture::check_permutation(perm, self.q)?;
        let probs = self.rows().flat_map(|r| perm.iter().map(move |&p| r[p])).collect();
        Ok(Self { q: self.q, probs, t_values: self.t_values.clone() })
    }
}

/// `1 - max(row)`, clamped to its exact range `[0, 1 - 1/Q]`.
pub fn risk_statistic(row: &[f64]) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let upper = 1.0 - 1.0 / row.len() as f64;
    (1.0 - max).clamp(0.0, upper)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (q, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = q;
        }
    }
    best
}

fn check_dims(params_d: usize, data: &DataMatrix) -> Result<()> {
    if data.n() > 0 && data.d() != params_d {
        return Err(Error::DimensionMismatch { expected: params_d, got: data.d() });
    }
    Ok(())
}

/// Posterior probabilities and total log-likelihood under a prepared mixture.
pub(crate) fn posterior_and_loglik(mix: &PreparedMixture, data: &DataMatrix) -> (PosteriorMatrix, f64) {
    let q = mix.q();
    let mut probs = vec![0.0; data.n() * q];
    mix.log_joint_matrix(data, &mut probs);
    let loglik = normalize_log_rows(&mut probs, q, 0.0);
    (PosteriorMatrix::from_probs(q, probs), loglik)
}

/// `P_theta(Z = q | X = x_i)` for every row, via log-sum-exp normalization.
pub fn posterior_matrix(params: &MixtureParams, data: &DataMatrix) -> Result<PosteriorMatrix> {
    check_dims(params.dim(), data)?;
    Ok(posterior_and_loglik(&params.prepare(), data).0)
}

/// Mixture log-likelihood of the sample.
pub fn log_likelihood(params: &MixtureParams, data: &DataMatrix) -> Result<f64> {
    check_dims(params.dim(), data)?;
    Ok(posterior_and_loglik(&params.prepare(), data).1)
}

/// Maximum a posteriori labels (0-based), lowest index on ties.
pub fn map_labels(post: &PosteriorMatrix) -> Vec<usize> {
    post.rows().map(argmax).collect()
}

#[cfg(test)]
mod tests {
    use nalgebra::DMatrix;

    use super::*;
    use crate::model::CovarianceStructure;

    fn unit_pair() -> MixtureParams {
        MixtureParams::gaussian(
            vec![0.5, 0.5],
            &[vec![0.0], vec![2.0]],
            &[DMatrix::identity(1, 1), DMatrix::identity(1, 1)],
            CovarianceStructure::Full,
        )
        .unwrap()
    }

    #[test]
    fn midpoint_is_even() {
        let data = DataMatrix::from_rows(&[[1.0]]).unwrap();
        let post = posterior_matrix(&unit_pair(), &data).unwrap();
        assert!((post.row(0)[0] - 0.5).abs() < 1e-15);
        assert!((post.t_values()[0] - 0.5).abs() < 1e-15);
        assert_eq!(map_labels(&post), vec![0]);
    }

    #[test]
    fn log_ratio_at_zero() {
        // ln f1(0) - ln f2(0) = (0 - 0)/2 + 4/2 = 2
        let data = DataMatrix::from_rows(&[[0.0]]).unwrap();
        let post = posterior_matrix(&unit_pair(), &data).unwrap();
        let e = (-2.0_f64).exp();
        assert!((post.row(0)[0] - 1.0 / (1.0 + e)).abs() < 1e-14);
        assert!((post.row(0)[1] - e / (1.0 + e)).abs() < 1e-14);
        assert!((post.t_values()[0] - 0.119_202_922_022_117_6).abs() < 1e-12);
        assert_eq!(map_labels(&post), vec![0]);
    }

    #[test]
    fn single_component_has_zero_risk() {
        let p = MixtureParams::gaussian(vec![1.0], &[vec![0.0]], &[DMatrix::identity(1, 1)], CovarianceStructure::Full)
            .unwrap();
        let data = DataMatrix::from_rows(&[[0.0], [5.0], [-300.0]]).unwrap();
        let post = posterior_matrix(&p, &data).unwrap();
        assert!(post.rows().all(|r| r == [1.0]));
        assert!(post.t_values().iter().all(|&t| t == 0.0));
    }

    #[test]
    fn map_ties_and_explicit_rows() {
        let post = PosteriorMatrix::from_rows(&[[0.9, 0.1], [0.5, 0.5], [0.2, 0.8]]).unwrap();
        assert_eq!(map_labels(&post), vec![0, 0, 1]);
        assert!(PosteriorMatrix::from_rows(&[[0.9, 0.2]]).is_err());
    }

    #[test]
    fn dimension_mismatch() {
        let data = DataMatrix::from_rows(&[[0.0, 1.0]]).unwrap();
        assert!(matches!(posterior_matrix(&unit_pair(), &data), Err(Error::DimensionMismatch { .. })));
    }
}
