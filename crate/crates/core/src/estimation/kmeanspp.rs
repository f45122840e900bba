use nalgebra::DMatrix;
use rand::Rng as _;

use super::Constraint;
use crate::error::{Error, Result};
use crate::model::{ComponentParams, CovarianceStructure, DataMatrix, Family, MixtureParams};
use crate::rng::Rng;

/// Seeding produced by k-means++.
#[derive(Clone, Debug)]
pub struct KmeansppInit {
    /// Indices of the rows drawn as centers, in draw order.
    pub centers: Vec<usize>,
    /// Nearest-center assignment of every row (lowest center index on ties).
    pub assignment: Vec<usize>,
    /// Means are the within-assignment averages, weights uniform (or known),
    /// scatters the pooled within-assignment covariance under the constraint.
    pub params: MixtureParams,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Draws `q` centers with D²-weighting and derives starting parameters.
pub fn kmeanspp_init(
    data: &DataMatrix,
    q: usize,
    family: Family,
    constraint: &Constraint,
    rng: &mut Rng,
) -> Result<KmeansppInit> {
    let n = data.n();
    if q == 0 {
        return Err(Error::InvalidConfig("number of components must be at least 1".into()));
    }
    if n < q {
        return Err(Error::TooFewRows { needed: q, got: n });
    }
    let mut centers = Vec::with_capacity(q);
    centers.push(rng.random_range(0..n));
    let mut d2: Vec<f64> = data.rows().map(|x| sq_dist(x, data.row(centers[0]))).collect();
    while centers.len() < q {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 && total.is_finite() {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 {
                    acc += w;
                    pick = Some(i);
                    if acc > target {
                        break;
                    }
                }
            }
            pick.expect("positive total weight")
        } else {
            rng.random_range(0..n)
        };
        centers.push(next);
        let c = data.row(next);
        for (i, x) in data.rows().enumerate() {
            d2[i] = d2[i].min(sq_dist(x, c));
        }
    }

    let assignment: Vec<usize> = data
        .rows()
        .map(|x| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (k, &c) in centers.iter().enumerate() {
                let dist = sq_dist(x, data.row(c));
                if dist < best_d {
                    best_d = dist;
                    best = k;
                }
            }
            best
        })
        .collect();

    let d = data.d();
    let mut means = vec![vec![0.0; d]; q];
    let mut counts = vec![0usize; q];
    for (x, &k) in data.rows().zip(&assignment) {
        counts[k] += 1;
        for (m, v) in means[k].iter_mut().zip(x) {
            *m += v;
        }
    }
    for k in 0..q {
        if counts[k] == 0 {
            means[k] = data.row(centers[k]).to_vec();
        } else {
            means[k].iter_mut().for_each(|m| *m /= counts[k] as f64);
        }
    }

    let mut pooled = DMatrix::zeros(d, d);
    for (x, &k) in data.rows().zip(&assignment) {
        accumulate_outer(&mut pooled, x, &means[k], 1.0);
    }
    pooled /= n as f64;
    if !(pooled.trace() > 0.0) {
        let overall = data.mean();
        pooled = DMatrix::zeros(d, d);
        for x in data.rows() {
            accumulate_outer(&mut pooled, x, &overall, 1.0);
        }
        pooled /= n as f64;
    }
    if !(pooled.trace() > 0.0) {
        pooled = DMatrix::identity(d, d);
    }

    let scatters: Vec<DMatrix<f64>> = match constraint.structure {
        CovarianceStructure::Known => constraint.known_scatter_matrices(q, d)?,
        s => vec![super::em::constrain(&pooled, s); q],
    };
    let weights = match &constraint.known_weights {
        Some(w) => w.clone(),
        None => super::em::normalized(vec![1.0; q]),
    };
    let components = means
        .iter()
        .zip(scatters)
        .map(|(m, s)| ComponentParams::new(family, nalgebra::DVector::from_column_slice(m), s))
        .collect::<Result<Vec<_>>>()?;
    let params = MixtureParams::new(weights, components, constraint.structure)?;
    Ok(KmeansppInit { centers, assignment, params })
}

pub(crate) fn accumulate_outer(acc: &mut DMatrix<f64>, x: &[f64], mean: &[f64], w: f64) {
    let d = x.len();
    for i in 0..d {
        let di = w * (x[i] - mean[i]);
        for j in 0..=i {
            let v = di * (x[j] - mean[j]);
            acc[(i, j)] += v;
            if i != j {
                acc[(j, i)] += v;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::sample_mixture;
    use crate::rng;

    fn full() -> Constraint {
        Constraint::new(CovarianceStructure::Full)
    }

    #[test]
    fn single_component_uses_sample_mean() {
        let data = DataMatrix::from_rows(&[[0.0, 1.0], [2.0, 3.0], [4.0, 8.0]]).unwrap();
        let init = kmeanspp_init(&data, 1, Family::Gaussian, &full(), &mut rng::stream(3, &[])).unwrap();
        assert_eq!(init.params.weights(), &[1.0]);
        assert_eq!(init.params.components()[0].mean().as_slice(), &[2.0, 4.0]);
    }

    #[test]
    fn q_equal_n_takes_every_row() {
        let data = DataMatrix::from_rows(&[[0.0], [1.0], [5.0], [7.5]]).unwrap();
        for seed in 0..20 {
            let init = kmeanspp_init(&data, 4, Family::Gaussian, &full(), &mut rng::stream(seed, &[])).unwrap();
            let mut c = init.centers.clone();
            c.sort_unstable();
            assert_eq!(c, vec![0, 1, 2, 3]);
            // pooled within-cluster scatter is zero, so the overall covariance is used
            assert!(init.params.components()[0].scatter()[(0, 0)] > 1.0);
        }
    }

    #[test]
    fn separated_blobs_get_one_center_each() {
        let truth = MixtureParams::gaussian(
            vec![0.5, 0.5],
            &[vec![10.0, 10.0], vec![-10.0, -10.0]],
            &[DMatrix::identity(2, 2), DMatrix::identity(2, 2)],
            CovarianceStructure::Full,
        )
        .unwrap();
        let mut hits = 0;
        for seed in 0..100 {
            let (_, data) = sample_mixture(&truth, 200, &mut rng::stream(seed, &[0]));
            let init = kmeanspp_init(&data, 2, Family::Gaussian, &full(), &mut rng::stream(seed, &[1])).unwrap();
            let signs: Vec<bool> = init.centers.iter().map(|&c| data.row(c)[0] > 0.0).collect();
            if signs[0] != signs[1] {
                hits += 1;
            }
        }
        assert!(hits >= 99, "{hits}");
    }

    #[test]
    fn too_few_rows() {
        let data = DataMatrix::from_rows(&[[0.0]]).unwrap();
        let err = kmeanspp_init(&data, 2, Family::Gaussian, &full(), &mut rng::stream(0, &[])).unwrap_err();
        assert!(matches!(err, Error::TooFewRows { needed: 2, got: 1 }));
    }

    #[test]
    fn constrained_initial_scatter() {
        let data = DataMatrix::from_rows(&[[0.0, 0.0], [1.0, 2.0], [2.0, 1.0], [3.0, 5.0]]).unwrap();
        let c = Constraint::new(CovarianceStructure::Spherical);
        let init = kmeanspp_init(&data, 1, Family::Gaussian, &c, &mut rng::stream(0, &[])).unwrap();
        let s = init.params.components()[0].scatter();
        assert_eq!(s[(0, 1)], 0.0);
        assert_eq!(s[(0, 0)], s[(1, 1)]);
    }
}
