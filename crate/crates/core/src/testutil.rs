//! Random instances and dense reference computations for unit tests.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::model::{Dataset, ModelParams, NoiseKind};

pub fn gaussian_matrix<R: Rng>(rng: &mut R, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Random parameters plus `n` samples drawn from them (groups round-robin so
/// every group is populated).
pub fn random_problem<R: Rng>(
    rng: &mut R,
    d: usize,
    k: usize,
    j: usize,
    l: usize,
    n: usize,
) -> (Dataset, ModelParams) {
    let factors: Vec<_> = (0..j).map(|_| gaussian_matrix(rng, d, k)).collect();
    let means: Vec<_> = (0..j)
        .map(|_| DVector::from_fn(d, |_, _| 2.0 * rng.sample::<f64, _>(StandardNormal)))
        .collect();
    let variances: Vec<f64> = (0..l).map(|_| rng.random_range(0.3..2.0)).collect();
    let raw: Vec<f64> = (0..j).map(|_| rng.random_range(0.2..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let weights = raw.iter().map(|w| w / total).collect();
    let mut samples = DMatrix::zeros(d, n);
    let mut groups = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let g = i % l;
        let c = i % j;
        let z = gaussian_matrix(rng, k, 1);
        let eps = gaussian_matrix(rng, d, 1) * variances[g].sqrt();
        let y = &factors[c] * z + &means[c] + eps;
        samples.set_column(i, &y.column(0));
        groups.push(g);
        labels.push(c);
    }
    let params = ModelParams {
        factors,
        means,
        variances,
        weights,
        noise: NoiseKind::Group,
    };
    (Dataset::new(samples, groups, Some(labels)).unwrap(), params)
}

/// Log-density of `N(mu, F F^T + v I)` through a dense `d x d` Cholesky.
pub fn dense_log_pdf(y: &[f64], f: &DMatrix<f64>, mu: &DVector<f64>, v: f64) -> f64 {
    let d = y.len();
    let c = f * f.transpose() + DMatrix::identity(d, d) * v;
    let chol = nalgebra::Cholesky::new(c).unwrap();
    let r = DVector::from_column_slice(y) - mu;
    let sol = chol.solve(&r);
    -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + chol.ln_determinant() + r.dot(&sol))
}
