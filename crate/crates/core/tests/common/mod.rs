//! Helpers shared by the integration tests: random instances and dense
//! reference computations that avoid the library's low-rank shortcuts.

#![allow(dead_code)]

use hemppcat::{Dataset, ModelParams, NoiseKind};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub fn gaussian<R: Rng>(rng: &mut R, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Random model plus `n` samples drawn from it. Groups are assigned
/// round-robin so each of the `l` groups is populated; components are drawn
/// from the mixing weights.
pub fn random_instance<R: Rng>(
    rng: &mut R,
    d: usize,
    k: usize,
    j: usize,
    l: usize,
    n: usize,
) -> (Dataset, ModelParams) {
    let factors: Vec<_> = (0..j).map(|_| gaussian(rng, d, k)).collect();
    let means: Vec<_> = (0..j)
        .map(|_| DVector::from_fn(d, |_, _| 3.0 * rng.sample::<f64, _>(StandardNormal)))
        .collect();
    let variances: Vec<f64> = (0..l).map(|_| rng.random_range(0.2..2.0)).collect();
    let raw: Vec<f64> = (0..j).map(|_| rng.random_range(0.3..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let mut samples = DMatrix::zeros(d, n);
    let mut groups = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let g = i % l;
        let u: f64 = rng.random();
        let mut c = 0;
        let mut acc = weights[0];
        while u > acc && c + 1 < j {
            c += 1;
            acc += weights[c];
        }
        let z = gaussian(rng, k, 1);
        let e = gaussian(rng, d, 1) * variances[g].sqrt();
        let y = &factors[c] * z + &means[c] + e;
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

/// `log N(y; mu, F F^T + v I)` through a dense `d x d` Cholesky factor.
pub fn dense_log_pdf(y: &[f64], f: &DMatrix<f64>, mu: &DVector<f64>, v: f64) -> f64 {
    let d = y.len();
    let c = f * f.transpose() + DMatrix::identity(d, d) * v;
    let chol = nalgebra::Cholesky::new(c).expect("covariance is positive definite");
    let r = DVector::from_column_slice(y) - mu;
    let sol = chol.solve(&r);
    -0.5 * (d as f64 * LN_2PI + chol.ln_determinant() + r.dot(&sol))
}

/// Observed log-likelihood with dense densities and a max-shifted sum.
pub fn dense_log_likelihood(ds: &Dataset, p: &ModelParams) -> f64 {
    let mut total = 0.0;
    for i in 0..ds.len() {
        let g = ds.group(i);
        let terms: Vec<f64> = (0..p.n_components())
            .map(|j| p.weights[j].ln() + dense_log_pdf(ds.sample(i), &p.factors[j], &p.means[j], p.variance(g, j)))
            .collect();
        let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        total += m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln();
    }
    total
}

/// Largest principal angle (its sine) between the column spans of `a` and `b`.
pub fn max_principal_sine(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let qa = a.clone().qr().q();
    let qb = b.clone().qr().q();
    let resid = &qb - &qa * (qa.transpose() * &qb);
    resid.singular_values().max()
}

/// Samples of `ds` scaled by `c`.
pub fn scaled(ds: &Dataset, c: f64) -> Dataset {
    ds.with_samples(ds.samples() * c).unwrap()
}
