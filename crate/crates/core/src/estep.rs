//! Conditional moments of the latent coefficients and the streaming E-step.
//!
//! Given component `j` generated `y` (noise group `l`), the coefficients are
//! Gaussian with mean `M^{-1} F^T (y - mu)` and covariance `v M^{-1}`, where
//! `M = v I_k + F^T F`. The full `n x J x k x k` moment tensor is never
//! stored: [`accumulate`] folds each sample's moments into per-cell
//! [`SufficientStats`] as soon as they are computed.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::likelihood::{eval_component, log_sum_exp, ComponentCache};
use crate::linalg::{symmetrize, SmallCholesky};
use crate::model::{Dataset, ModelParams};
use crate::mstep::{CellStats, SufficientStats};

/// First and second conditional moments for one `(sample, component)` pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMoments {
    pub z_mean: DVector<f64>,
    pub z_second: DMatrix<f64>,
}

/// `M = v I_k + F_j^T F_j`.
pub fn posterior_gram(group: usize, component: usize, params: &ModelParams) -> DMatrix<f64> {
    let f = &params.factors[component];
    let mut m = f.tr_mul(f);
    let v = params.variance(group, component);
    for t in 0..m.nrows() {
        m[(t, t)] += v;
    }
    m
}

fn gram_cholesky(group: usize, component: usize, params: &ModelParams) -> SmallCholesky {
    SmallCholesky::new(&posterior_gram(group, component, params))
        .expect("v I + F^T F is positive definite for v > 0")
}

/// `<z> = M^{-1} F^T (y - mu)`, solved through the Cholesky factor of `M`.
pub fn posterior_mean(y: &[f64], group: usize, component: usize, params: &ModelParams) -> DVector<f64> {
    let f = &params.factors[component];
    let r = DVector::from_column_slice(y) - &params.means[component];
    let rhs = f.tr_mul(&r);
    gram_cholesky(group, component, params).solve(&rhs)
}

/// `<z z^T> = v M^{-1} + <z><z>^T`, symmetrized.
pub fn posterior_second_moment(
    z_mean: &DVector<f64>,
    group: usize,
    component: usize,
    params: &ModelParams,
) -> DMatrix<f64> {
    let v = params.variance(group, component);
    let mut s = gram_cholesky(group, component, params).inverse() * v + z_mean * z_mean.transpose();
    symmetrize(&mut s);
    s
}

pub fn posterior_moments(y: &[f64], group: usize, component: usize, params: &ModelParams) -> PosteriorMoments {
    let z_mean = posterior_mean(y, group, component, params);
    let z_second = posterior_second_moment(&z_mean, group, component, params);
    PosteriorMoments { z_mean, z_second }
}

/// Expected complete-data log-likelihood `<L_C(theta; theta_t)>`, up to the
/// additive constants in `2 pi`.
///
/// Responsibilities and moments are taken at `params_t`; the remaining
/// quantities at `params`. Evaluated sample by sample, independently of the
/// accumulator path the M-step uses.
pub fn expected_complete_log_likelihood(
    dataset: &Dataset,
    resp: &DMatrix<f64>,
    params_t: &ModelParams,
    params: &ModelParams,
) -> f64 {
    let d = dataset.dim() as f64;
    let mut total = 0.0;
    for i in 0..dataset.len() {
        let y = DVector::from_column_slice(dataset.sample(i));
        let g = dataset.group(i);
        for j in 0..params.n_components() {
            let r = resp[(i, j)];
            if r == 0.0 {
                continue;
            }
            let mom = posterior_moments(dataset.sample(i), g, j, params_t);
            let v = params.variance(g, j);
            let f = &params.factors[j];
            let ybar = &y - &params.means[j];
            let cross = mom.z_mean.dot(&f.tr_mul(&ybar));
            let quad = (f.tr_mul(f) * &mom.z_second).trace();
            total += r
                * (params.weights[j].ln() - 0.5 * d * v.ln() - 0.5 * mom.z_second.trace()
                    - 0.5 / v * ybar.norm_squared()
                    + cross / v
                    - 0.5 / v * quad);
        }
    }
    total
}

/// One pass over the data at `params`: responsibilities, the observed
/// log-likelihood and the per-cell sufficient statistics for the M-step.
pub fn accumulate(dataset: &Dataset, params: &ModelParams) -> Result<SufficientStats> {
    let cache = ComponentCache::new(params)?;
    let n = dataset.len();
    let d = dataset.dim();
    let k = params.rank();
    let jn = params.n_components();
    let slots = params.noise_slots();
    if !params.weights.iter().any(|&p| p > 0.0) {
        return Err(crate::error::Error::NotSimplex(
            "all mixing proportions are zero".into(),
        ));
    }
    let ln_w: Vec<f64> = params
        .weights
        .iter()
        .map(|&p| if p > 0.0 { p.ln() } else { f64::NEG_INFINITY })
        .collect();

    let mut cells: Vec<CellStats> = (0..slots * jn)
        .map(|idx| {
            let (slot, j) = (idx / jn, idx % jn);
            let entry = cache.entry(slot, j);
            let mut cov = entry.chol.inverse() * entry.variance;
            symmetrize(&mut cov);
            CellStats::new(d, k, cov)
        })
        .collect();

    let mut resp = DMatrix::zeros(n, jn);
    let mut ybar = vec![0.0; jn * d];
    let mut u = vec![0.0; jn * k];
    let mut sq = vec![0.0; jn];
    let mut scores = vec![0.0; jn];
    let mut ll = 0.0;

    for i in 0..n {
        let y = dataset.sample(i);
        let slot = params.noise_slot(dataset.group(i));
        for j in 0..jn {
            if ln_w[j] == f64::NEG_INFINITY {
                scores[j] = f64::NEG_INFINITY;
                continue;
            }
            let (lp, s) = eval_component(
                y,
                params.means[j].as_slice(),
                &params.factors[j],
                cache.entry(slot, j),
                &mut ybar[j * d..(j + 1) * d],
                &mut u[j * k..(j + 1) * k],
            );
            scores[j] = ln_w[j] + lp;
            sq[j] = s;
        }
        let lse = log_sum_exp(&scores);
        ll += lse;
        for j in 0..jn {
            if scores[j] == f64::NEG_INFINITY {
                continue;
            }
            let r = (scores[j] - lse).exp();
            resp[(i, j)] = r;
            if r == 0.0 {
                continue;
            }
            let z = &mut u[j * k..(j + 1) * k];
            cache.entry(slot, j).chol.backward(z);
            cells[slot * jn + j].add(r, &ybar[j * d..(j + 1) * d], sq[j], z);
        }
    }

    Ok(SufficientStats::new(
        cells,
        resp,
        ll,
        params.clone(),
        dataset.group_sizes(),
    ))
}
