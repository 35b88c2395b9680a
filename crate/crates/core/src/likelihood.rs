//! Observed-data likelihood of the mixture.
//!
//! Each component density is Gaussian with covariance `C = F F^T + v I_d`.
//! Nothing of size `d x d` is ever formed: with `M = v I_k + F^T F`,
//!
//! ```text
//! log det C = (d - k) log v + log det M
//! E^2       = (|y - mu|^2 - |L_M^{-1} F^T (y - mu)|^2) / v
//! ```
//!
//! where `L_M` is the Cholesky factor of `M`. All mixing is done in the log
//! domain with log-sum-exp.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::SmallCholesky;
use crate::model::{Dataset, ModelParams};

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Per `(noise slot, component)` factorization of `M`.
#[derive(Debug, Clone)]
pub struct CacheEntry {
    pub variance: f64,
    pub gram: DMatrix<f64>,
    pub chol: SmallCholesky,
    /// `log det C`.
    pub ln_det_cov: f64,
}

/// Factorizations of every `M_{l,j}` for one parameter value.
#[derive(Debug, Clone)]
pub struct ComponentCache {
    dim: usize,
    components: usize,
    entries: Vec<CacheEntry>,
    noise: crate::model::NoiseKind,
}

impl ComponentCache {
    pub fn new(params: &ModelParams) -> Result<Self> {
        let dim = params.dim();
        let k = params.rank();
        let components = params.n_components();
        let slots = params.noise_slots();
        let grams: Vec<DMatrix<f64>> = params.factors.iter().map(|f| f.tr_mul(f)).collect();
        let mut entries = Vec::with_capacity(slots * components);
        for slot in 0..slots {
            for (j, gram_f) in grams.iter().enumerate() {
                let variance = match params.noise {
                    crate::model::NoiseKind::Group => params.variances[slot],
                    crate::model::NoiseKind::Component => params.variances[j],
                };
                let mut gram = gram_f.clone();
                for t in 0..k {
                    gram[(t, t)] += variance;
                }
                let chol = SmallCholesky::new(&gram).ok_or(Error::InvalidVariance {
                    index: if slots == 1 { j + 1 } else { slot + 1 },
                    value: variance,
                    floor: crate::model::VARIANCE_FLOOR,
                })?;
                let ln_det_cov = (dim - k) as f64 * variance.ln() + chol.ln_det();
                entries.push(CacheEntry {
                    variance,
                    gram,
                    chol,
                    ln_det_cov,
                });
            }
        }
        Ok(ComponentCache {
            dim,
            components,
            entries,
            noise: params.noise,
        })
    }

    #[inline]
    pub fn entry(&self, group: usize, component: usize) -> &CacheEntry {
        let slot = match self.noise {
            crate::model::NoiseKind::Group => group,
            crate::model::NoiseKind::Component => 0,
        };
        &self.entries[slot * self.components + component]
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// Scratch-buffer evaluation shared with the E-step.
///
/// On return `ybar = y - mu`, `u = L_M^{-1} F^T ybar`; the returned pair is
/// `(log p(y | j), |ybar|^2)`.
#[inline]
pub(crate) fn eval_component(
    y: &[f64],
    mean: &[f64],
    factor: &DMatrix<f64>,
    entry: &CacheEntry,
    ybar: &mut [f64],
    u: &mut [f64],
) -> (f64, f64) {
    let d = y.len();
    let mut sq = 0.0;
    for t in 0..d {
        let r = y[t] - mean[t];
        ybar[t] = r;
        sq += r * r;
    }
    let f = factor.as_slice();
    for (c, uc) in u.iter_mut().enumerate() {
        let col = &f[c * d..(c + 1) * d];
        *uc = col.iter().zip(ybar.iter()).map(|(a, b)| a * b).sum();
    }
    entry.chol.forward(u);
    let proj: f64 = u.iter().map(|x| x * x).sum();
    let mahal = ((sq - proj) / entry.variance).max(0.0);
    let log_pdf = -0.5 * (d as f64 * LN_2PI + entry.ln_det_cov + mahal);
    (log_pdf, sq)
}

/// `log p(y | j)` for a sample of noise group `group`.
pub fn log_pdf_component(
    y: &[f64],
    group: usize,
    component: usize,
    params: &ModelParams,
    cache: &ComponentCache,
) -> f64 {
    let d = y.len();
    let mut ybar = vec![0.0; d];
    let mut u = vec![0.0; params.rank()];
    eval_component(
        y,
        params.means[component].as_slice(),
        &params.factors[component],
        cache.entry(group, component),
        &mut ybar,
        &mut u,
    )
    .0
}

/// Numerically stable `log(sum(exp(x)))`; `-inf` for empty or all `-inf` input.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn log_weights(params: &ModelParams) -> Result<Vec<f64>> {
    if !params.weights.iter().any(|&p| p > 0.0) {
        return Err(Error::NotSimplex("all mixing proportions are zero".into()));
    }
    Ok(params
        .weights
        .iter()
        .map(|&p| if p > 0.0 { p.ln() } else { f64::NEG_INFINITY })
        .collect())
}

/// Fills `scores[j] = log pi_j + log p(y | j)`.
pub fn log_joint_scores(
    y: &[f64],
    group: usize,
    params: &ModelParams,
    cache: &ComponentCache,
    ln_weights: &[f64],
    scores: &mut [f64],
) {
    let mut ybar = vec![0.0; y.len()];
    let mut u = vec![0.0; params.rank()];
    for (j, s) in scores.iter_mut().enumerate() {
        if ln_weights[j] == f64::NEG_INFINITY {
            *s = f64::NEG_INFINITY;
            continue;
        }
        let (lp, _) = eval_component(
            y,
            params.means[j].as_slice(),
            &params.factors[j],
            cache.entry(group, j),
            &mut ybar,
            &mut u,
        );
        *s = ln_weights[j] + lp;
    }
}

/// Normalizes `scores` in place into posterior probabilities and returns the
/// log normalizer.
pub fn normalize_scores(scores: &mut [f64]) -> f64 {
    let lse = log_sum_exp(scores);
    for s in scores.iter_mut() {
        *s = if *s == f64::NEG_INFINITY {
            0.0
        } else {
            (*s - lse).exp()
        };
    }
    lse
}

/// Posterior component probabilities, `n x J`.
pub fn responsibilities(dataset: &Dataset, params: &ModelParams) -> Result<DMatrix<f64>> {
    let cache = ComponentCache::new(params)?;
    let ln_w = log_weights(params)?;
    let j = params.n_components();
    let mut out = DMatrix::zeros(dataset.len(), j);
    let mut scores = vec![0.0; j];
    for i in 0..dataset.len() {
        log_joint_scores(dataset.sample(i), dataset.group(i), params, &cache, &ln_w, &mut scores);
        normalize_scores(&mut scores);
        for (c, &r) in scores.iter().enumerate() {
            out[(i, c)] = r;
        }
    }
    Ok(out)
}

/// `sum_i log sum_j pi_j p(y_i | j)`.
pub fn observed_log_likelihood(dataset: &Dataset, params: &ModelParams) -> Result<f64> {
    let cache = ComponentCache::new(params)?;
    let ln_w = log_weights(params)?;
    let mut scores = vec![0.0; params.n_components()];
    let mut total = 0.0;
    for i in 0..dataset.len() {
        log_joint_scores(dataset.sample(i), dataset.group(i), params, &cache, &ln_w, &mut scores);
        total += log_sum_exp(&scores);
    }
    Ok(total)
}
