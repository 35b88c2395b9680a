//! Conditional maximizers of the expected complete-data log-likelihood.
//!
//! A sweep updates the mixing proportions, then the noise variances (with the
//! old means and factors), then the means (new variances, old factors), then
//! the factors (new variances, new means). Every update reads the same
//! E-step statistics gathered at the current iterate.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::SmallCholesky;
use crate::model::{ModelParams, NoiseKind, VARIANCE_FLOOR};

/// Relative pivot threshold for declaring `K_j` singular.
pub const RANK_DEFICIENCY_TOL: f64 = 1e-12;

/// Responsibility-weighted sums for one `(noise slot, component)` cell.
/// Residuals are taken against the reference (E-step) means.
#[derive(Debug, Clone, PartialEq)]
pub struct CellStats {
    /// `sum R`
    pub mass: f64,
    /// `sum R |ybar|^2`
    pub sq: f64,
    /// `sum R ybar`
    pub ybar: DVector<f64>,
    /// `sum R <z>`
    pub z: DVector<f64>,
    /// `sum R ybar <z>^T`
    pub ybar_z: DMatrix<f64>,
    /// `sum R <z><z>^T`
    pub zz: DMatrix<f64>,
    /// Posterior covariance `v M^{-1}` shared by every sample in the cell.
    pub cov: DMatrix<f64>,
}

impl CellStats {
    pub fn new(d: usize, k: usize, cov: DMatrix<f64>) -> Self {
        CellStats {
            mass: 0.0,
            sq: 0.0,
            ybar: DVector::zeros(d),
            z: DVector::zeros(k),
            ybar_z: DMatrix::zeros(d, k),
            zz: DMatrix::zeros(k, k),
            cov,
        }
    }

    #[inline]
    pub fn add(&mut self, r: f64, ybar: &[f64], sq: f64, z: &[f64]) {
        let d = ybar.len();
        let k = z.len();
        self.mass += r;
        self.sq += r * sq;
        for (acc, y) in self.ybar.iter_mut().zip(ybar) {
            *acc += r * y;
        }
        let yz = self.ybar_z.as_mut_slice();
        for c in 0..k {
            let w = r * z[c];
            self.z[c] += w;
            for (acc, y) in yz[c * d..(c + 1) * d].iter_mut().zip(ybar) {
                *acc += w * y;
            }
            for a in 0..k {
                self.zz[(a, c)] += w * z[a];
            }
        }
    }

    /// `sum R <z z^T>`.
    pub fn second_moment(&self) -> DMatrix<f64> {
        &self.cov * self.mass + &self.zz
    }
}

/// Everything the M-step needs from one E-step pass.
#[derive(Debug, Clone)]
pub struct SufficientStats {
    cells: Vec<CellStats>,
    resp: DMatrix<f64>,
    log_likelihood: f64,
    reference: ModelParams,
    group_sizes: Vec<usize>,
}

impl SufficientStats {
    pub fn new(
        cells: Vec<CellStats>,
        resp: DMatrix<f64>,
        log_likelihood: f64,
        reference: ModelParams,
        group_sizes: Vec<usize>,
    ) -> Self {
        SufficientStats {
            cells,
            resp,
            log_likelihood,
            reference,
            group_sizes,
        }
    }

    pub fn cells(&self) -> &[CellStats] {
        &self.cells
    }

    pub fn cell(&self, slot: usize, component: usize) -> &CellStats {
        &self.cells[slot * self.components() + component]
    }

    pub fn components(&self) -> usize {
        self.reference.n_components()
    }

    pub fn slots(&self) -> usize {
        self.cells.len() / self.components()
    }

    pub fn responsibilities(&self) -> &DMatrix<f64> {
        &self.resp
    }

    /// Observed-data log-likelihood at the reference parameters.
    pub fn log_likelihood(&self) -> f64 {
        self.log_likelihood
    }

    /// Parameters the statistics were gathered at.
    pub fn reference(&self) -> &ModelParams {
        &self.reference
    }

    pub fn group_sizes(&self) -> &[usize] {
        &self.group_sizes
    }

    fn cell_variance(&self, variances: &[f64], slot: usize, component: usize) -> f64 {
        match self.reference.noise {
            NoiseKind::Group => variances[slot],
            NoiseKind::Component => variances[component],
        }
    }
}

/// `pi_j = (1/n) sum_i R_ij`.
pub fn update_pi(resp: &DMatrix<f64>) -> Vec<f64> {
    let n = resp.nrows() as f64;
    (0..resp.ncols())
        .map(|j| resp.column(j).iter().sum::<f64>() / n)
        .collect()
}

/// Responsibility-weighted residual energy of one cell under `(mean, factor)`:
/// `sum R { |y - mu|^2 - 2 <z>^T F^T (y - mu) + tr(<z z^T> F^T F) }`.
fn cell_residual(
    cell: &CellStats,
    reference_mean: &DVector<f64>,
    mean: &DVector<f64>,
    factor: &DMatrix<f64>,
) -> f64 {
    let delta = mean - reference_mean;
    let ysq = cell.sq - 2.0 * delta.dot(&cell.ybar) + cell.mass * delta.norm_squared();
    let cross = factor.dot(&cell.ybar_z) - factor.tr_mul(&delta).dot(&cell.z);
    let quad = (factor.tr_mul(factor) * cell.second_moment()).trace();
    ysq - 2.0 * cross + quad
}

/// Variance maximizer with means and factors held at the given values
/// (the E-step iterate, in a standard sweep). Clamped at [`VARIANCE_FLOOR`].
pub fn update_v(
    stats: &SufficientStats,
    means: &[DVector<f64>],
    factors: &[DMatrix<f64>],
) -> Result<Vec<f64>> {
    let reference = stats.reference();
    let jn = stats.components();
    let slots = stats.slots();
    let d = reference.dim() as f64;
    let n_out = match reference.noise {
        NoiseKind::Group => slots,
        NoiseKind::Component => jn,
    };
    let mut num = vec![0.0; n_out];
    let mut den = vec![0.0; n_out];
    for s in 0..slots {
        for j in 0..jn {
            let cell = stats.cell(s, j);
            if cell.mass == 0.0 {
                continue;
            }
            let out = match reference.noise {
                NoiseKind::Group => s,
                NoiseKind::Component => j,
            };
            num[out] += cell_residual(cell, &reference.means[j], &means[j], &factors[j]);
            den[out] += cell.mass;
        }
    }
    num.iter()
        .zip(&den)
        .enumerate()
        .map(|(idx, (&nu, &de))| {
            if de <= 0.0 {
                return Err(match reference.noise {
                    NoiseKind::Group => Error::InvalidDataset(format!(
                        "noise group {} has no responsibility mass",
                        idx + 1
                    )),
                    NoiseKind::Component => Error::EmptyComponent { component: idx + 1 },
                });
            }
            Ok((nu / (d * de)).max(VARIANCE_FLOOR))
        })
        .collect()
}

/// Mean maximizer for the given variances and factors.
pub fn update_mu(
    stats: &SufficientStats,
    variances: &[f64],
    factors: &[DMatrix<f64>],
) -> Result<Vec<DVector<f64>>> {
    let reference = stats.reference();
    (0..stats.components())
        .map(|j| {
            let d = reference.dim();
            let mut num = DVector::zeros(d);
            let mut den = 0.0;
            for s in 0..stats.slots() {
                let cell = stats.cell(s, j);
                if cell.mass == 0.0 {
                    continue;
                }
                let v = stats.cell_variance(variances, s, j);
                num += (&cell.ybar - &factors[j] * &cell.z) / v;
                den += cell.mass / v;
            }
            if den <= 0.0 {
                return Err(Error::EmptyComponent { component: j + 1 });
            }
            Ok(&reference.means[j] + num / den)
        })
        .collect()
}

/// Factor maximizer `F_j = B_j^T K_j^{-1}` for the given variances and means.
pub fn update_f(
    stats: &SufficientStats,
    variances: &[f64],
    means: &[DVector<f64>],
) -> Result<Vec<DMatrix<f64>>> {
    let reference = stats.reference();
    let d = reference.dim();
    let k = reference.rank();
    (0..stats.components())
        .map(|j| {
            let delta = &means[j] - &reference.means[j];
            let mut bt = DMatrix::zeros(d, k);
            let mut kmat = DMatrix::zeros(k, k);
            let mut mass = 0.0;
            for s in 0..stats.slots() {
                let cell = stats.cell(s, j);
                if cell.mass == 0.0 {
                    continue;
                }
                let v = stats.cell_variance(variances, s, j);
                bt += (&cell.ybar_z - &delta * cell.z.transpose()) / v;
                kmat += cell.second_moment() / v;
                mass += cell.mass;
            }
            if mass <= 0.0 {
                return Err(Error::EmptyComponent { component: j + 1 });
            }
            crate::linalg::symmetrize(&mut kmat);
            let threshold = RANK_DEFICIENCY_TOL * kmat.trace() / k as f64;
            let chol = SmallCholesky::new(&kmat)
                .filter(|c| c.min_pivot() >= threshold)
                .ok_or(Error::RankDeficientMoments { component: j + 1 })?;
            let mut f = DMatrix::zeros(d, k);
            let mut row = vec![0.0; k];
            for r in 0..d {
                for c in 0..k {
                    row[c] = bt[(r, c)];
                }
                chol.solve_in_place(&mut row);
                for c in 0..k {
                    f[(r, c)] = row[c];
                }
            }
            Ok(f)
        })
        .collect()
}

/// One full conditional-maximization sweep from the statistics at
/// `stats.reference()`.
pub fn gem_sweep(stats: &SufficientStats) -> Result<ModelParams> {
    let reference = stats.reference();
    let weights = update_pi(stats.responsibilities());
    let variances = update_v(stats, &reference.means, &reference.factors)?;
    let means = update_mu(stats, &variances, &reference.factors)?;
    let factors = update_f(stats, &variances, &means)?;
    Ok(ModelParams {
        factors,
        means,
        variances,
        weights,
        noise: reference.noise,
    })
}
