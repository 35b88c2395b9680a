//! Sampling datasets from known mixture models.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, ModelParams, NoiseKind};
use crate::rng::SeedChain;

/// Settings for [`generate`]. Factors are `U_j diag(sqrt(spectrum))` with
/// `U_j` Haar-distributed; mean entries are i.i.d. uniform on `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub dim: usize,
    pub rank: usize,
    /// Factor spectrum, positive and non-increasing, length `rank`.
    pub spectrum: Vec<f64>,
    /// Noise variance per group. Zero gives noiseless samples.
    pub variances: Vec<f64>,
    /// `counts[l][j]`: samples of component `j` in group `l`.
    pub counts: Vec<Vec<usize>>,
    #[serde(default)]
    pub seed: u64,
}

impl SynthConfig {
    /// Three rank-3 components in 100 dimensions; 800 samples at variance
    /// `v1` and 200 at variance 1.
    pub fn benchmark(v1: f64, seed: u64) -> Self {
        SynthConfig {
            dim: 100,
            rank: 3,
            spectrum: vec![16.0, 9.0, 4.0],
            variances: vec![v1, 1.0],
            counts: vec![vec![250, 250, 300], vec![50, 100, 50]],
            seed,
        }
    }

    pub fn n_groups(&self) -> usize {
        self.counts.len()
    }

    pub fn n_components(&self) -> usize {
        self.counts.first().map_or(0, Vec::len)
    }

    pub fn len(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.rank == 0 || self.rank > self.dim {
            return bad(format!("need 1 <= rank <= dim, got rank={} dim={}", self.rank, self.dim));
        }
        if self.spectrum.len() != self.rank {
            return bad(format!("spectrum has {} entries, rank is {}", self.spectrum.len(), self.rank));
        }
        if self.spectrum.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return bad("spectrum entries must be positive".into());
        }
        if self.spectrum.windows(2).any(|w| w[1] > w[0]) {
            return bad("spectrum must be non-increasing".into());
        }
        if self.counts.is_empty() || self.n_components() == 0 {
            return bad("counts must be a non-empty groups x components table".into());
        }
        if self.counts.iter().any(|row| row.len() != self.n_components()) {
            return bad("every counts row needs one entry per component".into());
        }
        if self.variances.len() != self.counts.len() {
            return bad(format!(
                "{} variances for {} groups",
                self.variances.len(),
                self.counts.len()
            ));
        }
        if self.variances.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return bad("variances must be non-negative".into());
        }
        if self.counts.iter().any(|row| row.iter().sum::<usize>() == 0) {
            return bad("every group needs at least one sample".into());
        }
        for j in 0..self.n_components() {
            if self.counts.iter().all(|row| row[j] == 0) {
                return bad(format!("component {} has no samples", j + 1));
            }
        }
        Ok(())
    }
}

/// Haar-distributed `d x k` matrix with orthonormal columns: QR of a
/// Gaussian matrix with the signs of `R`'s diagonal moved into `Q`.
pub fn random_stiefel<R: Rng + ?Sized>(d: usize, k: usize, rng: &mut R) -> Result<DMatrix<f64>> {
    if k == 0 || k > d {
        return Err(Error::InvalidConfig(format!("need 1 <= k <= d, got k={k} d={d}")));
    }
    let g = DMatrix::from_fn(d, k, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for c in 0..k {
        if r[(c, c)] < 0.0 {
            q.column_mut(c).neg_mut();
        }
    }
    Ok(q)
}

/// Draws a labelled dataset and returns it with the generating model.
/// Samples are ordered by group, then component. Variances in the returned
/// model are the configured ones, so a zero variance yields parameters that
/// do not pass [`crate::model::validate_params`].
pub fn generate(config: &SynthConfig) -> Result<(Dataset, ModelParams)> {
    config.validate()?;
    let d = config.dim;
    let k = config.rank;
    let j_count = config.n_components();
    let root = SeedChain::new(config.seed);

    let mut factor_rng = root.named("factors").rng();
    let mut factors = Vec::with_capacity(j_count);
    for _ in 0..j_count {
        let mut u = random_stiefel(d, k, &mut factor_rng)?;
        for (c, &s) in config.spectrum.iter().enumerate() {
            u.column_mut(c).scale_mut(s.sqrt());
        }
        factors.push(u);
    }
    let mut mean_rng = root.named("means").rng();
    let means: Vec<DVector<f64>> = (0..j_count)
        .map(|_| DVector::from_fn(d, |_, _| mean_rng.random::<f64>()))
        .collect();

    let n = config.len();
    let mut samples = DMatrix::zeros(d, n);
    let mut groups = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut sample_rng = root.named("samples").rng();
    let mut z = DVector::zeros(k);
    let mut col = 0;
    for (l, row) in config.counts.iter().enumerate() {
        let sd = config.variances[l].sqrt();
        for (j, &count) in row.iter().enumerate() {
            for _ in 0..count {
                for zi in z.iter_mut() {
                    *zi = sample_rng.sample(StandardNormal);
                }
                let mut y = &factors[j] * &z + &means[j];
                for yi in y.iter_mut() {
                    let e: f64 = sample_rng.sample(StandardNormal);
                    *yi += sd * e;
                }
                samples.set_column(col, &y);
                groups.push(l);
                labels.push(j);
                col += 1;
            }
        }
    }

    let weights = (0..j_count)
        .map(|j| config.counts.iter().map(|row| row[j]).sum::<usize>() as f64 / n as f64)
        .collect();
    let params = ModelParams {
        factors,
        means,
        variances: config.variances.clone(),
        weights,
        noise: NoiseKind::Group,
    };
    let dataset = Dataset::new(samples, groups, Some(labels))?;
    Ok((dataset, params))
}
