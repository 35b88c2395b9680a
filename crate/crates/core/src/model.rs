//! Domain types shared by every estimator: hyperparameters, datasets,
//! mixture parameters and fit reports.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower bound applied to every noise variance.
pub const VARIANCE_FLOOR: f64 = 1e-9;

/// Absolute tolerance on `sum(weights) == 1`.
pub const SIMPLEX_TOL: f64 = 1e-12;

/// Problem sizes: ambient dimension, factor rank, number of mixture
/// components and number of noise groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hyper {
    pub dim: usize,
    pub rank: usize,
    pub components: usize,
    pub groups: usize,
}

impl Hyper {
    pub fn new(dim: usize, rank: usize, components: usize, groups: usize) -> Result<Self> {
        let hyper = Hyper {
            dim,
            rank,
            components,
            groups,
        };
        hyper.validate()?;
        Ok(hyper)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 || self.rank >= self.dim {
            return Err(Error::InvalidHyper(format!(
                "need 1 <= k < d, got k={} d={}",
                self.rank, self.dim
            )));
        }
        if self.components == 0 {
            return Err(Error::InvalidHyper("J must be at least 1".into()));
        }
        if self.groups == 0 {
            return Err(Error::InvalidHyper("L must be at least 1".into()));
        }
        Ok(())
    }

    /// Hyperparameters matching a dataset's dimension and group count.
    pub fn for_dataset(dataset: &Dataset, rank: usize, components: usize) -> Result<Self> {
        Hyper::new(dataset.dim(), rank, components, dataset.n_groups())
    }
}

/// Samples stored column-wise (`d x n`), each tagged with a 0-based noise
/// group and optionally a 0-based ground-truth component label.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: DMatrix<f64>,
    groups: Vec<usize>,
    labels: Option<Vec<usize>>,
    n_groups: usize,
}

impl Dataset {
    /// Builds a dataset; `n_groups` is inferred as `max(group) + 1` and every
    /// group in `0..n_groups` must be non-empty.
    pub fn new(
        samples: DMatrix<f64>,
        groups: Vec<usize>,
        labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        let n = samples.ncols();
        if n == 0 {
            return Err(Error::InvalidDataset("no samples".into()));
        }
        if samples.nrows() == 0 {
            return Err(Error::InvalidDataset("zero-dimensional samples".into()));
        }
        if groups.len() != n {
            return Err(Error::InvalidDataset(format!(
                "{} group indices for {} samples",
                groups.len(),
                n
            )));
        }
        if let Some(labels) = &labels {
            if labels.len() != n {
                return Err(Error::InvalidDataset(format!(
                    "{} labels for {} samples",
                    labels.len(),
                    n
                )));
            }
        }
        if samples.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidDataset("non-finite sample value".into()));
        }
        let n_groups = groups.iter().copied().max().unwrap_or(0) + 1;
        let mut counts = vec![0usize; n_groups];
        for &g in &groups {
            counts[g] += 1;
        }
        if let Some(empty) = counts.iter().position(|&c| c == 0) {
            return Err(Error::InvalidDataset(format!(
                "noise group {} has no samples",
                empty + 1
            )));
        }
        Ok(Dataset {
            samples,
            groups,
            labels,
            n_groups,
        })
    }

    pub fn dim(&self) -> usize {
        self.samples.nrows()
    }

    pub fn len(&self) -> usize {
        self.samples.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.ncols() == 0
    }

    pub fn n_groups(&self) -> usize {
        self.n_groups
    }

    pub fn samples(&self) -> &DMatrix<f64> {
        &self.samples
    }

    /// Contiguous view of sample `i`.
    pub fn sample(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.samples.as_slice()[i * d..(i + 1) * d]
    }

    pub fn group(&self, i: usize) -> usize {
        self.groups[i]
    }

    pub fn groups(&self) -> &[usize] {
        &self.groups
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.n_groups];
        for &g in &self.groups {
            counts[g] += 1;
        }
        counts
    }

    /// Subset of samples in the given order. Group indices are kept as-is,
    /// so every original group must still be represented.
    pub fn select(&self, indices: &[usize]) -> Result<Dataset> {
        let d = self.dim();
        let mut data = Vec::with_capacity(d * indices.len());
        for &i in indices {
            data.extend_from_slice(self.sample(i));
        }
        let samples = DMatrix::from_vec(d, indices.len(), data);
        let groups = indices.iter().map(|&i| self.groups[i]).collect();
        let labels = self
            .labels
            .as_ref()
            .map(|l| indices.iter().map(|&i| l[i]).collect());
        Dataset::new(samples, groups, labels)
    }

    pub fn with_groups(&self, groups: Vec<usize>) -> Result<Dataset> {
        Dataset::new(self.samples.clone(), groups, self.labels.clone())
    }

    pub fn with_samples(&self, samples: DMatrix<f64>) -> Result<Dataset> {
        if samples.shape() != self.samples.shape() {
            return Err(Error::DimensionMismatch(format!(
                "replacement samples {:?} vs {:?}",
                samples.shape(),
                self.samples.shape()
            )));
        }
        Dataset::new(samples, self.groups.clone(), self.labels.clone())
    }

    /// Drops group information, placing every sample in one group.
    pub fn pooled(&self) -> Dataset {
        Dataset {
            samples: self.samples.clone(),
            groups: vec![0; self.len()],
            labels: self.labels.clone(),
            n_groups: 1,
        }
    }
}

/// Which index the noise variance attaches to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    /// One variance per noise group (heteroscedastic mixture, `v.len() == L`).
    Group,
    /// One variance per component (classical MPPCA, `v.len() == J`).
    Component,
}

/// Mixture parameters `[F, mu, v, pi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub factors: Vec<DMatrix<f64>>,
    pub means: Vec<DVector<f64>>,
    pub variances: Vec<f64>,
    pub weights: Vec<f64>,
    pub noise: NoiseKind,
}

impl ModelParams {
    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, |m| m.len())
    }

    pub fn rank(&self) -> usize {
        self.factors.first().map_or(0, |f| f.ncols())
    }

    /// Noise variance for a sample of `group` under component `component`.
    #[inline]
    pub fn variance(&self, group: usize, component: usize) -> f64 {
        match self.noise {
            NoiseKind::Group => self.variances[group],
            NoiseKind::Component => self.variances[component],
        }
    }

    /// Number of distinct variance slots (`L` for group noise, 1 otherwise).
    pub fn noise_slots(&self) -> usize {
        match self.noise {
            NoiseKind::Group => self.variances.len(),
            NoiseKind::Component => 1,
        }
    }

    /// Collapses a sample's group index onto the variance layout.
    #[inline]
    pub fn noise_slot(&self, group: usize) -> usize {
        match self.noise {
            NoiseKind::Group => group,
            NoiseKind::Component => 0,
        }
    }
}

/// Checks every [`ModelParams`] invariant against `hyper`.
pub fn validate_params(params: &ModelParams, hyper: &Hyper) -> Result<()> {
    hyper.validate()?;
    let j = hyper.components;
    if params.factors.len() != j || params.means.len() != j || params.weights.len() != j {
        return Err(Error::DimensionMismatch(format!(
            "expected {} components, got {} factors, {} means, {} weights",
            j,
            params.factors.len(),
            params.means.len(),
            params.weights.len()
        )));
    }
    for (c, f) in params.factors.iter().enumerate() {
        if f.shape() != (hyper.dim, hyper.rank) {
            return Err(Error::DimensionMismatch(format!(
                "factor {} is {:?}, expected {:?}",
                c + 1,
                f.shape(),
                (hyper.dim, hyper.rank)
            )));
        }
        if f.iter().any(|x| !x.is_finite()) {
            return Err(Error::DimensionMismatch(format!(
                "factor {} has non-finite entries",
                c + 1
            )));
        }
    }
    for (c, m) in params.means.iter().enumerate() {
        if m.len() != hyper.dim {
            return Err(Error::DimensionMismatch(format!(
                "mean {} has length {}, expected {}",
                c + 1,
                m.len(),
                hyper.dim
            )));
        }
        if m.iter().any(|x| !x.is_finite()) {
            return Err(Error::DimensionMismatch(format!(
                "mean {} has non-finite entries",
                c + 1
            )));
        }
    }
    let expected_v = match params.noise {
        NoiseKind::Group => hyper.groups,
        NoiseKind::Component => hyper.components,
    };
    if params.variances.len() != expected_v {
        return Err(Error::DimensionMismatch(format!(
            "expected {} variances, got {}",
            expected_v,
            params.variances.len()
        )));
    }
    for (index, &value) in params.variances.iter().enumerate() {
        // NaN fails this comparison too.
        if !(value >= VARIANCE_FLOOR) || !value.is_finite() {
            return Err(Error::InvalidVariance {
                index: index + 1,
                value,
                floor: VARIANCE_FLOOR,
            });
        }
    }
    if params.weights.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
        return Err(Error::NotSimplex(format!(
            "negative or non-finite weight in {:?}",
            params.weights
        )));
    }
    let total: f64 = params.weights.iter().sum();
    if (total - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::NotSimplex(format!("weights sum to {total}")));
    }
    Ok(())
}

/// Checks that a dataset can be modelled with `hyper`.
pub fn check_dataset(dataset: &Dataset, hyper: &Hyper) -> Result<()> {
    if dataset.dim() != hyper.dim {
        return Err(Error::DimensionMismatch(format!(
            "dataset dimension {} vs model dimension {}",
            dataset.dim(),
            hyper.dim
        )));
    }
    if dataset.n_groups() > hyper.groups {
        return Err(Error::DimensionMismatch(format!(
            "dataset has {} noise groups, model has {}",
            dataset.n_groups(),
            hyper.groups
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Tolerance,
    MaxIters,
    Degenerate,
}

/// Outcome of an EM fit. `ll_trace[0]` is the log-likelihood of the initial
/// parameters and `ll_trace[t]` the value after sweep `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub ll_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub stop_reason: StopReason,
    /// Set when `stop_reason` is `Degenerate`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degeneracy: Option<String>,
    /// Wall-clock time; not serialized so that report files stay reproducible.
    #[serde(skip)]
    pub elapsed_secs: f64,
}

impl FitReport {
    pub fn final_log_likelihood(&self) -> f64 {
        *self.ll_trace.last().unwrap_or(&f64::NEG_INFINITY)
    }

    /// Largest backwards step of the trace, relative to `1 + |LL|`.
    pub fn worst_decrease(&self) -> f64 {
        self.ll_trace
            .windows(2)
            .map(|w| (w[0] - w[1]) / (1.0 + w[1].abs()))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}
