//! Factor-recovery error, classification and component alignment.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::baselines::KPlanesState;
use crate::error::{Error, Result};
use crate::likelihood::{eval_component, ComponentCache};
use crate::model::{ModelParams, NoiseKind};

/// Largest component count for exhaustive permutation alignment.
pub const MAX_ALIGN: usize = 8;

/// `||F_hat F_hat^T - F F^T||_F / ||F F^T||_F`.
pub fn factor_error(f_hat: &DMatrix<f64>, f_true: &DMatrix<f64>) -> Result<f64> {
    if f_hat.nrows() != f_true.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "factor shapes {:?} and {:?}",
            f_hat.shape(),
            f_true.shape()
        )));
    }
    let truth = f_true * f_true.transpose();
    let denom = truth.norm();
    if denom == 0.0 {
        return Err(Error::InvalidConfig("reference factor is zero".into()));
    }
    Ok((f_hat * f_hat.transpose() - truth).norm() / denom)
}

/// All permutations of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut p: Vec<usize> = (0..n).collect();
    loop {
        out.push(p.clone());
        let Some(i) = (1..n).rev().find(|&i| p[i - 1] < p[i]) else {
            return out;
        };
        let j = (i..n).rev().find(|&j| p[j] > p[i - 1]).expect("pivot has a successor");
        p.swap(i - 1, j);
        p[i..].reverse();
    }
}

/// Matches fitted factors to reference factors. Returns `perm` with
/// `perm[j]` the fitted component assigned to reference `j`, and the
/// per-reference errors under that matching. The matching minimizes the
/// summed error; ties go to the lexicographically first permutation.
pub fn align_factors(fitted: &[DMatrix<f64>], truth: &[DMatrix<f64>]) -> Result<(Vec<usize>, Vec<f64>)> {
    let j = truth.len();
    if fitted.len() != j {
        return Err(Error::DimensionMismatch(format!(
            "{} fitted factors for {j} reference factors",
            fitted.len()
        )));
    }
    if j > MAX_ALIGN {
        return Err(Error::InvalidConfig(format!("alignment supports at most {MAX_ALIGN} components")));
    }
    let mut cost = vec![vec![0.0; j]; j];
    for (t, row) in cost.iter_mut().enumerate() {
        for (f, c) in row.iter_mut().enumerate() {
            *c = factor_error(&fitted[f], &truth[t])?;
        }
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for perm in permutations(j) {
        let total: f64 = perm.iter().enumerate().map(|(t, &f)| cost[t][f]).sum();
        if best.as_ref().is_none_or(|(b, _)| total < *b) {
            best = Some((total, perm));
        }
    }
    let (_, perm) = best.expect("at least one permutation");
    let errors = perm.iter().enumerate().map(|(t, &f)| cost[t][f]).collect();
    Ok((perm, errors))
}

/// Maximum-a-posteriori component assignment under a fitted mixture.
#[derive(Debug, Clone)]
pub struct Classifier<'a> {
    params: &'a ModelParams,
    cache: ComponentCache,
    log_weights: Vec<f64>,
}

impl<'a> Classifier<'a> {
    pub fn new(params: &'a ModelParams) -> Result<Self> {
        Ok(Classifier {
            cache: ComponentCache::new(params)?,
            log_weights: params.weights.iter().map(|p| p.ln()).collect(),
            params,
        })
    }

    /// `argmax_j log pi_j + log p(y | j, group)`, ties to the lowest index.
    /// The group is ignored for per-component noise.
    pub fn classify(&self, y: &[f64], group: usize) -> Result<usize> {
        let p = self.params;
        if y.len() != p.dim() {
            return Err(Error::DimensionMismatch(format!(
                "sample of length {} for a {}-dimensional model",
                y.len(),
                p.dim()
            )));
        }
        if p.noise == NoiseKind::Group && group >= p.variances.len() {
            return Err(Error::DimensionMismatch(format!(
                "noise group {} but the model has {}",
                group + 1,
                p.variances.len()
            )));
        }
        let mut ybar = vec![0.0; y.len()];
        let mut u = vec![0.0; p.rank()];
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for j in 0..p.n_components() {
            if self.log_weights[j] == f64::NEG_INFINITY {
                continue;
            }
            let entry = self.cache.entry(group, j);
            let (lp, _) = eval_component(y, p.means[j].as_slice(), &p.factors[j], entry, &mut ybar, &mut u);
            let score = self.log_weights[j] + lp;
            if score > best_score {
                best_score = score;
                best = j;
            }
        }
        Ok(best)
    }

    /// Classifies the columns of `samples`.
    pub fn predict(&self, samples: &DMatrix<f64>, groups: &[usize]) -> Result<Vec<usize>> {
        if groups.len() != samples.ncols() {
            return Err(Error::DimensionMismatch("one group index per sample required".into()));
        }
        let d = samples.nrows();
        let data = samples.as_slice();
        (0..samples.ncols())
            .map(|i| self.classify(&data[i * d..(i + 1) * d], groups[i]))
            .collect()
    }
}

/// Single-sample convenience wrapper around [`Classifier`].
pub fn classify(y: &[f64], group: usize, params: &ModelParams) -> Result<usize> {
    Classifier::new(params)?.classify(y, group)
}

/// Nearest affine subspace under a K-Planes fit.
pub fn predict_nearest_subspace(state: &KPlanesState, samples: &DMatrix<f64>) -> Result<Vec<usize>> {
    let d = samples.nrows();
    if state.means.first().is_some_and(|m| m.len() != d) {
        return Err(Error::DimensionMismatch("sample and subspace dimensions differ".into()));
    }
    let data = samples.as_slice();
    Ok((0..samples.ncols()).map(|i| state.nearest(&data[i * d..(i + 1) * d])).collect())
}

fn confusion(predictions: &[usize], labels: &[usize], classes: usize) -> Result<Vec<Vec<usize>>> {
    if predictions.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::InvalidDataset("no predictions to score".into()));
    }
    if predictions.iter().chain(labels).any(|&x| x >= classes) {
        return Err(Error::InvalidDataset(format!("label outside 1..={classes}")));
    }
    let mut counts = vec![vec![0usize; classes]; classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        counts[p][l] += 1;
    }
    Ok(counts)
}

/// Relabelling `perm` (prediction `p` becomes `perm[p]`) that maximizes
/// agreement with `labels`; ties go to the lexicographically first
/// permutation.
pub fn best_permutation(predictions: &[usize], labels: &[usize], classes: usize) -> Result<Vec<usize>> {
    if classes > MAX_ALIGN {
        return Err(Error::InvalidConfig(format!("alignment supports at most {MAX_ALIGN} classes")));
    }
    let counts = confusion(predictions, labels, classes)?;
    let hits = |perm: &[usize]| -> usize { (0..classes).map(|p| counts[p][perm[p]]).sum() };
    let mut best = (0..classes).collect::<Vec<_>>();
    let mut best_hits = 0;
    for perm in permutations(classes) {
        let h = hits(&perm);
        if h > best_hits {
            best_hits = h;
            best = perm;
        }
    }
    Ok(best)
}

/// Fraction of mismatches between predictions and labels in `0..classes`.
/// With `align`, predictions are first relabelled by [`best_permutation`].
pub fn misclassification_rate(predictions: &[usize], labels: &[usize], classes: usize, align: bool) -> Result<f64> {
    let counts = confusion(predictions, labels, classes)?;
    let perm = if align {
        best_permutation(predictions, labels, classes)?
    } else {
        (0..classes).collect()
    };
    let correct: usize = (0..classes).map(|p| counts[p][perm[p]]).sum();
    Ok(1.0 - correct as f64 / predictions.len() as f64)
}

/// One line of a classification report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    /// Noise group (1-based) or `overall`.
    pub group: String,
    pub method: String,
    pub error_rate: f64,
}

/// Per-group and overall misclassification rates of one method.
pub fn report_rows(
    method: &str,
    predictions: &[usize],
    labels: &[usize],
    groups: &[usize],
    classes: usize,
    align: bool,
) -> Result<Vec<ReportRow>> {
    let mut rows = Vec::new();
    let n_groups = groups.iter().copied().max().map_or(0, |g| g + 1);
    for g in 0..n_groups {
        let idx: Vec<usize> = (0..groups.len()).filter(|&i| groups[i] == g).collect();
        if idx.is_empty() {
            continue;
        }
        let p: Vec<usize> = idx.iter().map(|&i| predictions[i]).collect();
        let l: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        rows.push(ReportRow {
            group: (g + 1).to_string(),
            method: method.to_string(),
            error_rate: misclassification_rate(&p, &l, classes, align)?,
        });
    }
    rows.push(ReportRow {
        group: "overall".into(),
        method: method.to_string(),
        error_rate: misclassification_rate(predictions, labels, classes, align)?,
    });
    Ok(rows)
}

pub fn write_report<W: std::io::Write>(rows: &[ReportRow], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for row in rows {
        wtr.serialize(row)?;
    }
    wtr.flush()?;
    Ok(())
}
