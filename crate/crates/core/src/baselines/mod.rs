//! Comparison methods: K-Planes, classical MPPCA and K-Means++ seeding,
//! plus the cluster-to-parameters conversion the initializers share.

pub mod kmeanspp;
pub mod kplanes;
pub mod mppca;

use crate::linalg::{affine_residual, principal_directions};
use crate::model::{Dataset, ModelParams, NoiseKind, VARIANCE_FLOOR};

pub use kmeanspp::{kmeanspp_seed, lloyd, nearest_center};
pub use kplanes::{kplanes, kplanes_from, kplanes_kmeanspp, kplanes_random, KPlanesState};
pub use mppca::{mppca_fit, mppca_from_kplanes};

/// Mixture parameters from a hard clustering.
///
/// Each component gets its cluster mean and `U diag(s) / sqrt(n_j)` from the
/// top-`rank` principal directions of its members; clusters with fewer than
/// `rank + 1` members borrow the global directions. Variances are the pooled
/// per-dimension residual to the assigned affine subspace, per noise group
/// or per cluster according to `noise`. Weights follow cluster sizes (an
/// empty cluster counts as one sample so every weight stays positive).
pub fn params_from_clusters(
    dataset: &Dataset,
    components: usize,
    rank: usize,
    assignment: &[usize],
    noise: NoiseKind,
) -> ModelParams {
    let n = dataset.len();
    let d = dataset.dim();
    let mut members = vec![Vec::new(); components];
    for (i, &a) in assignment.iter().enumerate() {
        members[a].push(i);
    }
    let all: Vec<usize> = (0..n).collect();
    let global = principal_directions(dataset.samples(), &all, rank);

    let mut factors = Vec::with_capacity(components);
    let mut means = Vec::with_capacity(components);
    let mut bases = Vec::with_capacity(components);
    for idx in &members {
        let local = principal_directions(dataset.samples(), idx, rank);
        let mean = if idx.is_empty() {
            global.mean.clone()
        } else {
            local.mean.clone()
        };
        let (basis, svals, count) = if idx.len() > rank {
            (local.basis, local.singular_values, idx.len())
        } else {
            (global.basis.clone(), global.singular_values.clone(), n)
        };
        let mut f = basis.clone();
        for (c, s) in svals.iter().enumerate() {
            f.column_mut(c).scale_mut(s / (count as f64).sqrt());
        }
        factors.push(f);
        means.push(mean);
        bases.push(basis);
    }

    let mut scratch = vec![0.0; d];
    let residuals: Vec<f64> = (0..n)
        .map(|i| {
            let j = assignment[i];
            affine_residual(dataset.sample(i), means[j].as_slice(), &bases[j], &mut scratch)
        })
        .collect();
    let dof = (d - rank) as f64;
    let pooled = (residuals.iter().sum::<f64>() / (n as f64 * dof)).max(VARIANCE_FLOOR);
    let variances = match noise {
        NoiseKind::Group => {
            let mut num = vec![0.0; dataset.n_groups()];
            let mut cnt = vec![0usize; dataset.n_groups()];
            for i in 0..n {
                num[dataset.group(i)] += residuals[i];
                cnt[dataset.group(i)] += 1;
            }
            num.iter()
                .zip(&cnt)
                .map(|(&s, &c)| (s / (c as f64 * dof)).max(VARIANCE_FLOOR))
                .collect()
        }
        NoiseKind::Component => members
            .iter()
            .map(|idx| {
                if idx.is_empty() {
                    pooled
                } else {
                    let s: f64 = idx.iter().map(|&i| residuals[i]).sum();
                    (s / (idx.len() as f64 * dof)).max(VARIANCE_FLOOR)
                }
            })
            .collect(),
    };

    let sizes: Vec<f64> = members.iter().map(|m| m.len().max(1) as f64).collect();
    let total: f64 = sizes.iter().sum();
    let weights = sizes.iter().map(|s| s / total).collect();
    ModelParams {
        factors,
        means,
        variances,
        weights,
        noise,
    }
}

