//! K-Planes: alternate between assigning each sample to the affine subspace
//! it is closest to and refitting every subspace by PCA of its members.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;

use crate::baselines::kmeanspp::{kmeanspp_seed, lloyd, nearest_center};
use crate::error::{Error, Result};
use crate::linalg::{affine_residual, principal_directions};
use crate::model::Dataset;
use crate::rng::SeedChain;

#[derive(Debug, Clone)]
pub struct KPlanesState {
    /// `d x k` orthonormal bases.
    pub bases: Vec<DMatrix<f64>>,
    pub means: Vec<DVector<f64>>,
    /// Singular values of each centered cluster, descending.
    pub singular_values: Vec<Vec<f64>>,
    pub counts: Vec<usize>,
    pub assignment: Vec<usize>,
    /// Sum of squared distances to the assigned subspaces.
    pub objective: f64,
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    /// True when the last assignment step changed nothing.
    pub converged: bool,
}

impl KPlanesState {
    pub fn n_components(&self) -> usize {
        self.bases.len()
    }

    /// Squared distance from `y` to subspace `j`.
    pub fn residual(&self, y: &[f64], j: usize) -> f64 {
        let mut scratch = vec![0.0; y.len()];
        affine_residual(y, self.means[j].as_slice(), &self.bases[j], &mut scratch)
    }

    /// Index of the nearest affine subspace (ties to the lowest index).
    pub fn nearest(&self, y: &[f64]) -> usize {
        let mut scratch = vec![0.0; y.len()];
        let mut best = 0;
        let mut best_r = f64::INFINITY;
        for j in 0..self.n_components() {
            let r = affine_residual(y, self.means[j].as_slice(), &self.bases[j], &mut scratch);
            if r < best_r {
                best_r = r;
                best = j;
            }
        }
        best
    }

    /// `U_j diag(s_j) / sqrt(n_j - 1)`: a factor whose gram estimates the
    /// cluster covariance restricted to the fitted subspace.
    pub fn factor_estimate(&self, j: usize) -> DMatrix<f64> {
        let denom = (self.counts[j].max(2) - 1) as f64;
        let mut f = self.bases[j].clone();
        for (c, s) in self.singular_values[j].iter().enumerate() {
            f.column_mut(c).scale_mut(s / denom.sqrt());
        }
        f
    }
}

/// Independent starts tried by [`kplanes`].
pub const KPLANES_RESTARTS: u64 = 5;

/// Best of [`KPLANES_RESTARTS`] runs by final objective (ties to the
/// earliest start). Each start seeds with K-Means++, refines the clustering
/// with Lloyd's k-means, then runs [`kplanes_from`].
pub fn kplanes(
    dataset: &Dataset,
    components: usize,
    rank: usize,
    iters: usize,
    seed: SeedChain,
) -> Result<KPlanesState> {
    let mut best: Option<KPlanesState> = None;
    for r in 0..KPLANES_RESTARTS {
        let centers = kmeanspp_seed(dataset, components, seed.child(r))?;
        let assignment = lloyd(dataset, components, nearest_center(dataset, &centers), iters);
        let state = kplanes_from(dataset, components, rank, assignment, iters)?;
        if best.as_ref().is_none_or(|b| state.objective < b.objective) {
            best = Some(state);
        }
    }
    Ok(best.expect("at least one start"))
}

/// Starts from a seeded random balanced assignment (sample `perm[i]` goes
/// to cluster `i mod J`), then runs [`kplanes_from`].
pub fn kplanes_random(
    dataset: &Dataset,
    components: usize,
    rank: usize,
    iters: usize,
    seed: SeedChain,
) -> Result<KPlanesState> {
    let n = dataset.len();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut seed.rng());
    let mut assignment = vec![0usize; n];
    for (i, &p) in perm.iter().enumerate() {
        assignment[p] = i % components.max(1);
    }
    kplanes_from(dataset, components, rank, assignment, iters)
}

/// Seeds with K-Means++ and a nearest-center pass, then runs [`kplanes_from`].
pub fn kplanes_kmeanspp(
    dataset: &Dataset,
    components: usize,
    rank: usize,
    iters: usize,
    seed: SeedChain,
) -> Result<KPlanesState> {
    let centers = kmeanspp_seed(dataset, components, seed)?;
    let assignment = nearest_center(dataset, &centers);
    kplanes_from(dataset, components, rank, assignment, iters)
}

/// Runs up to `iters` assignment/refit rounds from a given assignment,
/// stopping early at a fixed point.
pub fn kplanes_from(
    dataset: &Dataset,
    components: usize,
    rank: usize,
    mut assignment: Vec<usize>,
    iters: usize,
) -> Result<KPlanesState> {
    let n = dataset.len();
    let d = dataset.dim();
    if components == 0 || components > n {
        return Err(Error::InvalidConfig(format!(
            "K-Planes needs 1 <= J <= n, got J={components} n={n}"
        )));
    }
    if rank == 0 || rank >= d {
        return Err(Error::InvalidHyper(format!("need 1 <= k < d, got k={rank} d={d}")));
    }
    if assignment.len() != n || assignment.iter().any(|&a| a >= components) {
        return Err(Error::InvalidConfig("assignment out of range".into()));
    }

    let mut scratch = vec![0.0; d];
    let residuals_under = |state: &KPlanesState, assignment: &[usize], scratch: &mut [f64]| -> Vec<f64> {
        (0..n)
            .map(|i| {
                let j = assignment[i];
                affine_residual(dataset.sample(i), state.means[j].as_slice(), &state.bases[j], scratch)
            })
            .collect()
    };

    // An initial assignment may leave clusters empty (their placeholder
    // subspace sits at the origin); hand each the worst-fitting sample.
    let initial_state = refit(dataset, components, rank, &assignment);
    let res = residuals_under(&initial_state, &assignment, &mut scratch);
    fill_empty(&mut assignment, &res, components);

    let mut state = refit(dataset, components, rank, &assignment);
    state.objective_trace.push(state.objective);

    for _ in 0..iters {
        let mut next = vec![0usize; n];
        let mut res = vec![0.0; n];
        for i in 0..n {
            let y = dataset.sample(i);
            let mut best = 0;
            let mut best_r = f64::INFINITY;
            for j in 0..components {
                let r = affine_residual(y, state.means[j].as_slice(), &state.bases[j], &mut scratch);
                if r < best_r {
                    best_r = r;
                    best = j;
                }
            }
            next[i] = best;
            res[i] = best_r;
        }
        fill_empty(&mut next, &res, components);
        if next == assignment {
            state.converged = true;
            break;
        }
        assignment = next;
        let trace = std::mem::take(&mut state.objective_trace);
        let iterations = state.iterations + 1;
        state = refit(dataset, components, rank, &assignment);
        state.objective_trace = trace;
        state.objective_trace.push(state.objective);
        state.iterations = iterations;
    }
    Ok(state)
}

/// Moves, for each empty cluster in index order, the sample with the largest
/// residual among clusters holding more than one sample.
fn fill_empty(assignment: &mut [usize], residuals: &[f64], components: usize) {
    let mut counts = vec![0usize; components];
    for &a in assignment.iter() {
        counts[a] += 1;
    }
    for c in 0..components {
        if counts[c] > 0 {
            continue;
        }
        let mut pick: Option<usize> = None;
        for i in 0..assignment.len() {
            if counts[assignment[i]] <= 1 {
                continue;
            }
            if pick.is_none_or(|p| residuals[i] > residuals[p]) {
                pick = Some(i);
            }
        }
        if let Some(i) = pick {
            counts[assignment[i]] -= 1;
            assignment[i] = c;
            counts[c] = 1;
        }
    }
}

fn members(assignment: &[usize], components: usize) -> Vec<Vec<usize>> {
    let mut m = vec![Vec::new(); components];
    for (i, &a) in assignment.iter().enumerate() {
        m[a].push(i);
    }
    m
}

fn refit(dataset: &Dataset, components: usize, rank: usize, assignment: &[usize]) -> KPlanesState {
    let groups = members(assignment, components);
    let mut state = KPlanesState {
        bases: Vec::with_capacity(components),
        means: Vec::with_capacity(components),
        singular_values: Vec::with_capacity(components),
        counts: Vec::with_capacity(components),
        assignment: assignment.to_vec(),
        objective: 0.0,
        objective_trace: Vec::new(),
        iterations: 0,
        converged: false,
    };
    for idx in &groups {
        let p = principal_directions(dataset.samples(), idx, rank);
        state.objective += p.residual;
        state.bases.push(p.basis);
        state.means.push(p.mean);
        state.singular_values.push(p.singular_values);
        state.counts.push(p.count);
    }
    state
}
