//! D^2 seeding.

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::Dataset;
use crate::rng::SeedChain;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Picks `count` distinct sample indices: the first uniformly, each later one
/// with probability proportional to its squared distance to the nearest
/// chosen center. Once every remaining point coincides with a center, the
/// rest are drawn uniformly from the unchosen indices.
pub fn kmeanspp_seed(dataset: &Dataset, count: usize, seed: SeedChain) -> Result<Vec<usize>> {
    let n = dataset.len();
    if count == 0 || count > n {
        return Err(Error::InvalidConfig(format!(
            "cannot seed {count} centers from {n} samples"
        )));
    }
    let mut rng = seed.rng();
    let mut chosen = Vec::with_capacity(count);
    let mut taken = vec![false; n];
    let first = rng.random_range(0..n);
    chosen.push(first);
    taken[first] = true;
    let mut dist: Vec<f64> = (0..n)
        .map(|i| sq_dist(dataset.sample(i), dataset.sample(first)))
        .collect();
    while chosen.len() < count {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in dist.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                acc += w;
                pick = Some(i);
                if acc > target {
                    break;
                }
            }
            pick.expect("positive total implies a positive weight")
        } else {
            let free: Vec<usize> = (0..n).filter(|&i| !taken[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        taken[next] = true;
        for (i, d) in dist.iter_mut().enumerate() {
            *d = d.min(sq_dist(dataset.sample(i), dataset.sample(next)));
        }
    }
    Ok(chosen)
}

/// Assigns each sample to its nearest center (ties to the lowest index).
pub fn nearest_center(dataset: &Dataset, centers: &[usize]) -> Vec<usize> {
    (0..dataset.len())
        .map(|i| {
            let y = dataset.sample(i);
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, &idx) in centers.iter().enumerate() {
                let dd = sq_dist(y, dataset.sample(idx));
                if dd < best_d {
                    best_d = dd;
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Lloyd's k-means from an initial assignment, for at most `iters` rounds
/// or until the assignment stops changing. An empty cluster keeps its
/// previous center.
pub fn lloyd(dataset: &Dataset, components: usize, mut assignment: Vec<usize>, iters: usize) -> Vec<usize> {
    let d = dataset.dim();
    let mut centers = vec![vec![0.0; d]; components];
    for _ in 0..iters {
        let mut sums = vec![vec![0.0; d]; components];
        let mut counts = vec![0usize; components];
        for (i, &a) in assignment.iter().enumerate() {
            counts[a] += 1;
            for (s, y) in sums[a].iter_mut().zip(dataset.sample(i)) {
                *s += y;
            }
        }
        for c in 0..components {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        let next: Vec<usize> = (0..dataset.len())
            .map(|i| {
                let y = dataset.sample(i);
                let mut best = 0;
                let mut best_d = f64::INFINITY;
                for (c, center) in centers.iter().enumerate() {
                    let dd = sq_dist(y, center);
                    if dd < best_d {
                        best_d = dd;
                        best = c;
                    }
                }
                best
            })
            .collect();
        if next == assignment {
            break;
        }
        assignment = next;
    }
    assignment
}
