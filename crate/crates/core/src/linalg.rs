//! Small dense helpers: a k x k Cholesky factor working on plain slices for
//! the inner loops, and principal directions of a point cloud.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Lower Cholesky factor of a small SPD matrix, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SmallCholesky {
    n: usize,
    l: Vec<f64>,
    min_pivot: f64,
}

impl SmallCholesky {
    /// Factors `a`; `None` if a pivot is not strictly positive.
    pub fn new(a: &DMatrix<f64>) -> Option<Self> {
        let n = a.nrows();
        debug_assert_eq!(n, a.ncols());
        let mut l = vec![0.0; n * n];
        let mut min_pivot = f64::INFINITY;
        for i in 0..n {
            for j in 0..=i {
                let mut s = a[(i, j)];
                for p in 0..j {
                    s -= l[i * n + p] * l[j * n + p];
                }
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return None;
                    }
                    min_pivot = min_pivot.min(s);
                    l[i * n + i] = s.sqrt();
                } else {
                    l[i * n + j] = s / l[j * n + j];
                }
            }
        }
        Some(SmallCholesky { n, l, min_pivot })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Smallest pivot `L_ii^2` met during factorization.
    pub fn min_pivot(&self) -> f64 {
        self.min_pivot
    }

    pub fn ln_det(&self) -> f64 {
        (0..self.n).map(|i| self.l[i * self.n + i].ln()).sum::<f64>() * 2.0
    }

    /// Solves `L x = b` in place.
    #[inline]
    pub fn forward(&self, b: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let mut s = b[i];
            for p in 0..i {
                s -= self.l[i * n + p] * b[p];
            }
            b[i] = s / self.l[i * n + i];
        }
    }

    /// Solves `L^T x = b` in place.
    #[inline]
    pub fn backward(&self, b: &mut [f64]) {
        let n = self.n;
        for i in (0..n).rev() {
            let mut s = b[i];
            for p in i + 1..n {
                s -= self.l[p * n + i] * b[p];
            }
            b[i] = s / self.l[i * n + i];
        }
    }

    /// Solves `A x = b` in place.
    #[inline]
    pub fn solve_in_place(&self, b: &mut [f64]) {
        self.forward(b);
        self.backward(b);
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = b.clone();
        self.solve_in_place(x.as_mut_slice());
        x
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        let n = self.n;
        let mut inv = DMatrix::identity(n, n);
        for c in 0..n {
            let mut col = inv.column(c).clone_owned();
            self.solve_in_place(col.as_mut_slice());
            inv.set_column(c, &col);
        }
        symmetrize(&mut inv);
        inv
    }
}

/// Replaces `a` by `(a + a^T) / 2`.
pub fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in 0..i {
            let m = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = m;
            a[(j, i)] = m;
        }
    }
}

/// Flips each column so that its largest-magnitude entry (first on ties) is
/// positive. Makes eigen/SVD bases reproducible across code paths.
pub fn fix_signs(u: &mut DMatrix<f64>) {
    for mut col in u.column_iter_mut() {
        let mut best = 0usize;
        for (i, x) in col.iter().enumerate() {
            if x.abs() > col[best].abs() {
                best = i;
            }
        }
        if col[best] < 0.0 {
            col.neg_mut();
        }
    }
}

/// Top-`k` eigenpairs of a symmetric matrix, eigenvalues descending.
pub fn top_eigen(sym: &DMatrix<f64>, k: usize) -> (DMatrix<f64>, Vec<f64>) {
    let eig = SymmetricEigen::new(sym.clone());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let d = sym.nrows();
    let mut u = DMatrix::zeros(d, k);
    let mut values = Vec::with_capacity(k);
    for (c, &idx) in order.iter().take(k).enumerate() {
        u.set_column(c, &eig.eigenvectors.column(idx));
        values.push(eig.eigenvalues[idx]);
    }
    fix_signs(&mut u);
    (u, values)
}

/// Principal directions of a point cloud.
#[derive(Debug, Clone)]
pub struct Principal {
    pub mean: DVector<f64>,
    /// `d x k`, orthonormal columns.
    pub basis: DMatrix<f64>,
    /// Singular values of the centered data matrix, descending.
    pub singular_values: Vec<f64>,
    /// Sum of squared distances to the affine subspace `mean + span(basis)`.
    pub residual: f64,
    pub count: usize,
}

/// Mean and top-`k` right singular directions of the centered samples
/// `data[:, idx]` (columns are points).
pub fn principal_directions(data: &DMatrix<f64>, idx: &[usize], k: usize) -> Principal {
    let d = data.nrows();
    let mut mean = DVector::zeros(d);
    for &i in idx {
        mean += data.column(i);
    }
    if !idx.is_empty() {
        mean /= idx.len() as f64;
    }
    let mut centered = DMatrix::zeros(d, idx.len());
    for (c, &i) in idx.iter().enumerate() {
        centered.set_column(c, &(data.column(i) - &mean));
    }
    let scatter = &centered * centered.transpose();
    let (basis, values) = top_eigen(&scatter, k);
    let total: f64 = centered.iter().map(|x| x * x).sum();
    let captured: f64 = values.iter().map(|v| v.max(0.0)).sum();
    let singular_values = values.iter().map(|v| v.max(0.0).sqrt()).collect();
    // Project explicitly rather than trusting `total - captured`, which loses
    // precision when the residual is tiny.
    let proj = basis.transpose() * &centered;
    let residual = (&centered - &basis * proj).iter().map(|x| x * x).sum::<f64>();
    debug_assert!(residual <= total + 1e-9 * (1.0 + total) || captured.is_nan());
    Principal {
        mean,
        basis,
        singular_values,
        residual,
        count: idx.len(),
    }
}

/// Squared distance from `y` to the affine subspace `mean + span(basis)`
/// (`basis` must have orthonormal columns).
#[inline]
pub fn affine_residual(y: &[f64], mean: &[f64], basis: &DMatrix<f64>, scratch: &mut [f64]) -> f64 {
    let d = y.len();
    let mut sq = 0.0;
    for t in 0..d {
        scratch[t] = y[t] - mean[t];
        sq += scratch[t] * scratch[t];
    }
    let b = basis.as_slice();
    for c in 0..basis.ncols() {
        let col = &b[c * d..(c + 1) * d];
        let p: f64 = col.iter().zip(scratch.iter()).map(|(a, x)| a * x).sum();
        sq -= p * p;
    }
    sq.max(0.0)
}
