//! Deterministic wrappers around nalgebra's symmetric eigensolver and SVD:
//! results sorted descending, and each singular/eigen vector flipped so its
//! largest-magnitude entry is positive.

use nalgebra::{DMatrix, DVector};

use crate::scalar::Real;

/// Index of the entry with the largest magnitude (first one on ties).
fn pivot<T: Real>(v: impl Iterator<Item = T>) -> usize {
    let mut best = 0;
    let mut best_abs = T::zero();
    for (i, x) in v.enumerate() {
        if x.abs() > best_abs {
            best = i;
            best_abs = x.abs();
        }
    }
    best
}

/// Sign that makes the largest-magnitude entry of column `j` positive.
pub(crate) fn column_sign<T: Real>(m: &DMatrix<T>, j: usize) -> T {
    let col = m.column(j);
    let i = pivot(col.iter().copied());
    if col[i] < T::zero() {
        -T::one()
    } else {
        T::one()
    }
}

/// `W = V diag(λ) Vᵀ` with `λ` descending.
pub fn sym_eigen_desc<T: Real>(w: &DMatrix<T>) -> (DVector<T>, DMatrix<T>) {
    let n = w.nrows();
    let sym = (w + w.transpose()) * T::lit(0.5);
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let sign = column_sign(&eig.eigenvectors, src);
        vectors.set_column(dst, &(eig.eigenvectors.column(src) * sign));
    }
    (values, vectors)
}

/// Eigenvalues only, descending.
pub fn sym_eigenvalues_desc<T: Real>(w: &DMatrix<T>) -> DVector<T> {
    let sym = (w + w.transpose()) * T::lit(0.5);
    let mut values: Vec<T> = sym.symmetric_eigenvalues().iter().copied().collect();
    values.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    DVector::from_vec(values)
}

/// Thin SVD `M = U diag(σ) Vᵀ` with `σ` descending; signs fixed on `U`.
pub fn svd_desc<T: Real>(m: &DMatrix<T>) -> (DMatrix<T>, DVector<T>, DMatrix<T>) {
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    let r = svd.singular_values.len();
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let sigma = DVector::from_iterator(r, order.iter().map(|&i| svd.singular_values[i]));
    let mut u_sorted = DMatrix::zeros(u.nrows(), r);
    let mut v_sorted = DMatrix::zeros(v_t.ncols(), r);
    for (dst, &src) in order.iter().enumerate() {
        let sign = column_sign(&u, src);
        u_sorted.set_column(dst, &(u.column(src) * sign));
        v_sorted.set_column(dst, &(v_t.row(src).transpose() * sign));
    }
    (u_sorted, sigma, v_sorted)
}

/// Ratio of extreme singular values (infinite for singular input).
pub fn condition_number<T: Real>(m: &DMatrix<T>) -> T {
    let sv = m.clone().singular_values();
    let max = sv.iter().copied().fold(T::zero(), |a, b| a.max(b));
    let min = sv.iter().copied().fold(max, |a, b| a.min(b));
    if min > T::zero() {
        max / min
    } else {
        T::one() / T::zero()
    }
}
