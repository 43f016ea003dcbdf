//! Symmetric eigendecomposition for positive semidefinite matrices.
//!
//! nalgebra's symmetric solver can return NaN for matrices with identically
//! zero rows (a zero Householder vector during tridiagonalization). Those
//! rows only carry zero eigenpairs, so they are split off before solving,
//! and an SVD is the fallback if the solver still fails; for PSD input the
//! singular values are the eigenvalues.

use nalgebra::DMatrix;
use ndarray::Array2;

use crate::error::{Error, Result};

fn active_indices(m: &Array2<f64>) -> Vec<usize> {
    m.rows()
        .into_iter()
        .enumerate()
        .filter(|(_, r)| r.iter().any(|v| *v != 0.0))
        .map(|(i, _)| i)
        .collect()
}

fn failure(m: &Array2<f64>) -> Error {
    let n = m.nrows();
    let max_abs = m.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    Error::Numerical(format!(
        "eigendecomposition of a {n}x{n} matrix failed (max |entry| = {max_abs:e}, trace = {:e})",
        m.diag().sum()
    ))
}

fn finite<'a>(v: impl IntoIterator<Item = &'a f64>) -> bool {
    v.into_iter().all(|x| x.is_finite())
}

/// Eigenvalues (unordered) and matching unit eigenvectors as columns.
pub fn psd_eigen(m: &Array2<f64>) -> Result<(Vec<f64>, Array2<f64>)> {
    let n = m.nrows();
    let active = active_indices(m);
    let k = active.len();
    if k == 0 {
        return Ok((vec![0.0; n], Array2::eye(n)));
    }
    let sub = DMatrix::from_fn(k, k, |i, j| m[[active[i], active[j]]]);
    let eig = sub.clone().symmetric_eigen();
    let (values, vectors) = if finite(eig.eigenvalues.iter()) && finite(eig.eigenvectors.iter()) {
        (eig.eigenvalues.iter().copied().collect::<Vec<_>>(), eig.eigenvectors)
    } else {
        let svd = sub.svd(true, false);
        let u = svd.u.ok_or_else(|| failure(m))?;
        if !(finite(svd.singular_values.iter()) && finite(u.iter())) {
            return Err(failure(m));
        }
        (svd.singular_values.iter().copied().collect(), u)
    };
    let mut all_values = values;
    let mut all_vectors = Array2::<f64>::zeros((n, n));
    for c in 0..k {
        for (r, &i) in active.iter().enumerate() {
            all_vectors[[i, c]] = vectors[(r, c)];
        }
    }
    let mut c = k;
    for i in (0..n).filter(|i| !active.contains(i)) {
        all_values.push(0.0);
        all_vectors[[i, c]] = 1.0;
        c += 1;
    }
    Ok((all_values, all_vectors))
}

/// Eigenvalues only, unordered.
pub fn psd_eigenvalues(m: &Array2<f64>) -> Result<Vec<f64>> {
    let active = active_indices(m);
    let k = active.len();
    if k == 0 {
        return Ok(vec![0.0; m.nrows()]);
    }
    let sub = DMatrix::from_fn(k, k, |i, j| m[[active[i], active[j]]]);
    let mut values: Vec<f64> = sub.clone().symmetric_eigenvalues().iter().copied().collect();
    if !finite(&values) {
        values = sub.singular_values().iter().copied().collect();
        if !finite(&values) {
            return Err(failure(m));
        }
    }
    values.resize(m.nrows(), 0.0);
    Ok(values)
}
