//! Small dense helpers shared by the fitting and variance code.

use nalgebra::{DMatrix, DVector};

use crate::error::{PelError, Result};

/// Cholesky factorization of a symmetric positive definite matrix with a
/// relative pivot tolerance: a pivot below `rel_tol * max(diag(a))` is
/// treated as rank deficiency.
pub(crate) fn cholesky(a: &DMatrix<f64>, rel_tol: f64, what: &str) -> Result<DMatrix<f64>> {
    let p = a.nrows();
    let scale = (0..p).map(|i| a[(i, i)]).fold(0.0_f64, f64::max);
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(PelError::SingularDesign(what.to_string()));
    }
    let mut l = DMatrix::zeros(p, p);
    for k in 0..p {
        let mut d = a[(k, k)];
        for m in 0..k {
            d -= l[(k, m)] * l[(k, m)];
        }
        if d <= rel_tol * scale || !d.is_finite() {
            return Err(PelError::SingularDesign(what.to_string()));
        }
        let dk = d.sqrt();
        l[(k, k)] = dk;
        for i in (k + 1)..p {
            let mut s = a[(i, k)];
            for m in 0..k {
                s -= l[(i, m)] * l[(k, m)];
            }
            l[(i, k)] = s / dk;
        }
    }
    Ok(l)
}

/// Solves `L L^T x = b` given the lower factor.
pub(crate) fn cholesky_solve(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let p = l.nrows();
    let mut z = b.clone();
    for i in 0..p {
        let mut s = z[i];
        for k in 0..i {
            s -= l[(i, k)] * z[k];
        }
        z[i] = s / l[(i, i)];
    }
    for i in (0..p).rev() {
        let mut s = z[i];
        for k in (i + 1)..p {
            s -= l[(k, i)] * z[k];
        }
        z[i] = s / l[(i, i)];
    }
    z
}

/// 2-norm condition number from the singular values.
pub(crate) fn condition_number(a: &DMatrix<f64>) -> f64 {
    let sv = a.clone().singular_values();
    let max = sv.iter().copied().fold(0.0_f64, f64::max);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Inverse via LU with partial pivoting, refusing matrices whose condition
/// number exceeds `max_cond`.
pub(crate) fn checked_inverse(
    a: &DMatrix<f64>,
    max_cond: f64,
    name: &str,
) -> Result<(DMatrix<f64>, f64)> {
    let cond = condition_number(a);
    if !cond.is_finite() || cond > max_cond {
        return Err(PelError::SingularMatrix {
            name: name.to_string(),
            condition: cond,
        });
    }
    let inv = a
        .clone()
        .lu()
        .try_inverse()
        .ok_or_else(|| PelError::SingularMatrix {
            name: name.to_string(),
            condition: cond,
        })?;
    Ok((inv, cond))
}
