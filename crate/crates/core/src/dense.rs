//! Small dense kernels for the hot loops, plus the normal-equation solve.

use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::math::{ln, sqrt};

/// In-place Cholesky of a row-major `n × n` SPD matrix (lower triangle used).
/// Returns `log|A|`.
pub(crate) fn chol_in_place(a: &mut [f64], n: usize) -> Option<f64> {
    let mut logdet = 0.0;
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let l = sqrt(d);
        a[j * n + j] = l;
        logdet += 2.0 * ln(l);
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / l;
        }
    }
    Some(logdet)
}

/// Solve `L Lᵀ x = b` in place, `L` from [`chol_in_place`].
pub(crate) fn chol_solve(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// Reciprocal-condition threshold on the unit-diagonal normal matrix.
const RANK_TOL: f64 = 1e-12;

/// Solve the symmetric normal equations `A β = b`, naming the offending
/// columns when `A` is numerically rank deficient.
pub(crate) fn solve_normal(a: &DMatrix<f64>, b: &DVector<f64>, names: &[String]) -> Result<DVector<f64>> {
    let p = a.nrows();
    let mut scale = Vec::with_capacity(p);
    for i in 0..p {
        let d = a[(i, i)];
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::RankDeficient { columns: alloc::vec![column_name(names, i)] });
        }
        scale.push(1.0 / sqrt(d));
    }
    let scaled = DMatrix::from_fn(p, p, |r, c| a[(r, c)] * scale[r] * scale[c]);
    if let Some(chol) = scaled.clone().cholesky() {
        let min_pivot = chol.l_dirty().diagonal().iter().fold(f64::INFINITY, |m, v| m.min(*v));
        if min_pivot * min_pivot > RANK_TOL {
            let rhs = DVector::from_fn(p, |i, _| b[i] * scale[i]);
            let sol = chol.solve(&rhs);
            return Ok(DVector::from_fn(p, |i, _| sol[i] * scale[i]));
        }
    }
    Err(Error::RankDeficient { columns: collinear_columns(&scaled, names) })
}

fn column_name(names: &[String], i: usize) -> String {
    names.get(i).cloned().unwrap_or_else(|| alloc::format!("column {i}"))
}

/// Columns that column-pivoted QR places past the numerical rank.
fn collinear_columns(a: &DMatrix<f64>, names: &[String]) -> Vec<String> {
    let p = a.ncols();
    let qr = a.clone().col_piv_qr();
    let r = qr.r();
    let r0 = r[(0, 0)].abs();
    let rank = (0..p).take_while(|&i| r[(i, i)].abs() > sqrt(RANK_TOL) * r0).count();
    let mut order = DMatrix::from_fn(1, p, |_, c| c as f64);
    qr.p().permute_columns(&mut order);
    let mut cols: Vec<usize> = (rank.max(1)..p).map(|i| order[(0, i)] as usize).collect();
    if cols.is_empty() {
        cols.push(order[(0, p - 1)] as usize);
    }
    cols.sort_unstable();
    cols.into_iter().map(|i| column_name(names, i)).collect()
}
