use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Solves `a x = b` for a dense row-major `n x n` matrix by LU with partial pivoting.
///
/// The returned solution is checked against `max_residual` in the infinity norm.
pub(crate) fn solve_dense(n: usize, a: &[f64], b: &[f64], max_residual: f64) -> Result<Vec<f64>> {
    debug_assert_eq!(a.len(), n * n);
    debug_assert_eq!(b.len(), n);
    let m = DMatrix::from_row_slice(n, n, a);
    let rhs = DVector::from_column_slice(b);
    let x = m
        .clone()
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("singular system".into()))?;
    let residual = (&m * &x - &rhs).amax();
    if !(residual <= max_residual) {
        return Err(Error::Numerical(format!(
            "residual {residual:e} exceeds {max_residual:e}"
        )));
    }
    Ok(x.iter().copied().collect())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Zeroes entries whose magnitude is below round-off level. Linear solves on
/// reducible chains can leave `1e-17`-sized mass on unreachable states, which
/// would otherwise turn a `0/0 = 1` ratio into `+inf`.
pub(crate) fn snap_roundoff(v: &mut [f64]) {
    for x in v.iter_mut() {
        if x.abs() < 1e-15 {
            *x = 0.0;
        }
    }
}
