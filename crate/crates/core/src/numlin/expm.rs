//! Matrix exponential by scaling and squaring.
//!
//! The argument is scaled by `2^-s` until its infinity norm is at most 1/2,
//! the Taylor series is summed until the next term falls below `TAIL_TOL`
//! relative to the partial sum, and the result is squared `s` times.
//! With `||B|| <= 1/2` the remaining tail is bounded by the last term, so the
//! truncation error of the scaled series stays below 1e-13 relative.

use super::matrix::{mat_mul, Matrix};
use crate::error::{Error, Result};

const SCALED_NORM: f64 = 0.5;
const TAIL_TOL: f64 = 1e-17;
const MAX_TERMS: usize = 40;

pub fn mat_exp(a: &Matrix) -> Result<Matrix> {
    if !a.is_square() {
        return Err(Error::shape("mat_exp", a.shape_str(), "square matrix"));
    }
    if !a.is_finite() {
        return Err(Error::arg("mat_exp input must be finite"));
    }
    let n = a.rows();
    let norm = a.norm_inf();
    let squarings = if norm > SCALED_NORM {
        (norm / SCALED_NORM).log2().ceil() as i32
    } else {
        0
    };
    let scaled = a.scale(2f64.powi(-squarings));

    let mut sum = Matrix::identity(n);
    let mut term = Matrix::identity(n);
    for k in 1..=MAX_TERMS {
        term = mat_mul(&term, &scaled)?.scale(1.0 / k as f64);
        sum.axpy(1.0, &term)?;
        if term.norm_inf() <= TAIL_TOL * sum.norm_inf() {
            break;
        }
    }

    for _ in 0..squarings {
        sum = mat_mul(&sum, &sum)?;
    }
    Ok(sum)
}
