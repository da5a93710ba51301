//! Solving-accuracy metric.
//!
//! An objective `y_pred` matches a reference `y_label` when
//! `|y_pred - y_label| / (|y_label| + 1) < 1e-6`. The `+ 1` keeps the
//! denominator away from zero for zero-valued references.

use num_bigint::{BigInt, Sign};
use thiserror::Error;

/// Strict upper bound on the relative gap of a correct answer.
pub const CORRECTNESS_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum MetricError {
    #[error("objective values must be finite (got y_pred = {y_pred}, y_label = {y_label})")]
    NonFinite { y_pred: f64, y_label: f64 },
}

fn check_finite(y_pred: f64, y_label: f64) -> Result<(), MetricError> {
    if y_pred.is_finite() && y_label.is_finite() {
        Ok(())
    } else {
        Err(MetricError::NonFinite { y_pred, y_label })
    }
}

/// `|y_pred - y_label| / (|y_label| + 1)`, evaluated in double precision.
pub fn relative_gap(y_pred: f64, y_label: f64) -> Result<f64, MetricError> {
    check_finite(y_pred, y_label)?;
    Ok((y_pred - y_label).abs() / (y_label.abs() + 1.0))
}

/// Whether `y_pred` counts as a correct answer for `y_label`.
///
/// The comparison against 10^-6 is decided exactly: when the floating-point
/// gap lands within rounding distance of the threshold the inequality is
/// re-evaluated in integer arithmetic on the exact binary values.
pub fn is_correct(y_pred: f64, y_label: f64) -> Result<bool, MetricError> {
    let gap = relative_gap(y_pred, y_label)?;
    // The double-precision gap carries at most a few ulps of relative error,
    // far below this band.
    const BAND: f64 = 1e-9;
    if gap < CORRECTNESS_THRESHOLD * (1.0 - BAND) {
        return Ok(true);
    }
    if gap > CORRECTNESS_THRESHOLD * (1.0 + BAND) {
        return Ok(false);
    }
    Ok(exact_gap_below_threshold(y_pred, y_label))
}

/// Decides `|a - b| * 10^6 < |b| + 1` on the exact values of `a` and `b`.
fn exact_gap_below_threshold(a: f64, b: f64) -> bool {
    let (ma, ea) = decompose(a);
    let (mb, eb) = decompose(b);
    // 1 = 1 * 2^0
    let base = ea.min(eb).min(0);
    let scale = |m: BigInt, e: i32| m << ((e - base) as usize);
    let a_int = scale(ma, ea);
    let b_int = scale(mb, eb);
    let one = scale(BigInt::from(1), 0);
    let diff = (a_int - &b_int).magnitude().clone();
    let lhs = BigInt::from_biguint(Sign::Plus, diff) * BigInt::from(1_000_000u32);
    let rhs = BigInt::from_biguint(Sign::Plus, b_int.magnitude().clone()) + one;
    lhs < rhs
}

/// Splits a finite double into `mantissa * 2^exponent` with an integer mantissa.
fn decompose(x: f64) -> (BigInt, i32) {
    let bits = x.to_bits();
    let negative = bits >> 63 == 1;
    let exp_bits = ((bits >> 52) & 0x7ff) as i32;
    let frac = bits & ((1u64 << 52) - 1);
    let (mantissa, exponent) = if exp_bits == 0 {
        (frac, -1074)
    } else {
        (frac | (1u64 << 52), exp_bits - 1075)
    };
    let m = BigInt::from(mantissa);
    (if negative { -m } else { m }, exponent)
}
