//! Scalar normal-distribution helpers used by the bounded policy.
//!
//! Tail masses go through `erfc` for moderate arguments. Past `z = 6` the
//! upper tail is written as `φ(z)·R(z)` with the Mills ratio `R` evaluated by
//! its continued fraction, so `ln Q(z)` stays finite and accurate far beyond
//! the point where `erfc` underflows.

use std::f64::consts::{PI, SQRT_2};

/// `0.5 * ln(2π)`
pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Above this `z` the continued-fraction form replaces `erfc`.
const TAIL_SWITCH: f64 = 6.0;
const CF_TERMS: usize = 200;

pub fn log_pdf_std(z: f64) -> f64 {
    -0.5 * z * z - HALF_LN_2PI
}

/// Log-density of `N(mean, exp(log_std)^2)` at `x`.
pub fn log_pdf(x: f64, mean: f64, log_std: f64) -> f64 {
    let z = (x - mean) * (-log_std).exp();
    log_pdf_std(z) - log_std
}

/// Mills ratio `Q(z)/φ(z)` for `z >= TAIL_SWITCH` via backward evaluation of
/// `1/(z + 1/(z + 2/(z + 3/(z + ...))))`.
fn mills_ratio_cf(z: f64) -> f64 {
    let mut t = z;
    for k in (1..=CF_TERMS).rev() {
        t = z + k as f64 / t;
    }
    1.0 / t
}

/// Upper-tail probability `Q(z) = P(Z > z)`.
pub fn upper_tail(z: f64) -> f64 {
    0.5 * libm::erfc(z / SQRT_2)
}

/// `ln Q(z)`, finite for every finite `z`.
pub fn log_upper_tail(z: f64) -> f64 {
    if z > TAIL_SWITCH {
        log_pdf_std(z) + mills_ratio_cf(z).ln()
    } else {
        upper_tail(z).ln()
    }
}

/// `ln Φ(z) = ln P(Z < z)`.
pub fn log_lower_tail(z: f64) -> f64 {
    log_upper_tail(-z)
}

/// `φ(z)/Q(z)`, the negated derivative of `ln Q(z)`.
pub fn inverse_mills(z: f64) -> f64 {
    if z > TAIL_SWITCH {
        1.0 / mills_ratio_cf(z)
    } else {
        (log_pdf_std(z) - upper_tail(z).ln()).exp()
    }
}

/// Differential entropy of a 1-D normal with the given log standard deviation.
pub fn entropy(log_std: f64) -> f64 {
    0.5 * (2.0 * PI * std::f64::consts::E).ln() + log_std
}
