//! Finite-difference helpers for verifying analytic gradients.

use super::Array;

/// Central difference of `f` with respect to element `index` of `x`.
pub fn central_difference(mut f: impl FnMut(&Array) -> f64, x: &Array, index: usize, eps: f64) -> f64 {
    let mut plus = x.clone();
    plus.data_mut()[index] += eps;
    let mut minus = x.clone();
    minus.data_mut()[index] -= eps;
    (f(&plus) - f(&minus)) / (2.0 * eps)
}

/// `|a - b| / max(|a|, |b|, floor)`; the floor keeps near-zero gradients from
/// inflating the ratio.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(floor);
    (analytic - numeric).abs() / denom
}
