//! Residual and image-quality metrics, and the timing-resolution bound.

use crate::error::{Result, TomoError};
use crate::fdtd::C0;
use crate::projection::SqrtEpsImage;

/// L2 residual over the valid entries of a projection delta.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualReport {
    /// L2 norm of the clamped deltas over valid pairs (seconds).
    pub e: f64,
    pub valid_pair_count: usize,
    pub subset: usize,
    /// Multiplier applied when displaying subset residuals next to
    /// full-data ones (the subset count once evaluation is pinned).
    pub display_scale: f64,
}

/// `E = sqrt(sum of squared valid deltas)`.
pub fn residual_error(delta: &[f64], valid: &[bool]) -> Result<ResidualReport> {
    assert_eq!(delta.len(), valid.len(), "delta/valid shape mismatch");
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for (&d, &v) in delta.iter().zip(valid) {
        if v {
            sum += d * d;
            count += 1;
        }
    }
    if count == 0 {
        return Err(TomoError::NoValidPairs);
    }
    Ok(ResidualReport { e: sum.sqrt(), valid_pair_count: count, subset: 0, display_scale: 1.0 })
}

/// Normalized RMSE over masked cells: `||x - truth|| / ||truth||`.
pub fn nrmse(x: &SqrtEpsImage, truth: &SqrtEpsImage) -> Result<f64> {
    assert_eq!(x.geom, truth.geom, "images live on different grids");
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    let mut any = false;
    for k in 0..x.values.len() {
        if *truth.mask.as_slice().get(k).unwrap_or(&false) {
            any = true;
            let d = x.values.as_slice()[k] - truth.values.as_slice()[k];
            num += d * d;
            den += truth.values.as_slice()[k].powi(2);
        }
    }
    if !any {
        return Err(TomoError::NoValidCells);
    }
    if den == 0.0 {
        return Ok(if num == 0.0 { 0.0 } else { f64::INFINITY });
    }
    Ok((num / den).sqrt())
}

/// Smallest resolvable structure size under the straight-line rule of thumb,
/// linearized form: `s = 2 tau c eps sqrt(eps) / delta_eps`.
pub fn resolution_bound(tau: f64, eps: f64, delta_eps: f64) -> Result<f64> {
    assert!(eps >= 1.0, "relative permittivity must be >= 1");
    assert!(tau >= 0.0, "timing resolution must be non-negative");
    if delta_eps <= 0.0 {
        return Err(TomoError::InvalidContrast(delta_eps));
    }
    Ok(2.0 * tau * C0 * eps * eps.sqrt() / delta_eps)
}

/// Exact (un-linearized) form of the same bound, for comparison.
pub fn resolution_bound_exact(tau: f64, eps: f64, delta_eps: f64) -> Result<f64> {
    assert!(eps >= 1.0, "relative permittivity must be >= 1");
    assert!(tau >= 0.0, "timing resolution must be non-negative");
    if delta_eps <= 0.0 {
        return Err(TomoError::InvalidContrast(delta_eps));
    }
    let gap = 1.0 / eps.sqrt() - 1.0 / (eps + delta_eps).sqrt();
    Ok(tau * C0 / gap)
}
