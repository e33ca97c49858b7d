//! Ratio confidence intervals by bracket expansion and bisection.

use crate::error::{PelError, Result};
use crate::weighting::normal_quantile;
use serde::{Deserialize, Serialize};

const MAX_EXPANSIONS: usize = 80;
const MAX_BISECTIONS: usize = 200;
const THETA_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PelInterval {
    pub lo: f64,
    pub hi: f64,
    /// The endpoint stopped at the edge of the attainable range rather than
    /// at a threshold crossing.
    pub lo_clamped: bool,
    pub hi_clamped: bool,
    /// Nonnegative threshold: the acceptance region shrinks to the center.
    pub degenerate: bool,
    pub evaluations: usize,
}

impl PelInterval {
    pub fn length(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, theta: f64) -> bool {
        self.lo <= theta && theta <= self.hi
    }
}

/// Upper `alpha` point of chi-square with one degree of freedom.
pub fn chi2_1_quantile(alpha: f64) -> f64 {
    normal_quantile(alpha).powi(2)
}

/// `{theta : -2 r(theta) / scale <= chi2_1(alpha)}`.
pub fn ci_pel<F>(ratio: F, scale: f64, alpha: f64, center: f64) -> Result<PelInterval>
where
    F: FnMut(f64) -> Result<f64>,
{
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(PelError::DegenerateScale(format!("scale {scale}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(PelError::Usage(format!("alpha {alpha} outside (0, 1)")));
    }
    let threshold = -scale * chi2_1_quantile(alpha) / 2.0;
    ratio_interval(ratio, center, threshold, 2.0 * scale.sqrt())
}

/// `{theta : r(theta) >= threshold}` around `center`, where `r(center) = 0`
/// and `r` falls off monotonically on each side. Infeasible points must map
/// to `-inf`.
pub fn ratio_interval<F>(
    mut ratio: F,
    center: f64,
    threshold: f64,
    step0: f64,
) -> Result<PelInterval>
where
    F: FnMut(f64) -> Result<f64>,
{
    if threshold >= 0.0 {
        return Ok(PelInterval {
            lo: center,
            hi: center,
            lo_clamped: false,
            hi_clamped: false,
            degenerate: true,
            evaluations: 0,
        });
    }
    let step0 = if step0 > 0.0 && step0.is_finite() {
        step0
    } else {
        1.0
    };
    let mut evaluations = 0;
    let mut side = |dir: f64| -> Result<(f64, bool)> {
        let mut inside = (center, 0.0);
        let mut outside = None;
        let mut step = step0;
        for _ in 0..MAX_EXPANSIONS {
            let cand = center + dir * step;
            let v = ratio(cand)?;
            evaluations += 1;
            if v >= threshold {
                inside = (cand, v);
                step *= 2.0;
            } else {
                outside = Some((cand, v));
                break;
            }
        }
        let Some(mut out) = outside else {
            return Ok((inside.0, true));
        };
        for _ in 0..MAX_BISECTIONS {
            let gap = (out.0 - inside.0).abs();
            if gap <= THETA_TOL || gap <= 4.0 * f64::EPSILON * inside.0.abs() {
                break;
            }
            let mid = 0.5 * (inside.0 + out.0);
            let v = ratio(mid)?;
            evaluations += 1;
            if v >= threshold {
                inside = (mid, v);
            } else {
                out = (mid, v);
            }
        }
        let clamped = out.1 == f64::NEG_INFINITY && inside.1 - threshold > 0.5 * threshold.abs();
        Ok((0.5 * (inside.0 + out.0), clamped))
    };
    let (lo, lo_clamped) = side(-1.0)?;
    let (hi, hi_clamped) = side(1.0)?;
    Ok(PelInterval {
        lo,
        hi,
        lo_clamped,
        hi_clamped,
        degenerate: false,
        evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn quadratic_half_width() {
        let (k, c, center) = (3.0, 1.7, 0.4);
        let iv = ci_pel(|t| Ok(-k * (t - center) * (t - center)), c, 0.05, center).unwrap();
        let hw = (c * chi2_1_quantile(0.05) / (2.0 * k)).sqrt();
        assert_abs_diff_eq!(iv.hi - center, hw, epsilon = 1e-6);
        assert_abs_diff_eq!(center - iv.lo, hw, epsilon = 1e-6);
        assert!(iv.contains(center));
    }

    #[test]
    fn chi_square_quantile_value() {
        assert_abs_diff_eq!(chi2_1_quantile(0.05), 3.841458820694124, epsilon = 1e-9);
    }

    #[test]
    fn feasibility_wall_is_respected() {
        // r drops to -inf past 1.0 while still above the threshold
        let f = |t: f64| {
            Ok(if t >= 1.0 {
                f64::NEG_INFINITY
            } else {
                -0.01 * t * t
            })
        };
        let iv = ratio_interval(f, 0.0, -2.0, 0.1).unwrap();
        assert!(iv.hi < 1.0 && iv.hi > 1.0 - 1e-7);
        assert!(iv.hi_clamped && !iv.lo_clamped);
    }

    #[test]
    fn nonnegative_threshold_is_degenerate() {
        let iv = ratio_interval(|t: f64| Ok(-t * t), 2.0, 0.0, 1.0).unwrap();
        assert!(iv.degenerate);
        assert_eq!((iv.lo, iv.hi), (2.0, 2.0));
    }

    #[test]
    fn asymmetric_ratio() {
        let f = |t: f64| Ok(if t > 0.0 { -t * t } else { -4.0 * t * t });
        let iv = ratio_interval(f, 0.0, -1.0, 0.3).unwrap();
        assert_abs_diff_eq!(iv.hi, 1.0, epsilon = 1e-7);
        assert_abs_diff_eq!(iv.lo, -0.5, epsilon = 1e-7);
    }
}
