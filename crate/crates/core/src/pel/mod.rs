//! Pseudo empirical likelihood: the two-sample weighted log-likelihood, its
//! restricted maximizers through Lagrange multipliers, profile ratio
//! statistics, their scaling constants, and ratio confidence intervals.

mod asymptotics;
mod basic;
mod calibrated;
mod dual;
mod interval;

use serde::{Deserialize, Serialize};

use crate::error::{PelError, Result};
use crate::weighting::NormalizedWeights;

pub use asymptotics::{asymptotics_mc, PelAsymptotics};
pub use basic::{profile_ratio_basic, scaling_c, BasicProblem};
pub use calibrated::{mcp_estimate, CalibratedProblem, GVectors, McpSolution};
pub use dual::{solve_lagrange, DualGroup, DualSolution};
pub use interval::{chi2_1_quantile, ci_pel, ratio_interval, PelInterval};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PelConfig {
    pub w1: f64,
    pub w0: f64,
    pub lambda_tol: f64,
    pub max_iter: usize,
    pub feasibility_margin: f64,
}

impl Default for PelConfig {
    fn default() -> Self {
        Self {
            w1: 0.5,
            w0: 0.5,
            lambda_tol: 1e-10,
            max_iter: 100,
            feasibility_margin: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConstraintSet {
    /// Normalization only.
    C1,
    /// Normalization and model calibration.
    C1C3,
    /// Normalization and the treatment effect.
    C1C2,
    /// All three.
    C1C2C3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PelSolution {
    pub p1: Vec<f64>,
    pub p0: Vec<f64>,
    pub lambda: Vec<f64>,
    pub loglik: f64,
    pub constraint_set: ConstraintSet,
}

impl PelSolution {
    pub fn contrast(&self, y1: &[f64], y0: &[f64]) -> f64 {
        dot(&self.p1, y1) - dot(&self.p0, y0)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `n (w1 sum a1 log p1 + w0 sum a0 log p0)`.
pub fn pel_loglik(
    p1: &[f64],
    p0: &[f64],
    a: &NormalizedWeights,
    n: usize,
    cfg: &PelConfig,
) -> Result<f64> {
    if p1.len() != a.treated.len() || p0.len() != a.control.len() {
        return Err(PelError::InvalidData(
            "probability vector length mismatch".into(),
        ));
    }
    let mut s1 = 0.0;
    for (k, (&p, &w)) in p1.iter().zip(&a.treated).enumerate() {
        if !(p > 0.0) {
            return Err(PelError::WeightDomain {
                index: a.idx1[k],
                value: p,
            });
        }
        s1 += w * p.ln();
    }
    let mut s0 = 0.0;
    for (k, (&p, &w)) in p0.iter().zip(&a.control).enumerate() {
        if !(p > 0.0) {
            return Err(PelError::WeightDomain {
                index: a.idx0[k],
                value: p,
            });
        }
        s0 += w * p.ln();
    }
    Ok(n as f64 * (cfg.w1 * s1 + cfg.w0 * s0))
}

/// Unrestricted maximizer: the normalized weights themselves.
pub fn global_max(a: &NormalizedWeights, n: usize, cfg: &PelConfig) -> PelSolution {
    let loglik =
        pel_loglik(&a.treated, &a.control, a, n, cfg).expect("normalized weights are positive");
    PelSolution {
        p1: a.treated.clone(),
        p0: a.control.clone(),
        lambda: Vec::new(),
        loglik,
        constraint_set: ConstraintSet::C1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn uniform(n1: usize, n0: usize) -> NormalizedWeights {
        NormalizedWeights {
            idx1: (0..n1).collect(),
            idx0: (n1..n1 + n0).collect(),
            treated: vec![1.0 / n1 as f64; n1],
            control: vec![1.0 / n0 as f64; n0],
        }
    }

    #[test]
    fn uniform_loglik() {
        let a = uniform(2, 2);
        let v = pel_loglik(&[0.5, 0.5], &[0.5, 0.5], &a, 4, &PelConfig::default()).unwrap();
        assert_abs_diff_eq!(v, -4.0 * 2f64.ln(), epsilon = 1e-14);
    }

    #[test]
    fn global_max_is_weights() {
        let a = NormalizedWeights {
            idx1: vec![0, 1],
            idx0: vec![2, 3, 4],
            treated: vec![0.3, 0.7],
            control: vec![0.2, 0.2, 0.6],
        };
        let s = global_max(&a, 5, &PelConfig::default());
        assert_eq!(s.p1, a.treated);
        assert_eq!(s.p0, a.control);
        assert_eq!(
            s.loglik,
            pel_loglik(&a.treated, &a.control, &a, 5, &PelConfig::default()).unwrap()
        );
        // any other feasible point is strictly worse
        let worse = pel_loglik(
            &[0.35, 0.65],
            &[0.25, 0.15, 0.6],
            &a,
            5,
            &PelConfig::default(),
        )
        .unwrap();
        assert!(worse < s.loglik);
    }

    #[test]
    fn nonpositive_probability_is_domain_error() {
        let a = uniform(2, 1);
        assert!(matches!(
            pel_loglik(&[1.0, 0.0], &[1.0], &a, 3, &PelConfig::default()),
            Err(PelError::WeightDomain { index: 1, .. })
        ));
    }
}
