//! Model-calibrated maximum PEL estimation and its profile ratio.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::basic::{tilt, BasicProblem};
use super::dual::{solve_calibration, solve_lagrange, DualGroup};
use super::{dot, pel_loglik, ConstraintSet, PelConfig, PelSolution};
use crate::data::Dataset;
use crate::error::{PelError, Result};
use crate::glm::ModelFits;
use crate::weighting::{EstimateReport, Method, NormalizedWeights, PointEstimate};

/// Relative size below which a calibration constraint is treated as vacuous.
pub const VACUITY: f64 = 1e-12;
const CALIBRATION_TOL: f64 = 1e-13;

#[derive(Debug, Clone)]
pub struct CalibratedProblem {
    pub base: BasicProblem,
    /// Centered fitted values `m_ij - mbar_i` on each arm's own units.
    pub u1: Vec<f64>,
    pub u0: Vec<f64>,
    pub vacuous1: bool,
    pub vacuous0: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McpSolution {
    pub solution: PelSolution,
    pub lambda1: f64,
    pub lambda0: f64,
    pub point: PointEstimate,
    /// Regression slope of treated outcomes on centered fitted values;
    /// `None` when the treated constraint is vacuous.
    pub b_hat: Option<f64>,
    /// `sum_i w_i sum_j a_ij log(1 + lambda_i u_ij)`.
    pub log_sum: f64,
}

/// Constraint rows for all four constraints at one `theta`.
#[derive(Debug, Clone, PartialEq)]
pub struct GVectors {
    pub g1: DMatrix<f64>,
    pub g0: DMatrix<f64>,
    pub theta: f64,
}

impl GVectors {
    pub fn select(&self, cols: &[usize]) -> (DMatrix<f64>, DMatrix<f64>) {
        (self.g1.select_columns(cols), self.g0.select_columns(cols))
    }
}

fn population_variance(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64
}

fn is_vacuous(a: &[f64], u: &[f64], y: &[f64]) -> bool {
    let s: f64 = a.iter().zip(u).map(|(a, u)| a * u * u).sum();
    s <= VACUITY * population_variance(y)
}

impl CalibratedProblem {
    pub fn new(d: &Dataset, fits: &ModelFits) -> Result<Self> {
        let base = BasicProblem::new(d, &fits.ps.tau_hat)?;
        Ok(Self::from_base(
            base,
            &fits.or1.fitted_all,
            &fits.or0.fitted_all,
            fits.or1.mbar,
            fits.or0.mbar,
        ))
    }

    /// `m1`, `m0` are fitted values for all units; the targets are their
    /// full-sample means.
    pub fn from_base(base: BasicProblem, m1: &[f64], m0: &[f64], mbar1: f64, mbar0: f64) -> Self {
        let u1: Vec<f64> = base.weights.idx1.iter().map(|&j| m1[j] - mbar1).collect();
        let u0: Vec<f64> = base.weights.idx0.iter().map(|&j| m0[j] - mbar0).collect();
        let vacuous1 = is_vacuous(&base.weights.treated, &u1, &base.y1);
        let vacuous0 = is_vacuous(&base.weights.control, &u0, &base.y0);
        Self {
            base,
            u1,
            u0,
            vacuous1,
            vacuous0,
        }
    }

    pub fn n(&self) -> usize {
        self.base.n
    }

    pub fn weights(&self) -> &NormalizedWeights {
        &self.base.weights
    }

    pub fn cfg(&self) -> &PelConfig {
        &self.base.cfg
    }

    fn effective_u(&self) -> (Vec<f64>, Vec<f64>) {
        let z1 = if self.vacuous1 {
            vec![0.0; self.u1.len()]
        } else {
            self.u1.clone()
        };
        let z0 = if self.vacuous0 {
            vec![0.0; self.u0.len()]
        } else {
            self.u0.clone()
        };
        (z1, z0)
    }

    /// Columns of the four constraint rows that stay linearly independent
    /// once vacuous calibration constraints are dropped.
    pub fn kept_columns(&self) -> Vec<usize> {
        match (self.vacuous1, self.vacuous0) {
            (false, false) => vec![0, 1, 2, 3],
            (true, true) => vec![0, 3],
            _ => vec![0, 1, 3],
        }
    }

    pub fn g_vectors(&self, theta: f64) -> GVectors {
        let (w1, w0) = (self.cfg().w1, self.cfg().w0);
        let (u1, u0) = self.effective_u();
        let y1 = &self.base.y1;
        let y0 = &self.base.y0;
        let g1 = DMatrix::from_fn(y1.len(), 4, |j, c| match c {
            0 => 1.0 - w1,
            1 | 2 => u1[j],
            _ => (y1[j] - theta / 2.0) / w1,
        });
        let g0 = DMatrix::from_fn(y0.len(), 4, |j, c| match c {
            0 => -w1,
            1 => u0[j],
            2 => -u0[j],
            _ => -(y0[j] + theta / 2.0) / w0,
        });
        GVectors { g1, g0, theta }
    }

    /// Maximizer under normalization and calibration: one scalar solve per arm.
    pub fn solve_mcp(&self) -> Result<McpSolution> {
        let a = self.weights();
        let lambda1 = if self.vacuous1 {
            0.0
        } else {
            solve_calibration(&a.treated, &self.u1, CALIBRATION_TOL)?
        };
        let lambda0 = if self.vacuous0 {
            0.0
        } else {
            solve_calibration(&a.control, &self.u0, CALIBRATION_TOL)?
        };
        let p1: Vec<f64> = a
            .treated
            .iter()
            .zip(&self.u1)
            .map(|(a, u)| a / (1.0 + lambda1 * u))
            .collect();
        let p0: Vec<f64> = a
            .control
            .iter()
            .zip(&self.u0)
            .map(|(a, u)| a / (1.0 + lambda0 * u))
            .collect();
        let point = PointEstimate::new(dot(&p1, &self.base.y1), dot(&p0, &self.base.y0));
        let loglik = pel_loglik(&p1, &p0, a, self.n(), self.cfg())?;
        let ls = |w: &[f64], u: &[f64], l: f64| -> f64 {
            w.iter().zip(u).map(|(a, u)| a * (l * u).ln_1p()).sum()
        };
        let log_sum = self.cfg().w1 * ls(&a.treated, &self.u1, lambda1)
            + self.cfg().w0 * ls(&a.control, &self.u0, lambda0);
        let b_hat = (!self.vacuous1).then(|| {
            let num: f64 = a
                .treated
                .iter()
                .zip(&self.u1)
                .zip(&self.base.y1)
                .map(|((a, u), y)| a * u * y)
                .sum();
            let den: f64 = a.treated.iter().zip(&self.u1).map(|(a, u)| a * u * u).sum();
            num / den
        });
        Ok(McpSolution {
            solution: PelSolution {
                p1,
                p0,
                lambda: vec![lambda1, lambda0],
                loglik,
                constraint_set: ConstraintSet::C1C3,
            },
            lambda1,
            lambda0,
            point,
            b_hat,
            log_sum,
        })
    }

    /// Multiplier of the four-constraint problem at the calibrated maximizer,
    /// in the reduced coordinates.
    fn reference_lambda(&self, reference: &McpSolution) -> DVector<f64> {
        let (l1, l0) = (reference.lambda1, reference.lambda0);
        match (self.vacuous1, self.vacuous0) {
            (false, false) => DVector::from_vec(vec![0.0, 0.5 * (l1 + l0), 0.5 * (l1 - l0), 0.0]),
            (true, true) => DVector::zeros(2),
            (true, false) => DVector::from_vec(vec![0.0, l0, 0.0]),
            (false, true) => DVector::from_vec(vec![0.0, l1, 0.0]),
        }
    }

    fn solve(
        &self,
        theta: f64,
        reference: Option<&McpSolution>,
    ) -> Result<(DVector<f64>, f64, DMatrix<f64>, DMatrix<f64>)> {
        let (lo, hi) = self.base.feasible_range();
        if !(theta > lo && theta < hi) {
            return Err(PelError::Infeasible(format!(
                "theta {theta} outside ({lo}, {hi})"
            )));
        }
        let (g1, g0) = self.g_vectors(theta).select(&self.kept_columns());
        let a = self.weights();
        let groups = [
            DualGroup {
                weight: self.cfg().w1,
                a: &a.treated,
                g: &g1,
            },
            DualGroup {
                weight: self.cfg().w0,
                a: &a.control,
                g: &g0,
            },
        ];
        let init = reference.map(|r| self.reference_lambda(r));
        let sol = match solve_lagrange(&groups, init.as_ref(), self.cfg()) {
            Err(PelError::SolverFailed { .. }) if init.is_some() => {
                solve_lagrange(&groups, None, self.cfg())?
            }
            other => other?,
        };
        Ok((sol.lambda, sol.log_sum, g1, g0))
    }

    /// Restricted maximizer under all constraints at `theta`.
    pub fn constrained(&self, theta: f64) -> Result<PelSolution> {
        let (lambda, _, g1, g0) = self.solve(theta, None)?;
        let a = self.weights();
        let p1 = tilt(&a.treated, &g1, &lambda);
        let p0 = tilt(&a.control, &g0, &lambda);
        let loglik = pel_loglik(&p1, &p0, a, self.n(), self.cfg())?;
        Ok(PelSolution {
            p1,
            p0,
            lambda: lambda.iter().copied().collect(),
            loglik,
            constraint_set: ConstraintSet::C1C2C3,
        })
    }

    /// `l(theta) - l(theta_mcp)`; `-inf` when `theta` is not attainable.
    pub fn ratio(&self, theta: f64, reference: &McpSolution) -> Result<f64> {
        match self.solve(theta, Some(reference)) {
            Ok((_, log_sum, _, _)) => Ok(-(self.n() as f64) * (log_sum - reference.log_sum)),
            Err(PelError::Infeasible(_)) => Ok(f64::NEG_INFINITY),
            Err(e) => Err(e),
        }
    }
}

/// Model-calibrated estimate with its maximizer.
pub fn mcp_estimate(d: &Dataset, fits: &ModelFits) -> Result<(EstimateReport, McpSolution)> {
    let prob = CalibratedProblem::new(d, fits)?;
    let sol = prob.solve_mcp()?;
    let mut report = EstimateReport::new(Method::Mcp, sol.point);
    if prob.vacuous1 {
        report
            .diagnostics
            .push("treated calibration constraint is vacuous".into());
    }
    if prob.vacuous0 {
        report
            .diagnostics
            .push("control calibration constraint is vacuous".into());
    }
    Ok((report, sol))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn toy(m1: [f64; 8], m0: [f64; 8]) -> CalibratedProblem {
        let w = NormalizedWeights {
            idx1: vec![0, 1, 2, 3],
            idx0: vec![4, 5, 6, 7],
            treated: vec![0.1, 0.4, 0.3, 0.2],
            control: vec![0.25, 0.25, 0.3, 0.2],
        };
        let y = [1.0, 2.0, 4.0, 3.5, 0.5, 1.5, 2.5, 0.0];
        let base = BasicProblem::from_weights(8, w, &y);
        let mbar1 = m1.iter().sum::<f64>() / 8.0;
        let mbar0 = m0.iter().sum::<f64>() / 8.0;
        CalibratedProblem::from_base(base, &m1, &m0, mbar1, mbar0)
    }

    fn generic() -> CalibratedProblem {
        toy(
            [1.2, 2.1, 3.9, 3.0, 0.2, 1.0, 2.2, 1.6],
            [0.3, 0.9, 2.0, 1.1, 0.6, 1.4, 2.4, 0.2],
        )
    }

    #[test]
    fn calibration_holds_at_solution() {
        let p = generic();
        let s = p.solve_mcp().unwrap();
        assert!(!p.vacuous1 && !p.vacuous0);
        assert_abs_diff_eq!(dot(&s.solution.p1, &p.u1), 0.0, epsilon = 1e-8);
        assert_abs_diff_eq!(dot(&s.solution.p0, &p.u0), 0.0, epsilon = 1e-8);
        assert_abs_diff_eq!(s.solution.p1.iter().sum::<f64>(), 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(s.solution.p0.iter().sum::<f64>(), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn ratio_vanishes_at_estimate_and_is_negative_elsewhere() {
        let p = generic();
        let s = p.solve_mcp().unwrap();
        assert!(p.ratio(s.point.theta, &s).unwrap().abs() < 1e-9);
        for d in [-0.4, -0.1, 0.1, 0.4] {
            assert!(p.ratio(s.point.theta + d, &s).unwrap() < 0.0);
        }
    }

    #[test]
    fn constrained_solution_satisfies_all_constraints() {
        let p = generic();
        let s = p.solve_mcp().unwrap();
        let th = s.point.theta + 0.05;
        let c = p.constrained(th).unwrap();
        assert_abs_diff_eq!(c.p1.iter().sum::<f64>(), 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(c.p0.iter().sum::<f64>(), 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(dot(&c.p1, &p.u1), 0.0, epsilon = 1e-8);
        assert_abs_diff_eq!(dot(&c.p0, &p.u0), 0.0, epsilon = 1e-8);
        assert_abs_diff_eq!(c.contrast(&p.base.y1, &p.base.y0), th, epsilon = 1e-8);
        assert_abs_diff_eq!(
            c.loglik - s.solution.loglik,
            p.ratio(th, &s).unwrap(),
            epsilon = 1e-9
        );
    }

    #[test]
    fn constant_fits_reduce_to_basic_ratio() {
        let p = toy([2.0; 8], [1.0; 8]);
        assert!(p.vacuous1 && p.vacuous0);
        let s = p.solve_mcp().unwrap();
        assert_abs_diff_eq!(s.point.theta, p.base.point().theta, epsilon = 1e-14);
        for th in [-0.5, 0.3, 1.0, 2.0] {
            assert_abs_diff_eq!(
                p.ratio(th, &s).unwrap(),
                p.base.ratio(th).unwrap(),
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn one_vacuous_arm_still_solves() {
        let p = toy([1.2, 2.1, 3.9, 3.0, 0.2, 1.0, 2.2, 1.6], [1.0; 8]);
        assert!(!p.vacuous1 && p.vacuous0);
        let s = p.solve_mcp().unwrap();
        assert_eq!(s.lambda0, 0.0);
        assert!(p.ratio(s.point.theta, &s).unwrap().abs() < 1e-9);
        let c = p.constrained(s.point.theta - 0.2).unwrap();
        assert_abs_diff_eq!(dot(&c.p1, &p.u1), 0.0, epsilon = 1e-8);
    }

    #[test]
    fn calibration_outside_hull_is_infeasible() {
        // treated fitted values all above the full-sample mean
        let p = toy(
            [5.0, 6.0, 7.0, 8.0, 0.0, 0.0, 0.0, 0.0],
            [0.3, 0.9, 2.0, 1.1, 0.6, 1.4, 2.4, 0.2],
        );
        assert!(matches!(p.solve_mcp(), Err(PelError::Infeasible(_))));
    }
}
