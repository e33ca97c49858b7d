//! Profile ratio under normalization and the treatment effect constraint.

use nalgebra::{DMatrix, DVector};

use super::dual::{solve_lagrange, DualGroup, DualSolution};
use super::{dot, pel_loglik, ConstraintSet, PelConfig, PelSolution};
use crate::data::Dataset;
use crate::error::{PelError, Result};
use crate::glm::LogisticFit;
use crate::weighting::{hajek_weights, sandwich_variance_ipw, NormalizedWeights, PointEstimate};

#[derive(Debug, Clone)]
pub struct BasicProblem {
    pub n: usize,
    pub weights: NormalizedWeights,
    pub y1: Vec<f64>,
    pub y0: Vec<f64>,
    pub cfg: PelConfig,
}

impl BasicProblem {
    pub fn new(d: &Dataset, tau: &[f64]) -> Result<Self> {
        let weights = hajek_weights(d, tau)?;
        Ok(Self::from_weights(d.n(), weights, d.y()))
    }

    /// `y` holds outcomes for all units, indexed like the weights.
    pub fn from_weights(n: usize, weights: NormalizedWeights, y: &[f64]) -> Self {
        let y1 = weights.idx1.iter().map(|&j| y[j]).collect();
        let y0 = weights.idx0.iter().map(|&j| y[j]).collect();
        Self {
            n,
            weights,
            y1,
            y0,
            cfg: PelConfig::default(),
        }
    }

    pub fn point(&self) -> PointEstimate {
        PointEstimate::new(
            dot(&self.weights.treated, &self.y1),
            dot(&self.weights.control, &self.y0),
        )
    }

    /// Open interval of contrasts reachable by probability vectors.
    pub fn feasible_range(&self) -> (f64, f64) {
        let (lo1, hi1) = min_max(&self.y1);
        let (lo0, hi0) = min_max(&self.y0);
        (lo1 - hi0, hi1 - lo0)
    }

    pub fn g_rows(&self, theta: f64) -> (DMatrix<f64>, DMatrix<f64>) {
        let (w1, w0) = (self.cfg.w1, self.cfg.w0);
        let g1 = DMatrix::from_fn(self.y1.len(), 2, |j, c| {
            if c == 0 {
                1.0 - w1
            } else {
                self.y1[j] / w1 - theta
            }
        });
        let g0 = DMatrix::from_fn(self.y0.len(), 2, |j, c| {
            if c == 0 {
                -w1
            } else {
                -self.y0[j] / w0 - theta
            }
        });
        (g1, g0)
    }

    fn solve(
        &self,
        theta: f64,
        init: Option<&DVector<f64>>,
    ) -> Result<(DualSolution, DMatrix<f64>, DMatrix<f64>)> {
        let (lo, hi) = self.feasible_range();
        if !(theta > lo && theta < hi) {
            return Err(PelError::Infeasible(format!(
                "theta {theta} outside ({lo}, {hi})"
            )));
        }
        let (g1, g0) = self.g_rows(theta);
        let groups = [
            DualGroup {
                weight: self.cfg.w1,
                a: &self.weights.treated,
                g: &g1,
            },
            DualGroup {
                weight: self.cfg.w0,
                a: &self.weights.control,
                g: &g0,
            },
        ];
        let sol = solve_lagrange(&groups, init, &self.cfg)?;
        Ok((sol, g1, g0))
    }

    /// Restricted maximizer at `theta`.
    pub fn constrained(&self, theta: f64) -> Result<PelSolution> {
        let (sol, g1, g0) = self.solve(theta, None)?;
        let p1 = tilt(&self.weights.treated, &g1, &sol.lambda);
        let p0 = tilt(&self.weights.control, &g0, &sol.lambda);
        let loglik = pel_loglik(&p1, &p0, &self.weights, self.n, &self.cfg)?;
        Ok(PelSolution {
            p1,
            p0,
            lambda: sol.lambda.iter().copied().collect(),
            loglik,
            constraint_set: ConstraintSet::C1C2,
        })
    }

    /// `r(theta)`; `-inf` when `theta` is not attainable.
    pub fn ratio(&self, theta: f64) -> Result<f64> {
        match self.solve(theta, None) {
            Ok((sol, _, _)) => Ok(-(self.n as f64) * sol.log_sum),
            Err(PelError::Infeasible(_)) => Ok(f64::NEG_INFINITY),
            Err(e) => Err(e),
        }
    }

    /// Bracketed second moment term `sum a1 y1^2 + sum a0 y0^2 - mu1^2 - mu0^2`.
    pub fn spread(&self) -> f64 {
        let pt = self.point();
        let s1: f64 = self
            .weights
            .treated
            .iter()
            .zip(&self.y1)
            .map(|(a, y)| a * y * y)
            .sum();
        let s0: f64 = self
            .weights
            .control
            .iter()
            .zip(&self.y0)
            .map(|(a, y)| a * y * y)
            .sum();
        s1 + s0 - pt.mu1 * pt.mu1 - pt.mu0 * pt.mu0
    }

    /// Scaling constant that turns `-2 r / c` into a chi-square(1) statistic,
    /// given the variance of the normalized IPW estimator.
    pub fn scaling(&self, variance: f64) -> Result<f64> {
        let s = self.spread();
        if !(s > 0.0) {
            return Err(PelError::DegenerateScale(format!(
                "weighted outcome spread {s}"
            )));
        }
        Ok(self.n as f64 * variance / (2.0 * s))
    }
}

pub(crate) fn tilt(a: &[f64], g: &DMatrix<f64>, lambda: &DVector<f64>) -> Vec<f64> {
    (0..g.nrows())
        .map(|j| {
            a[j] / (1.0
                + g.row(j)
                    .iter()
                    .zip(lambda.iter())
                    .map(|(x, l)| x * l)
                    .sum::<f64>())
        })
        .collect()
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        })
}

pub fn profile_ratio_basic(d: &Dataset, fit: &LogisticFit, theta: f64) -> Result<f64> {
    BasicProblem::new(d, &fit.tau_hat)?.ratio(theta)
}

/// Scaling constant with the sandwich variance of the normalized IPW estimator.
pub fn scaling_c(d: &Dataset, fit: &LogisticFit) -> Result<f64> {
    let prob = BasicProblem::new(d, &fit.tau_hat)?;
    let var = sandwich_variance_ipw(d, fit, true, &prob.point())?;
    prob.scaling(var)
}
