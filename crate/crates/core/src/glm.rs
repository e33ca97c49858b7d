//! Working models: a logistic propensity score and two linear outcome
//! regressions. Misspecification is expressed by dropping covariates through
//! [`ColumnSet`].

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{Arm, ColumnSet, Dataset};
use crate::error::{PelError, Result};
use crate::linalg::{cholesky, cholesky_solve};

pub const LOGISTIC_TOL: f64 = 1e-10;
pub const LOGISTIC_MAX_ITER: usize = 100;
/// Separation guard on `max |alpha_k|`.
pub const LOGISTIC_COEF_CAP: f64 = 30.0;
pub const RANK_TOL: f64 = 1e-12;
/// Fitted probabilities this close to 0 or 1 are taken as separation.
pub const SEPARATION_TAU: f64 = 1e-9;

#[inline]
pub fn expit(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn softplus(eta: f64) -> f64 {
    if eta > 0.0 {
        eta + (-eta).exp().ln_1p()
    } else {
        eta.exp().ln_1p()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    /// Intercept first.
    pub alpha: Vec<f64>,
    pub tau_hat: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub columns: ColumnSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    /// Intercept first.
    pub beta: Vec<f64>,
    /// Fitted values on every unit of the sample, both arms.
    pub fitted_all: Vec<f64>,
    pub arm: Arm,
    pub mbar: f64,
    pub columns: ColumnSet,
}

/// The propensity model and both outcome regressions fitted on one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFits {
    pub ps: LogisticFit,
    pub or1: LinearFit,
    pub or0: LinearFit,
}

/// Covariate subsets for the three working models.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ModelSpec {
    pub ps_columns: ColumnSet,
    pub or_columns: ColumnSet,
}

impl ModelFits {
    pub fn fit(d: &Dataset, spec: &ModelSpec) -> Result<Self> {
        Ok(Self {
            ps: fit_logistic(d, &spec.ps_columns)?,
            or1: fit_outcome(d, Arm::Treated, &spec.or_columns)?,
            or0: fit_outcome(d, Arm::Control, &spec.or_columns)?,
        })
    }

    pub fn spec(&self) -> ModelSpec {
        ModelSpec {
            ps_columns: self.ps.columns.clone(),
            or_columns: self.or1.columns.clone(),
        }
    }

    pub fn outcome(&self, arm: Arm) -> &LinearFit {
        match arm {
            Arm::Treated => &self.or1,
            Arm::Control => &self.or0,
        }
    }
}

/// Bernoulli log-likelihood of `alpha` for the given design.
pub fn logistic_loglik(x: &DMatrix<f64>, t: &[u8], alpha: &[f64]) -> f64 {
    let a = DVector::from_column_slice(alpha);
    let eta = x * a;
    eta.iter()
        .zip(t)
        .map(|(&e, &tj)| f64::from(tj) * e - softplus(e))
        .sum()
}

/// Score `sum_j x_j (t_j - expit(x_j' alpha))`.
pub fn logistic_score(x: &DMatrix<f64>, t: &[u8], alpha: &[f64]) -> Vec<f64> {
    let a = DVector::from_column_slice(alpha);
    let eta = x * a;
    let resid = DVector::from_iterator(
        t.len(),
        eta.iter().zip(t).map(|(&e, &tj)| f64::from(tj) - expit(e)),
    );
    (x.transpose() * resid).iter().copied().collect()
}

/// Maximum likelihood logistic regression by Newton-Raphson with step halving.
pub fn fit_logistic(d: &Dataset, columns: &ColumnSet) -> Result<LogisticFit> {
    columns.validate(d.d())?;
    let x = d.design_matrix(columns);
    let t = d.t();
    let (n, p) = (x.nrows(), x.ncols());

    // rank check on the design itself; the weighted information inherits it
    let xtx = x.transpose() * &x;
    cholesky(&xtx, RANK_TOL, "propensity design")?;

    let mut alpha = DVector::zeros(p);
    let mut ll = logistic_loglik(&x, t, alpha.as_slice());
    for iter in 0..LOGISTIC_MAX_ITER {
        let eta = &x * &alpha;
        let tau: Vec<f64> = eta.iter().map(|&e| expit(e)).collect();
        let mut score = DVector::zeros(p);
        let mut info = DMatrix::zeros(p, p);
        for j in 0..n {
            let r = f64::from(t[j]) - tau[j];
            let w = tau[j] * (1.0 - tau[j]);
            for a in 0..p {
                let xa = x[(j, a)];
                score[a] += xa * r;
                for b in 0..=a {
                    info[(a, b)] += w * xa * x[(j, b)];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                info[(b, a)] = info[(a, b)];
            }
        }
        if score.amax() < LOGISTIC_TOL {
            return finish(alpha, tau, iter, columns);
        }
        let l = cholesky(&info, RANK_TOL, "propensity information").map_err(|_| {
            PelError::NonConvergence("singular Fisher information (possible separation)".into())
        })?;
        let step = cholesky_solve(&l, &score);

        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand = &alpha + &step * scale;
            let cand_ll = logistic_loglik(&x, t, cand.as_slice());
            if cand_ll >= ll - 1e-12 * ll.abs().max(1.0) {
                alpha = cand;
                ll = cand_ll;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            return Err(PelError::NonConvergence(
                "step halving failed to increase the likelihood".into(),
            ));
        }
        if alpha.amax() > LOGISTIC_COEF_CAP {
            return Err(PelError::NonConvergence(format!(
                "coefficient magnitude exceeded the cap {LOGISTIC_COEF_CAP} (separation)"
            )));
        }
        // the score cannot be driven below rounding level; a negligible full
        // Newton step means we are there
        if scale == 1.0 && step.amax() < 1e-13 * (1.0 + alpha.amax()) {
            let tau = (&x * &alpha).iter().map(|&e| expit(e)).collect();
            return finish(alpha, tau, iter + 1, columns);
        }
    }
    Err(PelError::NonConvergence(format!(
        "no convergence within {LOGISTIC_MAX_ITER} iterations"
    )))
}

fn finish(
    alpha: DVector<f64>,
    tau: Vec<f64>,
    iterations: usize,
    columns: &ColumnSet,
) -> Result<LogisticFit> {
    if tau.iter().any(|&v| v.min(1.0 - v) < SEPARATION_TAU) {
        return Err(PelError::NonConvergence(
            "fitted propensities reached 0 or 1 (separation)".into(),
        ));
    }
    Ok(LogisticFit {
        alpha: alpha.iter().copied().collect(),
        tau_hat: tau,
        converged: true,
        iterations,
        columns: columns.clone(),
    })
}

/// Ordinary least squares on one arm, with fitted values on every unit.
pub fn fit_outcome(d: &Dataset, arm: Arm, columns: &ColumnSet) -> Result<LinearFit> {
    columns.validate(d.d())?;
    let p = columns.len(d.d()) + 1;
    let flag = arm.flag();
    let rows: Vec<usize> = (0..d.n()).filter(|&j| d.t()[j] == flag).collect();
    let what = match arm {
        Arm::Treated => "treated outcome regression",
        Arm::Control => "control outcome regression",
    };
    if rows.len() <= p {
        return Err(PelError::SingularDesign(format!(
            "{what}: {} units for {p} coefficients",
            rows.len()
        )));
    }
    let mut xtx = DMatrix::zeros(p, p);
    let mut xty = DVector::zeros(p);
    for &j in &rows {
        let xr = d.design_row(j, columns);
        let yj = d.y()[j];
        for a in 0..p {
            xty[a] += xr[a] * yj;
            for b in 0..=a {
                xtx[(a, b)] += xr[a] * xr[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            xtx[(b, a)] = xtx[(a, b)];
        }
    }
    let l = cholesky(&xtx, RANK_TOL, what)?;
    let beta = cholesky_solve(&l, &xty);
    let xall = d.design_matrix(columns);
    let fitted: Vec<f64> = (&xall * &beta).iter().copied().collect();
    let mbar = fitted.iter().sum::<f64>() / fitted.len() as f64;
    Ok(LinearFit {
        beta: beta.iter().copied().collect(),
        fitted_all: fitted,
        arm,
        mbar,
        columns: columns.clone(),
    })
}
