//! Plug-in scaling constant for the model-calibrated ratio.

use nalgebra::{DMatrix, DVector};

use super::calibrated::{CalibratedProblem, McpSolution};
use crate::data::Dataset;
use crate::error::Result;
use crate::glm::ModelFits;
use crate::linalg::checked_inverse;
use crate::weighting::MAX_CONDITION;

#[derive(Debug, Clone, PartialEq)]
pub struct PelAsymptotics {
    pub w_hat: DMatrix<f64>,
    pub omega_hat: DMatrix<f64>,
    pub sigma_hat: f64,
    pub delta_hat: f64,
    pub gamma: DVector<f64>,
    /// One row per unit, in the kept constraint coordinates.
    pub h_hat: DMatrix<f64>,
    pub a_hat: DVector<f64>,
    pub e_hat: DVector<f64>,
    pub j_hat: DVector<f64>,
    pub g_hat: DVector<f64>,
    pub c_hat: DMatrix<f64>,
    /// Constraint coordinates retained (see [`CalibratedProblem::kept_columns`]).
    pub columns: Vec<usize>,
}

impl PelAsymptotics {
    /// `sigma Omega^1/2 W^-1 Gamma Gamma' W^-1 Omega^1/2`, whose single
    /// nonzero eigenvalue is `delta_hat`.
    pub fn m_hat(&self) -> Result<DMatrix<f64>> {
        let (winv, _) = checked_inverse(&self.w_hat, MAX_CONDITION, "W")?;
        let eig = self.omega_hat.clone().symmetric_eigen();
        let root = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt()));
        let half = &eig.eigenvectors * root * eig.eigenvectors.transpose();
        let v = &winv * &self.gamma;
        Ok(&half * (&v * v.transpose()) * &half * self.sigma_hat)
    }
}

pub fn asymptotics_mc(
    d: &Dataset,
    fits: &ModelFits,
    prob: &CalibratedProblem,
    mcp: &McpSolution,
) -> Result<PelAsymptotics> {
    let n = d.n();
    let nf = n as f64;
    let x = d.design_matrix(&fits.ps.columns);
    let pa = x.ncols();
    let tau = &fits.ps.tau_hat;
    let (m1, m0) = (&fits.or1.fitted_all, &fits.or0.fitted_all);
    let em1 = m1.iter().sum::<f64>() / nf;
    let em0 = m0.iter().sum::<f64>() / nf;
    let (mu1, mu0) = (mcp.point.mu1, mcp.point.mu0);
    let y = d.y();

    let mut a_hat = DVector::zeros(pa);
    let mut e_hat = DVector::zeros(pa);
    let mut j_hat = DVector::zeros(pa);
    let mut g_hat = DVector::zeros(pa);
    let mut c_hat = DMatrix::zeros(pa, pa);
    for j in 0..n {
        let tj = f64::from(d.t()[j]);
        let xj = x.row(j).transpose();
        a_hat -= &xj * ((m1[j] - em1) * (1.0 - tau[j]));
        e_hat += &xj * ((m0[j] - em0) * tau[j]);
        j_hat -= &xj * (tj * (y[j] - mu1) * (1.0 - tau[j]) / tau[j]);
        g_hat += &xj * ((1.0 - tj) * (y[j] - mu0) * tau[j] / (1.0 - tau[j]));
        c_hat -= &xj * xj.transpose() * (tau[j] * (1.0 - tau[j]));
    }
    a_hat /= nf;
    e_hat /= nf;
    j_hat /= nf;
    g_hat /= nf;
    c_hat /= nf;
    let (cinv, _) = checked_inverse(&c_hat, MAX_CONDITION, "C")?;

    let keep1 = if prob.vacuous1 { 0.0 } else { 1.0 };
    let keep0 = if prob.vacuous0 { 0.0 } else { 1.0 };
    let mut h_full = DMatrix::zeros(n, 4);
    for j in 0..n {
        let tj = f64::from(d.t()[j]);
        let s = &cinv * x.row(j).transpose() * (tj - tau[j]);
        let r1 = tj / tau[j];
        let r0 = (1.0 - tj) / (1.0 - tau[j]);
        let h1 = keep1 * ((r1 - 1.0) * (m1[j] - em1) - a_hat.dot(&s));
        let h0 = keep0 * ((r0 - 1.0) * (m0[j] - em0) - e_hat.dot(&s));
        h_full[(j, 1)] = 0.5 * (h1 + h0);
        h_full[(j, 2)] = 0.5 * (h1 - h0);
        h_full[(j, 3)] = r1 * (y[j] - mu1) - r0 * (y[j] - mu0) - (&j_hat - &g_hat).dot(&s);
    }

    let columns = prob.kept_columns();
    let h_hat = h_full.select_columns(&columns);
    let k = columns.len();
    let hbar = h_hat.row_mean();
    let mut omega = DMatrix::zeros(k, k);
    for j in 0..n {
        let c = h_hat.row(j) - &hbar;
        omega += c.transpose() * &c;
    }
    omega /= nf;

    let (g1, g0) = prob.g_vectors(mcp.point.theta).select(&columns);
    let a = prob.weights();
    let mut w_hat = DMatrix::zeros(k, k);
    for (w, av, g) in [
        (prob.cfg().w1, &a.treated, &g1),
        (prob.cfg().w0, &a.control, &g0),
    ] {
        for j in 0..g.nrows() {
            let r = g.row(j);
            w_hat += r.transpose() * r * (w * av[j]);
        }
    }

    let mut gamma = DVector::zeros(k);
    gamma[k - 1] = -1.0;
    let (winv, _) = checked_inverse(&w_hat, MAX_CONDITION, "W")?;
    let v = &winv * &gamma;
    let sigma_hat = 1.0 / gamma.dot(&v);
    let delta_hat = sigma_hat * v.dot(&(&omega * &v));

    Ok(PelAsymptotics {
        w_hat,
        omega_hat: omega,
        sigma_hat,
        delta_hat,
        gamma,
        h_hat,
        a_hat,
        e_hat,
        j_hat,
        g_hat,
        c_hat,
        columns,
    })
}
