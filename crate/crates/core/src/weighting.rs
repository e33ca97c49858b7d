//! Inverse probability weighted and augmented estimators, normalized design
//! weights, and sandwich variances from stacked estimating equations.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{Arm, ColumnSet, Dataset};
use crate::error::{PelError, Result};
use crate::glm::{expit, LinearFit, LogisticFit, ModelFits};
use crate::linalg::checked_inverse;

pub const MAX_CONDITION: f64 = 1e12;

/// Per-arm normalized inverse propensity weights, each summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedWeights {
    pub idx1: Vec<usize>,
    pub idx0: Vec<usize>,
    pub treated: Vec<f64>,
    pub control: Vec<f64>,
}

impl NormalizedWeights {
    pub fn arm(&self, arm: Arm) -> (&[usize], &[f64]) {
        match arm {
            Arm::Treated => (&self.idx1, &self.treated),
            Arm::Control => (&self.idx0, &self.control),
        }
    }
}

fn check_tau(tau: &[f64], n: usize) -> Result<()> {
    if tau.len() != n {
        return Err(PelError::InvalidData(format!(
            "{} propensities for {n} units",
            tau.len()
        )));
    }
    match tau.iter().position(|&v| !(v > 0.0 && v < 1.0)) {
        Some(index) => Err(PelError::WeightDomain {
            index,
            value: tau[index],
        }),
        None => Ok(()),
    }
}

pub fn hajek_weights(d: &Dataset, tau: &[f64]) -> Result<NormalizedWeights> {
    check_tau(tau, d.n())?;
    let mut idx1 = Vec::with_capacity(d.n_treated());
    let mut idx0 = Vec::with_capacity(d.n_control());
    let mut w1 = Vec::with_capacity(d.n_treated());
    let mut w0 = Vec::with_capacity(d.n_control());
    for j in 0..d.n() {
        if d.is_treated(j) {
            idx1.push(j);
            w1.push(1.0 / tau[j]);
        } else {
            idx0.push(j);
            w0.push(1.0 / (1.0 - tau[j]));
        }
    }
    let s1: f64 = w1.iter().sum();
    let s0: f64 = w0.iter().sum();
    w1.iter_mut().for_each(|v| *v /= s1);
    w0.iter_mut().for_each(|v| *v /= s0);
    Ok(NormalizedWeights {
        idx1,
        idx0,
        treated: w1,
        control: w0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Ipw1,
    Ipw2,
    Aipw1,
    Aipw2,
}

impl Estimator {
    pub fn augmented(self) -> bool {
        matches!(self, Estimator::Aipw1 | Estimator::Aipw2)
    }

    pub fn normalized(self) -> bool {
        matches!(self, Estimator::Ipw2 | Estimator::Aipw2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointEstimate {
    pub mu1: f64,
    pub mu0: f64,
    pub theta: f64,
}

impl PointEstimate {
    pub fn new(mu1: f64, mu0: f64) -> Self {
        Self {
            mu1,
            mu0,
            theta: mu1 - mu0,
        }
    }
}

/// Every point estimator the library offers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ipw1,
    Ipw2,
    Aipw1,
    Aipw2,
    Pel,
    Mcp,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Ipw1,
        Method::Ipw2,
        Method::Aipw1,
        Method::Aipw2,
        Method::Pel,
        Method::Mcp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ipw1 => "ipw1",
            Method::Ipw2 => "ipw2",
            Method::Aipw1 => "aipw1",
            Method::Aipw2 => "aipw2",
            Method::Pel => "pel",
            Method::Mcp => "mcp",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
    }

    /// The weighting estimator that yields the same point estimate.
    pub fn estimator(self) -> Option<Estimator> {
        match self {
            Method::Ipw1 => Some(Estimator::Ipw1),
            Method::Ipw2 | Method::Pel => Some(Estimator::Ipw2),
            Method::Aipw1 => Some(Estimator::Aipw1),
            Method::Aipw2 => Some(Estimator::Aipw2),
            Method::Mcp => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub lo: f64,
    pub hi: f64,
    /// Nominal coverage, `1 - alpha`.
    pub level: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub method: Method,
    pub mu1: f64,
    pub mu0: f64,
    pub theta: f64,
    pub variance: Option<f64>,
    pub ci: Option<ConfidenceInterval>,
    pub diagnostics: Vec<String>,
}

impl EstimateReport {
    pub fn new(method: Method, point: PointEstimate) -> Self {
        Self {
            method,
            mu1: point.mu1,
            mu0: point.mu0,
            theta: point.theta,
            variance: None,
            ci: None,
            diagnostics: Vec::new(),
        }
    }
}

pub fn estimate_ipw(d: &Dataset, tau: &[f64], normalized: bool) -> Result<PointEstimate> {
    check_tau(tau, d.n())?;
    let y = d.y();
    if normalized {
        let w = hajek_weights(d, tau)?;
        let mu1 = w.idx1.iter().zip(&w.treated).map(|(&j, a)| a * y[j]).sum();
        let mu0 = w.idx0.iter().zip(&w.control).map(|(&j, a)| a * y[j]).sum();
        return Ok(PointEstimate::new(mu1, mu0));
    }
    let n = d.n() as f64;
    let (mut s1, mut s0) = (0.0, 0.0);
    for j in 0..d.n() {
        if d.is_treated(j) {
            s1 += y[j] / tau[j];
        } else {
            s0 += y[j] / (1.0 - tau[j]);
        }
    }
    Ok(PointEstimate::new(s1 / n, s0 / n))
}

pub fn estimate_aipw(d: &Dataset, fits: &ModelFits, normalized: bool) -> Result<PointEstimate> {
    let tau = &fits.ps.tau_hat;
    check_tau(tau, d.n())?;
    let y = d.y();
    let (m1, m0) = (&fits.or1.fitted_all, &fits.or0.fitted_all);
    if normalized {
        let w = hajek_weights(d, tau)?;
        let r1: f64 = w
            .idx1
            .iter()
            .zip(&w.treated)
            .map(|(&j, a)| a * (y[j] - m1[j]))
            .sum();
        let r0: f64 = w
            .idx0
            .iter()
            .zip(&w.control)
            .map(|(&j, a)| a * (y[j] - m0[j]))
            .sum();
        return Ok(PointEstimate::new(r1 + fits.or1.mbar, r0 + fits.or0.mbar));
    }
    let n = d.n() as f64;
    let (mut s1, mut s0) = (0.0, 0.0);
    for j in 0..d.n() {
        if d.is_treated(j) {
            s1 += (y[j] - m1[j]) / tau[j];
        } else {
            s0 += (y[j] - m0[j]) / (1.0 - tau[j]);
        }
    }
    Ok(PointEstimate::new(
        s1 / n + fits.or1.mbar,
        s0 / n + fits.or0.mbar,
    ))
}

pub fn estimate(d: &Dataset, fits: &ModelFits, est: Estimator) -> Result<PointEstimate> {
    if est.augmented() {
        estimate_aipw(d, fits, est.normalized())
    } else {
        estimate_ipw(d, &fits.ps.tau_hat, est.normalized())
    }
}

/// Stacked estimating equations for one estimator, with the propensity and
/// (for augmented estimators) outcome regression coefficients as nuisance
/// parameters.
///
/// Parameter layout: `(mu1, theta, [mbar1, mbar0,] alpha, [beta1, beta0])`.
#[derive(Debug, Clone)]
pub struct SandwichSystem {
    est: Estimator,
    xps: DMatrix<f64>,
    xor: Option<DMatrix<f64>>,
    t: Vec<u8>,
    y: Vec<f64>,
}

impl SandwichSystem {
    pub fn new(
        d: &Dataset,
        est: Estimator,
        ps_columns: &ColumnSet,
        or_columns: &ColumnSet,
    ) -> Self {
        Self {
            est,
            xps: d.design_matrix(ps_columns),
            xor: est.augmented().then(|| d.design_matrix(or_columns)),
            t: d.t().to_vec(),
            y: d.y().to_vec(),
        }
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    fn pa(&self) -> usize {
        self.xps.ncols()
    }

    fn pb(&self) -> usize {
        self.xor.as_ref().map_or(0, |x| x.ncols())
    }

    pub fn dim(&self) -> usize {
        if self.est.augmented() {
            4 + self.pa() + 2 * self.pb()
        } else {
            2 + self.pa()
        }
    }

    fn alpha_offset(&self) -> usize {
        if self.est.augmented() {
            4
        } else {
            2
        }
    }

    /// Parameter vector at the fitted values. Outcome fits are ignored for
    /// the unaugmented estimators.
    pub fn psi_hat(
        &self,
        ps: &LogisticFit,
        or: Option<(&LinearFit, &LinearFit)>,
        point: &PointEstimate,
    ) -> DVector<f64> {
        let mut v = vec![point.mu1, point.theta];
        let or = if self.est.augmented() { or } else { None };
        if let Some((or1, or0)) = or {
            v.push(or1.mbar);
            v.push(or0.mbar);
        }
        v.extend_from_slice(&ps.alpha);
        if let Some((or1, or0)) = or {
            v.extend_from_slice(&or1.beta);
            v.extend_from_slice(&or0.beta);
        }
        DVector::from_vec(v)
    }

    fn unpack<'a>(&self, psi: &'a DVector<f64>) -> Unpacked<'a> {
        let aug = self.est.augmented();
        let (pa, pb, off) = (self.pa(), self.pb(), self.alpha_offset());
        let s = psi.as_slice();
        Unpacked {
            mu1: s[0],
            theta: s[1],
            mbar1: if aug { s[2] } else { 0.0 },
            mbar0: if aug { s[3] } else { 0.0 },
            alpha: &s[off..off + pa],
            beta1: &s[off + pa..off + pa + pb],
            beta0: &s[off + pa + pb..off + pa + 2 * pb],
        }
    }

    fn unit_terms(&self, j: usize, p: &Unpacked<'_>) -> UnitTerms {
        let eta: f64 = self
            .xps
            .row(j)
            .iter()
            .zip(p.alpha)
            .map(|(x, a)| x * a)
            .sum();
        let tau = expit(eta);
        let (m1, m0) = match &self.xor {
            Some(x) => (
                x.row(j).iter().zip(p.beta1).map(|(x, b)| x * b).sum(),
                x.row(j).iter().zip(p.beta0).map(|(x, b)| x * b).sum(),
            ),
            None => (0.0, 0.0),
        };
        let tj = f64::from(self.t[j]);
        let c = if self.est.normalized() { 0.0 } else { 1.0 };
        let mu0 = p.mu1 - p.theta;
        let e1 = self.y[j] - m1 + (1.0 - c) * (p.mbar1 - p.mu1);
        let e0 = self.y[j] - m0 + (1.0 - c) * (p.mbar0 - mu0);
        UnitTerms {
            tau,
            m1,
            m0,
            t: tj,
            a: tj / tau,
            b: (1.0 - tj) / (1.0 - tau),
            c,
            e1,
            e0,
            mu0,
        }
    }

    /// Rows are units, columns are equations.
    pub fn equations(&self, psi: &DVector<f64>) -> DMatrix<f64> {
        let p = self.unpack(psi);
        let (q, n, off, pa, pb) = (
            self.dim(),
            self.n(),
            self.alpha_offset(),
            self.pa(),
            self.pb(),
        );
        let mut u = DMatrix::zeros(n, q);
        for j in 0..n {
            let w = self.unit_terms(j, &p);
            u[(j, 0)] = w.a * w.e1 - w.c * (p.mu1 - p.mbar1);
            u[(j, 1)] = w.b * w.e0 - w.c * (w.mu0 - p.mbar0);
            if self.est.augmented() {
                u[(j, 2)] = w.m1 - p.mbar1;
                u[(j, 3)] = w.m0 - p.mbar0;
            }
            for k in 0..pa {
                u[(j, off + k)] = self.xps[(j, k)] * (w.t - w.tau);
            }
            if let Some(x) = &self.xor {
                for k in 0..pb {
                    u[(j, off + pa + k)] = w.t * (self.y[j] - w.m1) * x[(j, k)];
                    u[(j, off + pa + pb + k)] = (1.0 - w.t) * (self.y[j] - w.m0) * x[(j, k)];
                }
            }
        }
        u
    }

    /// Analytic `n^-1 sum_j dU_j / dpsi`.
    pub fn jacobian(&self, psi: &DVector<f64>) -> DMatrix<f64> {
        let p = self.unpack(psi);
        let (q, n, off, pa, pb) = (
            self.dim(),
            self.n(),
            self.alpha_offset(),
            self.pa(),
            self.pb(),
        );
        let aug = self.est.augmented();
        let (ia, ib1, ib0) = (off, off + pa, off + pa + pb);
        let mut h = DMatrix::zeros(q, q);
        for j in 0..n {
            let w = self.unit_terms(j, &p);
            let da = -w.t * (1.0 - w.tau) / w.tau;
            let db = (1.0 - w.t) * w.tau / (1.0 - w.tau);
            let g1 = (1.0 - w.c) * w.a + w.c;
            let g0 = (1.0 - w.c) * w.b + w.c;

            h[(0, 0)] -= g1;
            h[(1, 0)] -= g0;
            h[(1, 1)] += g0;
            if aug {
                h[(0, 2)] += g1;
                h[(1, 3)] += g0;
                h[(2, 2)] -= 1.0;
                h[(3, 3)] -= 1.0;
            }
            let wps = w.tau * (1.0 - w.tau);
            for k in 0..pa {
                let xk = self.xps[(j, k)];
                h[(0, ia + k)] += w.e1 * da * xk;
                h[(1, ia + k)] += w.e0 * db * xk;
                for l in 0..pa {
                    h[(ia + k, ia + l)] -= wps * xk * self.xps[(j, l)];
                }
            }
            if let Some(x) = &self.xor {
                for k in 0..pb {
                    let xk = x[(j, k)];
                    h[(0, ib1 + k)] -= w.a * xk;
                    h[(1, ib0 + k)] -= w.b * xk;
                    h[(2, ib1 + k)] += xk;
                    h[(3, ib0 + k)] += xk;
                    for l in 0..pb {
                        h[(ib1 + k, ib1 + l)] -= w.t * xk * x[(j, l)];
                        h[(ib0 + k, ib0 + l)] -= (1.0 - w.t) * xk * x[(j, l)];
                    }
                }
            }
        }
        h / n as f64
    }

    /// Full sandwich covariance `H^-1 (n^-2 sum U U') H^-T`.
    pub fn covariance(&self, psi: &DVector<f64>) -> Result<DMatrix<f64>> {
        let n = self.n() as f64;
        let h = self.jacobian(psi);
        let (hinv, _) = checked_inverse(&h, MAX_CONDITION, "sandwich bread")?;
        let u = self.equations(psi);
        let meat = u.transpose() * &u / (n * n);
        Ok(&hinv * meat * hinv.transpose())
    }
}

struct Unpacked<'a> {
    mu1: f64,
    theta: f64,
    mbar1: f64,
    mbar0: f64,
    alpha: &'a [f64],
    beta1: &'a [f64],
    beta0: &'a [f64],
}

struct UnitTerms {
    tau: f64,
    m1: f64,
    m0: f64,
    t: f64,
    a: f64,
    b: f64,
    c: f64,
    e1: f64,
    e0: f64,
    mu0: f64,
}

/// Sandwich variance of the treatment effect estimate.
pub fn sandwich_variance(
    d: &Dataset,
    fits: &ModelFits,
    est: Estimator,
    point: &PointEstimate,
) -> Result<f64> {
    let sys = SandwichSystem::new(d, est, &fits.ps.columns, &fits.or1.columns);
    let psi = sys.psi_hat(&fits.ps, Some((&fits.or1, &fits.or0)), point);
    finish_variance(&sys, &psi)
}

/// Sandwich variance for the unaugmented estimators, which need only the
/// propensity fit.
pub fn sandwich_variance_ipw(
    d: &Dataset,
    ps: &LogisticFit,
    normalized: bool,
    point: &PointEstimate,
) -> Result<f64> {
    let est = if normalized {
        Estimator::Ipw2
    } else {
        Estimator::Ipw1
    };
    let sys = SandwichSystem::new(d, est, &ps.columns, &ColumnSet::All);
    let psi = sys.psi_hat(ps, None, point);
    finish_variance(&sys, &psi)
}

fn finish_variance(sys: &SandwichSystem, psi: &DVector<f64>) -> Result<f64> {
    let v = sys.covariance(psi)?[(1, 1)];
    if !(v.is_finite() && v > 0.0) {
        return Err(PelError::DegenerateScale(format!("sandwich variance {v}")));
    }
    Ok(v)
}

/// Two sided normal quantile `z_{1 - alpha/2}`.
pub fn normal_quantile(alpha: f64) -> f64 {
    Normal::new(0.0, 1.0)
        .expect("standard normal")
        .inverse_cdf(1.0 - alpha / 2.0)
}

pub fn wald_interval(theta: f64, variance: f64, alpha: f64) -> ConfidenceInterval {
    let h = normal_quantile(alpha) * variance.sqrt();
    ConfidenceInterval {
        lo: theta - h,
        hi: theta + h,
        level: 1.0 - alpha,
    }
}
