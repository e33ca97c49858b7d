//! One entry point from (method, interval kind) to a finished report.

use serde::{Deserialize, Serialize};

use crate::bootstrap::{bootstrap_pel_ci, bootstrap_variance, BootstrapPlan, BootstrapTarget, DEFAULT_B};
use crate::data::Dataset;
use crate::error::{PelError, Result};
use crate::glm::{ModelFits, ModelSpec};
use crate::pel::{asymptotics_mc, ci_pel, BasicProblem, CalibratedProblem};
use crate::weighting::{
    estimate, sandwich_variance, wald_interval, ConfidenceInterval, EstimateReport, Estimator, Method,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntervalKind {
    None,
    Wald,
    Pelr,
    McpChi2,
    McpBoot,
    BootWald,
}

impl IntervalKind {
    pub const ALL: [IntervalKind; 6] = [
        IntervalKind::None,
        IntervalKind::Wald,
        IntervalKind::Pelr,
        IntervalKind::McpChi2,
        IntervalKind::McpBoot,
        IntervalKind::BootWald,
    ];

    pub fn name(self) -> &'static str {
        match self {
            IntervalKind::None => "none",
            IntervalKind::Wald => "wald",
            IntervalKind::Pelr => "pelr",
            IntervalKind::McpChi2 => "mcp-chi2",
            IntervalKind::McpBoot => "mcp-boot",
            IntervalKind::BootWald => "boot-wald",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name().eq_ignore_ascii_case(s))
    }

    pub fn compatible(self, method: Method) -> bool {
        use Method::*;
        match self {
            IntervalKind::None => true,
            IntervalKind::Wald | IntervalKind::BootWald => matches!(method, Ipw1 | Ipw2 | Aipw1 | Aipw2),
            IntervalKind::Pelr => method == Pel,
            IntervalKind::McpChi2 | IntervalKind::McpBoot => method == Mcp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferenceOptions {
    pub alpha: f64,
    pub bootstrap_b: usize,
    pub seed: u64,
}

impl Default for InferenceOptions {
    fn default() -> Self {
        Self { alpha: 0.05, bootstrap_b: DEFAULT_B, seed: 0 }
    }
}

pub fn run_estimate(
    d: &Dataset,
    spec: &ModelSpec,
    method: Method,
    ci: IntervalKind,
    opts: &InferenceOptions,
) -> Result<EstimateReport> {
    if !ci.compatible(method) {
        return Err(PelError::Usage(format!(
            "interval '{}' is not available for method '{}'",
            ci.name(),
            method.name()
        )));
    }
    let fits = ModelFits::fit(d, spec)?;
    estimate_with_fits(d, &fits, method, ci, opts)
}

/// As [`run_estimate`] with models already fitted on `d`.
pub fn estimate_with_fits(
    d: &Dataset,
    fits: &ModelFits,
    method: Method,
    ci: IntervalKind,
    opts: &InferenceOptions,
) -> Result<EstimateReport> {
    if !ci.compatible(method) {
        return Err(PelError::Usage(format!(
            "interval '{}' is not available for method '{}'",
            ci.name(),
            method.name()
        )));
    }
    if !(opts.alpha > 0.0 && opts.alpha < 1.0) {
        return Err(PelError::Usage(format!("alpha {} outside (0, 1)", opts.alpha)));
    }
    let level = 1.0 - opts.alpha;
    match method {
        Method::Mcp => mcp_report(d, fits, ci, opts),
        Method::Pel => {
            let prob = BasicProblem::new(d, &fits.ps.tau_hat)?;
            let mut report = EstimateReport::new(Method::Pel, prob.point());
            let var = sandwich_variance(d, fits, Estimator::Ipw2, &prob.point())?;
            report.variance = Some(var);
            if ci == IntervalKind::Pelr {
                let c = prob.scaling(var)?;
                report.diagnostics.push(format!("scale c_hat = {c:.10e}"));
                let iv = ci_pel(|t| prob.ratio(t), c, opts.alpha, report.theta)?;
                flag_interval(&mut report, iv.lo_clamped, iv.hi_clamped);
                report.ci = Some(ConfidenceInterval { lo: iv.lo, hi: iv.hi, level });
            }
            Ok(report)
        }
        _ => {
            let est = method.estimator().expect("weighting estimator");
            let point = estimate(d, fits, est)?;
            let mut report = EstimateReport::new(method, point);
            match ci {
                IntervalKind::None | IntervalKind::Wald => {
                    let var = sandwich_variance(d, fits, est, &point)?;
                    report.variance = Some(var);
                    if ci == IntervalKind::Wald {
                        report.ci = Some(wald_interval(point.theta, var, opts.alpha));
                    }
                }
                IntervalKind::BootWald => {
                    let plan = BootstrapPlan {
                        b: opts.bootstrap_b,
                        master_seed: opts.seed,
                        target: BootstrapTarget::VarianceDr,
                        alpha: opts.alpha,
                    };
                    let spec = fits.spec();
                    let boot = bootstrap_variance(
                        d,
                        |r| Ok(estimate(r, &ModelFits::fit(r, &spec)?, est)?.theta),
                        &plan,
                    )?;
                    let var = boot.variance.expect("variance target");
                    if boot.failures > 0 {
                        report.diagnostics.push(format!("{} bootstrap replicates failed", boot.failures));
                    }
                    report.variance = Some(var);
                    report.ci = Some(wald_interval(point.theta, var, opts.alpha));
                }
                _ => unreachable!("compatibility checked above"),
            }
            Ok(report)
        }
    }
}

fn flag_interval(report: &mut EstimateReport, lo: bool, hi: bool) {
    if lo {
        report.diagnostics.push("lower endpoint clamped at the attainable range".into());
    }
    if hi {
        report.diagnostics.push("upper endpoint clamped at the attainable range".into());
    }
}

fn mcp_report(d: &Dataset, fits: &ModelFits, ci: IntervalKind, opts: &InferenceOptions) -> Result<EstimateReport> {
    let prob = CalibratedProblem::new(d, fits)?;
    let mcp = prob.solve_mcp()?;
    let mut report = EstimateReport::new(Method::Mcp, mcp.point);
    if prob.vacuous1 {
        report.diagnostics.push("treated calibration constraint is vacuous".into());
    }
    if prob.vacuous0 {
        report.diagnostics.push("control calibration constraint is vacuous".into());
    }
    if let Some(b) = mcp.b_hat {
        report.diagnostics.push(format!("b_hat = {b:.10e}"));
    }
    let level = 1.0 - opts.alpha;
    match ci {
        IntervalKind::McpChi2 => {
            let asy = asymptotics_mc(d, fits, &prob, &mcp)?;
            report.diagnostics.push(format!("scale delta_hat = {:.10e}", asy.delta_hat));
            let iv = ci_pel(|t| prob.ratio(t, &mcp), asy.delta_hat, opts.alpha, mcp.point.theta)?;
            flag_interval(&mut report, iv.lo_clamped, iv.hi_clamped);
            report.ci = Some(ConfidenceInterval { lo: iv.lo, hi: iv.hi, level });
        }
        IntervalKind::McpBoot => {
            let plan = BootstrapPlan {
                b: opts.bootstrap_b,
                master_seed: opts.seed,
                target: BootstrapTarget::PelRatioCalibration,
                alpha: opts.alpha,
            };
            let (iv, boot) = bootstrap_pel_ci(d, fits, mcp.point.theta, &plan)?;
            report.diagnostics.push(format!(
                "bootstrap ratio quantile = {:.10e}",
                boot.quantile.expect("quantile target")
            ));
            if boot.failures > 0 {
                report.diagnostics.push(format!("{} bootstrap replicates failed", boot.failures));
            }
            if iv.degenerate {
                report.diagnostics.push("bootstrap quantile is zero: degenerate interval".into());
            }
            flag_interval(&mut report, iv.lo_clamped, iv.hi_clamped);
            report.ci = Some(ConfidenceInterval { lo: iv.lo, hi: iv.hi, level });
        }
        _ => {}
    }
    Ok(report)
}
