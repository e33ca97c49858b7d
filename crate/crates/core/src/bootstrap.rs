//! Nonparametric bootstrap: resampling, variance of doubly robust estimators,
//! and calibration of the model-calibrated ratio.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{derive_seed, Dataset, SeedSpec};
use crate::error::{PelError, Result};
use crate::glm::{ModelFits, ModelSpec};
use crate::pel::{ratio_interval, CalibratedProblem, PelInterval};

pub const DEFAULT_B: usize = 1000;
/// Largest tolerated share of failed replicates.
pub const MAX_FAILURE_FRACTION: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BootstrapTarget {
    VarianceDr,
    PelRatioCalibration,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapPlan {
    pub b: usize,
    pub master_seed: u64,
    pub target: BootstrapTarget,
    pub alpha: f64,
}

impl BootstrapPlan {
    pub fn new(b: usize, master_seed: u64, target: BootstrapTarget) -> Self {
        Self { b, master_seed, target, alpha: 0.05 }
    }

    fn validate(&self) -> Result<()> {
        if self.b == 0 {
            return Err(PelError::Usage("bootstrap size must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(PelError::Usage(format!("alpha {} outside (0, 1)", self.alpha)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub replicate_values: Vec<f64>,
    pub variance: Option<f64>,
    pub quantile: Option<f64>,
    pub failures: usize,
}

/// Row indices of one with-replacement draw of size `n`.
pub fn resample_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(0..n)).collect()
}

/// Fails when the draw leaves an arm empty.
pub fn resample(d: &Dataset, seed: u64) -> Result<Dataset> {
    d.select_rows(&resample_indices(d.n(), seed))
}

/// Evaluates `stat` on `b` resamples in parallel. Order of the returned
/// values follows the replicate index, independent of scheduling.
pub fn replicate_map<F>(d: &Dataset, b: usize, master_seed: u64, stat: F) -> Result<(Vec<f64>, usize)>
where
    F: Fn(&Dataset) -> Result<f64> + Sync,
{
    let outcomes: Vec<Option<f64>> = (0..b as u64)
        .into_par_iter()
        .map(|stream| {
            let seed = derive_seed(SeedSpec { master: master_seed, stream });
            resample(d, seed).and_then(|r| stat(&r)).ok().filter(|v| !v.is_nan())
        })
        .collect();
    let values: Vec<f64> = outcomes.iter().flatten().copied().collect();
    let failures = b - values.len();
    if failures as f64 > MAX_FAILURE_FRACTION * b as f64 {
        return Err(PelError::TooManyFailures { failed: failures, total: b });
    }
    Ok((values, failures))
}

/// `B^-1 sum (v - vbar)^2`.
pub fn population_variance(values: &[f64]) -> f64 {
    let m = values.iter().sum::<f64>() / values.len() as f64;
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64
}

/// Type-1 empirical quantile: the `ceil(alpha B)`-th smallest value.
pub fn lower_quantile(values: &[f64], alpha: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = ((alpha * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[k - 1]
}

/// Bootstrap variance of an estimator that refits everything it needs from
/// the resampled data.
pub fn bootstrap_variance<F>(d: &Dataset, estimator: F, plan: &BootstrapPlan) -> Result<BootstrapResult>
where
    F: Fn(&Dataset) -> Result<f64> + Sync,
{
    plan.validate()?;
    let (values, failures) = replicate_map(d, plan.b, plan.master_seed, estimator)?;
    Ok(BootstrapResult { variance: Some(population_variance(&values)), replicate_values: values, quantile: None, failures })
}

/// Replicate ratio at `theta`: models refitted, calibration targets and
/// reference maximizer recomputed on the resample.
pub fn replicate_ratio(r: &Dataset, spec: &ModelSpec, theta: f64) -> Result<f64> {
    let fits = ModelFits::fit(r, spec)?;
    let prob = CalibratedProblem::new(r, &fits)?;
    let mcp = prob.solve_mcp()?;
    let v = prob.ratio(theta, &mcp)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(PelError::Infeasible(format!("theta {theta} not attainable in the resample")))
    }
}

/// Lower `alpha` quantile of replicate ratios at `theta_mcp`.
pub fn bootstrap_ratio_quantile(d: &Dataset, spec: &ModelSpec, theta_mcp: f64, plan: &BootstrapPlan) -> Result<BootstrapResult> {
    plan.validate()?;
    let (values, failures) = replicate_map(d, plan.b, plan.master_seed, |r| replicate_ratio(r, spec, theta_mcp))?;
    let quantile = lower_quantile(&values, plan.alpha);
    Ok(BootstrapResult { replicate_values: values, variance: None, quantile: Some(quantile), failures })
}

/// `{theta : r(theta) > q}` with `q` the bootstrap quantile.
pub fn bootstrap_pel_ci(d: &Dataset, fits: &ModelFits, theta_mcp: f64, plan: &BootstrapPlan) -> Result<(PelInterval, BootstrapResult)> {
    let boot = bootstrap_ratio_quantile(d, &fits.spec(), theta_mcp, plan)?;
    let q = boot.quantile.expect("quantile target");
    let prob = CalibratedProblem::new(d, fits)?;
    let mcp = prob.solve_mcp()?;
    let step = 2.0 * (-q / 2.0).max(0.0).sqrt();
    let iv = ratio_interval(|t| prob.ratio(t, &mcp), mcp.point.theta, q, step)?;
    Ok((iv, boot))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn toy(n: usize) -> Dataset {
        let rows: Vec<Vec<f64>> = (0..n).map(|j| vec![(j as f64 * 0.7).sin()]).collect();
        let t: Vec<u8> = (0..n).map(|j| (j % 2) as u8).collect();
        let y: Vec<f64> = (0..n).map(|j| j as f64 * 0.1).collect();
        Dataset::from_rows(&rows, t, y).unwrap()
    }

    #[test]
    fn single_row_resample_repeats_it() {
        for s in 0..20 {
            assert_eq!(resample_indices(1, s), vec![0]);
        }
    }

    #[test]
    fn resample_is_deterministic() {
        let d = toy(30);
        assert_eq!(resample(&d, 7).unwrap(), resample(&d, 7).unwrap());
        assert_ne!(resample_indices(30, 7), resample_indices(30, 8));
    }

    #[test]
    fn inclusion_frequency_matches_analytic_value() {
        let reps = 10_000;
        let mut hits = [0usize; 10];
        for s in 0..reps {
            let idx = resample_indices(10, derive_seed(SeedSpec { master: 5, stream: s }));
            for (k, h) in hits.iter_mut().enumerate() {
                if idx.contains(&k) {
                    *h += 1;
                }
            }
        }
        let expect = 1.0 - 0.9f64.powi(10);
        for h in hits {
            assert!((h as f64 / reps as f64 - expect).abs() < 0.02);
        }
    }

    #[test]
    fn variance_formula() {
        assert_abs_diff_eq!(population_variance(&[3.0, 5.0, 7.0]), 8.0 / 3.0, epsilon = 1e-14);
        let d = toy(20);
        let plan = BootstrapPlan::new(50, 1, BootstrapTarget::VarianceDr);
        let r = bootstrap_variance(&d, |_| Ok(4.2), &plan).unwrap();
        assert!(r.variance.unwrap() < 1e-20);
    }

    #[test]
    fn type_one_quantile() {
        let v = [5.0, 1.0, 4.0, 2.0, 3.0];
        assert_eq!(lower_quantile(&v, 0.2), 1.0);
        assert_eq!(lower_quantile(&v, 0.21), 2.0);
        assert_eq!(lower_quantile(&v, 0.01), 1.0);
        assert!(lower_quantile(&v, 0.05) <= lower_quantile(&v, 0.5));
    }

    #[test]
    fn failures_are_counted_and_capped() {
        let d = toy(20);
        // first drawn row is the last unit about once in twenty replicates
        let stat = |r: &Dataset| {
            if r.y()[0] > 1.85 {
                Err(PelError::InvalidData("rejected".into()))
            } else {
                Ok(1.0)
            }
        };
        let (vals, failed) = replicate_map(&d, 200, 3, stat).unwrap();
        assert!(failed > 0);
        assert_eq!(vals.len() + failed, 200);
        let err = replicate_map(&d, 100, 3, |_| Err(PelError::InvalidData("always".into()))).unwrap_err();
        assert_eq!(err, PelError::TooManyFailures { failed: 100, total: 100 });
    }

    #[test]
    fn parallel_and_serial_agree() {
        let d = toy(40);
        let stat = |r: &Dataset| Ok(r.y().iter().sum::<f64>());
        let (par, _) = replicate_map(&d, 64, 11, stat).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let (ser, _) = pool.install(|| replicate_map(&d, 64, 11, stat)).unwrap();
        assert_eq!(par, ser);
    }
}
