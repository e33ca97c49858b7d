//! Monte Carlo harness: calibrated data-generating process, misspecification
//! scenarios, point and interval metrics, and power curves.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::sync::{Mutex, OnceLock};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bootstrap::DEFAULT_B;
use crate::data::{derive_seed, ColumnSet, Dataset, SeedSpec};
use crate::error::{PelError, Result};
use crate::glm::{expit, ModelFits, ModelSpec};
use crate::inference::{estimate_with_fits, InferenceOptions, IntervalKind};
use crate::pel::{asymptotics_mc, chi2_1_quantile, BasicProblem, CalibratedProblem};
use crate::weighting::{sandwich_variance, Estimator, Method};

/// True effect of the base design.
pub const THETA0: f64 = 2.88;
/// Control intercept when the effect is a free parameter.
pub const POWER_CONTROL_INTERCEPT: f64 = 3.88;
pub const CALIBRATION_DRAWS: usize = 1_000_000;
pub const CALIBRATION_TOL: f64 = 5e-4;
pub const DEFAULT_CALIBRATION_SEED: u64 = 20_240_501;
/// Largest tolerated share of failed replicates.
pub const MAX_FAILURE_FRACTION: f64 = 0.05;
pub const DEFAULT_POWER_GRID: [f64; 4] = [0.0, 1.0, 2.0, 3.0];
/// Index of the covariate dropped by the misspecified fits.
const DROPPED: usize = 2;
const NCOV: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DgpParams {
    pub alpha0: f64,
    pub a1: f64,
    pub a0: f64,
    pub t: f64,
    pub rho: f64,
    /// `Some(theta)` switches to the shifted-intercept design with true effect `theta`.
    pub theta_shift: Option<f64>,
    pub s_lp1: f64,
    pub s_lp0: f64,
}

impl DgpParams {
    pub fn true_theta(&self) -> f64 {
        self.theta_shift.unwrap_or(THETA0)
    }

    pub fn with_theta(mut self, theta: f64) -> Self {
        self.theta_shift = Some(theta);
        self
    }

    fn intercepts(&self) -> (f64, f64) {
        match self.theta_shift {
            Some(th) => (th + 4.5, POWER_CONTROL_INTERCEPT),
            None => (4.5, 1.0),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Draw {
    x: [f64; NCOV],
    eta: f64,
    lp1: f64,
    lp0: f64,
}

fn draw_covariates<R: Rng>(rng: &mut R) -> Draw {
    let v1: f64 = rng.sample(StandardNormal);
    let v2 = f64::from(u8::from(rng.gen::<f64>() < 0.6));
    let v3: f64 = rng.sample(Exp1);
    let x1 = v1;
    let x2 = v2 + 0.2 * x1;
    let x3 = v3 + 0.3 * (x1 + x2);
    Draw {
        x: [x1, x2, x3],
        eta: 0.2 * x1 + 0.2 * x2 - 0.5 * x3,
        lp1: x1 - 2.0 * x2 + 3.0 * x3,
        lp0: x1 + x2 + 2.0 * x3,
    }
}

fn sd(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
}

/// Solves for the propensity intercept and noise scales on one Monte Carlo sample.
pub fn calibrate_dgp(t: f64, rho: f64, seed: u64) -> Result<DgpParams> {
    if !(t > 0.0 && t < 1.0) || !(rho > 0.0 && rho < 1.0) {
        return Err(PelError::Calibration(format!("t = {t} and rho = {rho} must lie in (0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut eta = Vec::with_capacity(CALIBRATION_DRAWS);
    let mut lp1 = Vec::with_capacity(CALIBRATION_DRAWS);
    let mut lp0 = Vec::with_capacity(CALIBRATION_DRAWS);
    for _ in 0..CALIBRATION_DRAWS {
        let d = draw_covariates(&mut rng);
        eta.push(d.eta);
        lp1.push(d.lp1);
        lp0.push(d.lp0);
    }
    let mean_tau = |a: f64| eta.par_iter().map(|e| expit(a + e)).sum::<f64>() / eta.len() as f64 - t;
    let (mut lo, mut hi) = (-20.0, 20.0);
    if !(mean_tau(lo) < 0.0 && mean_tau(hi) > 0.0) {
        return Err(PelError::Calibration(format!("no intercept in [-20, 20] gives treated share {t}")));
    }
    let mut alpha0 = 0.5 * (lo + hi);
    for _ in 0..200 {
        let f = mean_tau(alpha0);
        if f.abs() < CALIBRATION_TOL && hi - lo < 1e-6 {
            break;
        }
        if f < 0.0 {
            lo = alpha0;
        } else {
            hi = alpha0;
        }
        alpha0 = 0.5 * (lo + hi);
    }
    if mean_tau(alpha0).abs() >= CALIBRATION_TOL {
        return Err(PelError::Calibration(format!("intercept bisection stalled at {alpha0}")));
    }
    let (s_lp1, s_lp0) = (sd(&lp1), sd(&lp0));
    let k = (1.0 - rho * rho).sqrt() / rho;
    Ok(DgpParams { alpha0, a1: s_lp1 * k, a0: s_lp0 * k, t, rho, theta_shift: None, s_lp1, s_lp0 })
}

/// Calibration memoized per `(t, rho, seed)` within the process.
pub fn calibrate_cached(t: f64, rho: f64, seed: u64) -> Result<DgpParams> {
    static CACHE: OnceLock<Mutex<HashMap<(u64, u64, u64), DgpParams>>> = OnceLock::new();
    let key = (t.to_bits(), rho.to_bits(), seed);
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(p) = cache.lock().expect("calibration cache").get(&key) {
        return Ok(*p);
    }
    let p = calibrate_dgp(t, rho, seed)?;
    cache.lock().expect("calibration cache").insert(key, p);
    Ok(p)
}

#[derive(Debug, Clone)]
pub struct SimSample {
    pub data: Dataset,
    pub y1: Vec<f64>,
    pub y0: Vec<f64>,
    pub tau: Vec<f64>,
}

impl SimSample {
    /// Sample average of the hidden unit-level effects.
    pub fn oracle_theta(&self) -> f64 {
        self.y1.iter().zip(&self.y0).map(|(a, b)| a - b).sum::<f64>() / self.y1.len() as f64
    }
}

pub fn gen_sample(n: usize, p: &DgpParams, seed: u64) -> Result<SimSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (c1, c0) = p.intercepts();
    let mut x = DMatrix::zeros(n, NCOV);
    let mut t = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut y1 = Vec::with_capacity(n);
    let mut y0 = Vec::with_capacity(n);
    let mut tau = Vec::with_capacity(n);
    for j in 0..n {
        let d = draw_covariates(&mut rng);
        for (c, v) in d.x.iter().enumerate() {
            x[(j, c)] = *v;
        }
        let tj = expit(p.alpha0 + d.eta);
        let treated = rng.gen::<f64>() < tj;
        let eps: f64 = rng.sample(StandardNormal);
        let (u1, u0) = (c1 + d.lp1 + p.a1 * eps, c0 + d.lp0 + p.a0 * eps);
        tau.push(tj);
        y1.push(u1);
        y0.push(u0);
        t.push(u8::from(treated));
        y.push(if treated { u1 } else { u0 });
    }
    Ok(SimSample { data: Dataset::new(x, t, y)?, y1, y0, tau })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scenario {
    TT,
    TF,
    FT,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::TT, Scenario::TF, Scenario::FT];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::TT => "TT",
            Scenario::TF => "TF",
            Scenario::FT => "FT",
        }
    }

    pub fn model_spec(self) -> ModelSpec {
        let drop = ColumnSet::excluding(NCOV, DROPPED);
        match self {
            Scenario::TT => ModelSpec::default(),
            Scenario::TF => ModelSpec { ps_columns: ColumnSet::All, or_columns: drop },
            Scenario::FT => ModelSpec { ps_columns: drop, or_columns: ColumnSet::All },
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IntervalMethod {
    Ipw2,
    Pelr,
    Aipw2,
    Aipw2B,
    Mcp,
    McpB,
}

impl IntervalMethod {
    pub const ALL: [IntervalMethod; 6] = [
        IntervalMethod::Ipw2,
        IntervalMethod::Pelr,
        IntervalMethod::Aipw2,
        IntervalMethod::Aipw2B,
        IntervalMethod::Mcp,
        IntervalMethod::McpB,
    ];

    pub fn name(self) -> &'static str {
        match self {
            IntervalMethod::Ipw2 => "I_IPW2",
            IntervalMethod::Pelr => "I_PELR",
            IntervalMethod::Aipw2 => "I_AIPW2",
            IntervalMethod::Aipw2B => "I_AIPW2B",
            IntervalMethod::Mcp => "I_MCP",
            IntervalMethod::McpB => "I_MCPB",
        }
    }

    pub fn route(self) -> (Method, IntervalKind) {
        match self {
            IntervalMethod::Ipw2 => (Method::Ipw2, IntervalKind::Wald),
            IntervalMethod::Pelr => (Method::Pel, IntervalKind::Pelr),
            IntervalMethod::Aipw2 => (Method::Aipw2, IntervalKind::Wald),
            IntervalMethod::Aipw2B => (Method::Aipw2, IntervalKind::BootWald),
            IntervalMethod::Mcp => (Method::Mcp, IntervalKind::McpChi2),
            IntervalMethod::McpB => (Method::Mcp, IntervalKind::McpBoot),
        }
    }
}

/// A point estimator (`IPW2`, `MCP`, ...) or an interval (`I_MCP`, ...).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SimMethod {
    Point(Method),
    Interval(IntervalMethod),
}

impl SimMethod {
    pub fn name(self) -> String {
        match self {
            SimMethod::Point(m) => m.name().to_ascii_uppercase(),
            SimMethod::Interval(i) => i.name().to_string(),
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        IntervalMethod::ALL
            .into_iter()
            .find(|i| i.name().eq_ignore_ascii_case(s))
            .map(SimMethod::Interval)
            .or_else(|| Method::parse(s).map(SimMethod::Point))
    }

    pub fn table_set() -> Vec<SimMethod> {
        let mut v: Vec<SimMethod> =
            [Method::Ipw2, Method::Pel, Method::Aipw2, Method::Mcp].into_iter().map(SimMethod::Point).collect();
        v.extend(IntervalMethod::ALL.into_iter().map(SimMethod::Interval));
        v
    }

    pub fn power_set() -> Vec<SimMethod> {
        vec![SimMethod::Interval(IntervalMethod::Aipw2), SimMethod::Interval(IntervalMethod::Mcp)]
    }
}

impl TryFrom<String> for SimMethod {
    type Error = String;
    fn try_from(s: String) -> std::result::Result<Self, String> {
        SimMethod::parse(&s).ok_or_else(|| format!("unknown method '{s}'"))
    }
}

impl From<SimMethod> for String {
    fn from(m: SimMethod) -> String {
        m.name()
    }
}

fn default_alpha() -> f64 {
    0.05
}
fn default_b() -> usize {
    DEFAULT_B
}
fn default_calibration_seed() -> u64 {
    DEFAULT_CALIBRATION_SEED
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub n: usize,
    pub n_sim: usize,
    pub t: f64,
    pub rho: f64,
    pub scenario: Scenario,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub methods: Option<Vec<SimMethod>>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(rename = "B", default = "default_b")]
    pub b: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_grid: Option<Vec<f64>>,
    #[serde(default = "default_calibration_seed")]
    pub calibration_seed: u64,
}

impl ScenarioConfig {
    pub fn new(n: usize, n_sim: usize, t: f64, rho: f64, scenario: Scenario) -> Self {
        Self {
            n,
            n_sim,
            t,
            rho,
            scenario,
            methods: None,
            alpha: default_alpha(),
            b: default_b(),
            master_seed: 0,
            theta_grid: None,
            calibration_seed: DEFAULT_CALIBRATION_SEED,
        }
    }

    pub fn with_methods(mut self, methods: &[SimMethod]) -> Self {
        self.methods = Some(methods.to_vec());
        self
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| PelError::Usage(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PelError::Usage(m));
        if self.n < 20 {
            return bad(format!("n = {} is too small (need at least 20)", self.n));
        }
        if self.n_sim == 0 {
            return bad("n_sim must be positive".into());
        }
        if !(self.t > 0.0 && self.t < 1.0) {
            return bad(format!("t = {} outside (0, 1)", self.t));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return bad(format!("rho = {} outside (0, 1)", self.rho));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha = {} outside (0, 1)", self.alpha));
        }
        if self.b == 0 {
            return bad("B must be positive".into());
        }
        if matches!(&self.methods, Some(m) if m.is_empty()) {
            return bad("methods list is empty".into());
        }
        if matches!(&self.theta_grid, Some(g) if g.is_empty() || g.iter().any(|v| !v.is_finite())) {
            return bad("theta_grid must hold finite values".into());
        }
        Ok(())
    }

    pub fn scenario_methods(&self) -> Vec<SimMethod> {
        self.methods.clone().unwrap_or_else(SimMethod::table_set)
    }

    pub fn power_methods(&self) -> Vec<SimMethod> {
        self.methods.clone().unwrap_or_else(SimMethod::power_set)
    }

    pub fn power_grid(&self) -> Vec<f64> {
        self.theta_grid.clone().unwrap_or_else(|| DEFAULT_POWER_GRID.to_vec())
    }

    fn options(&self, replicate_seed: u64) -> InferenceOptions {
        InferenceOptions {
            alpha: self.alpha,
            bootstrap_b: self.b,
            seed: derive_seed(SeedSpec { master: replicate_seed, stream: u64::MAX }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Outcome {
    Point(f64),
    Interval { lo: f64, hi: f64 },
}

/// Evaluates each requested method on one simulated sample.
pub fn evaluate_replicate(
    d: &Dataset,
    spec: &ModelSpec,
    methods: &[SimMethod],
    opts: &InferenceOptions,
) -> Result<Vec<Outcome>> {
    let fits = ModelFits::fit(d, spec)?;
    methods
        .iter()
        .map(|m| match *m {
            SimMethod::Point(method) => {
                Ok(Outcome::Point(estimate_with_fits(d, &fits, method, IntervalKind::None, opts)?.theta))
            }
            SimMethod::Interval(im) => {
                let (method, kind) = im.route();
                let r = estimate_with_fits(d, &fits, method, kind, opts)?;
                let ci = r.ci.expect("interval route yields an interval");
                Ok(Outcome::Interval { lo: ci.lo, hi: ci.hi })
            }
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicateFailure {
    pub replicate: usize,
    pub error: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicateRun {
    /// Successful replicates in index order; each holds one outcome per method.
    pub outcomes: Vec<Vec<Outcome>>,
    pub failures: Vec<ReplicateFailure>,
    pub replicates_run: usize,
}

/// Runs replicate indices `0, 1, ...` until `cfg.n_sim` succeed.
pub fn run_replicates(cfg: &ScenarioConfig, params: &DgpParams, methods: &[SimMethod]) -> Result<ReplicateRun> {
    let spec = cfg.scenario.model_spec();
    let budget = (MAX_FAILURE_FRACTION * cfg.n_sim as f64).floor() as usize;
    let mut outcomes = Vec::with_capacity(cfg.n_sim);
    let mut failures = Vec::new();
    let mut next = 0usize;
    while outcomes.len() < cfg.n_sim {
        let want = cfg.n_sim - outcomes.len();
        let batch: Vec<(usize, Result<Vec<Outcome>>)> = (next..next + want)
            .into_par_iter()
            .map(|s| {
                let seed = derive_seed(SeedSpec { master: cfg.master_seed, stream: s as u64 });
                let res = gen_sample(cfg.n, params, seed)
                    .and_then(|smp| evaluate_replicate(&smp.data, &spec, methods, &cfg.options(seed)));
                (s, res)
            })
            .collect();
        next += want;
        for (s, res) in batch {
            match res {
                Ok(o) => outcomes.push(o),
                Err(e) => failures.push(ReplicateFailure { replicate: s, error: e.to_string() }),
            }
        }
        if failures.len() > budget {
            return Err(PelError::TooManyFailures { failed: failures.len(), total: next });
        }
    }
    Ok(ReplicateRun { outcomes, failures, replicates_run: next })
}

/// `(%RB, MSE)`; `%RB` is undefined when the truth is zero.
pub fn point_metrics(estimates: &[f64], theta0: f64) -> (Option<f64>, f64) {
    let k = estimates.len() as f64;
    let bias = estimates.iter().map(|e| e - theta0).sum::<f64>() / k;
    let mse = estimates.iter().map(|e| (e - theta0).powi(2)).sum::<f64>() / k;
    let rb = (theta0 != 0.0).then(|| 100.0 * bias / theta0);
    (rb, mse)
}

/// `(%CP, AL, share of intervals excluding zero)`.
pub fn interval_metrics(intervals: &[(f64, f64)], theta0: f64) -> (f64, f64, f64) {
    let k = intervals.len() as f64;
    let cover = intervals.iter().filter(|(lo, hi)| *lo <= theta0 && theta0 <= *hi).count() as f64;
    let len = intervals.iter().map(|(lo, hi)| hi - lo).sum::<f64>();
    let reject = intervals.iter().filter(|(lo, hi)| *lo > 0.0 || *hi < 0.0).count() as f64;
    (100.0 * cover / k, len / k, reject / k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub scenario: Scenario,
    pub n: usize,
    pub t: f64,
    pub rho: f64,
    pub method: String,
    pub rb_pct: Option<f64>,
    pub mse_x100: Option<f64>,
    pub cp_pct: Option<f64>,
    pub al_x100: Option<f64>,
    pub rejection_rate: Option<f64>,
    pub failures: usize,
}

pub const METRICS_HEADER: [&str; 11] =
    ["scenario", "n", "t", "rho", "method", "rb_pct", "mse_x100", "cp_pct", "al_x100", "rejection_rate", "failures"];

/// Rounds to ten significant digits and prints without exponent.
pub fn fmt_sig(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    let r: f64 = format!("{v:.9e}").parse().expect("formatted float");
    format!("{r}")
}

fn fmt_opt(v: Option<f64>, decimals: Option<usize>) -> String {
    match (v, decimals) {
        (None, _) => String::new(),
        (Some(x), None) => fmt_sig(x),
        (Some(x), Some(k)) => format!("{x:.k$}"),
    }
}

impl MetricsRow {
    pub fn record(&self, paper_format: bool) -> Vec<String> {
        let (one, rate) = if paper_format { (Some(1), Some(3)) } else { (None, None) };
        vec![
            self.scenario.name().into(),
            self.n.to_string(),
            fmt_sig(self.t),
            fmt_sig(self.rho),
            self.method.clone(),
            fmt_opt(self.rb_pct, one),
            fmt_opt(self.mse_x100, one),
            fmt_opt(self.cp_pct, one),
            fmt_opt(self.al_x100, one),
            fmt_opt(self.rejection_rate, rate),
            self.failures.to_string(),
        ]
    }
}

fn csv_err(e: impl fmt::Display) -> PelError {
    PelError::Io { path: "<output>".into(), reason: e.to_string() }
}

pub fn write_metrics_csv<W: Write>(rows: &[MetricsRow], out: W, paper_format: bool) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRICS_HEADER).map_err(csv_err)?;
    for r in rows {
        w.write_record(r.record(paper_format)).map_err(csv_err)?;
    }
    w.flush().map_err(csv_err)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub config: ScenarioConfig,
    pub methods: Vec<SimMethod>,
    pub params: DgpParams,
    pub theta_true: f64,
    pub rows: Vec<MetricsRow>,
    pub failures: Vec<ReplicateFailure>,
    pub replicates_run: usize,
}

fn aggregate(
    cfg: &ScenarioConfig,
    methods: &[SimMethod],
    run: &ReplicateRun,
    theta0: f64,
    power: bool,
) -> Vec<MetricsRow> {
    methods
        .iter()
        .enumerate()
        .map(|(k, m)| {
            let mut row = MetricsRow {
                scenario: cfg.scenario,
                n: cfg.n,
                t: cfg.t,
                rho: cfg.rho,
                method: m.name(),
                rb_pct: None,
                mse_x100: None,
                cp_pct: None,
                al_x100: None,
                rejection_rate: None,
                failures: run.failures.len(),
            };
            match m {
                SimMethod::Point(_) => {
                    let est: Vec<f64> = run
                        .outcomes
                        .iter()
                        .map(|o| match o[k] {
                            Outcome::Point(v) => v,
                            Outcome::Interval { .. } => unreachable!("point slot"),
                        })
                        .collect();
                    let (rb, mse) = point_metrics(&est, theta0);
                    row.rb_pct = rb;
                    row.mse_x100 = Some(100.0 * mse);
                }
                SimMethod::Interval(_) => {
                    let iv: Vec<(f64, f64)> = run
                        .outcomes
                        .iter()
                        .map(|o| match o[k] {
                            Outcome::Interval { lo, hi } => (lo, hi),
                            Outcome::Point(_) => unreachable!("interval slot"),
                        })
                        .collect();
                    let (cp, al, rej) = interval_metrics(&iv, theta0);
                    if power {
                        row.rejection_rate = Some(rej);
                    } else {
                        row.cp_pct = Some(cp);
                        row.al_x100 = Some(100.0 * al);
                    }
                }
            }
            row
        })
        .collect()
}

pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioResult> {
    cfg.validate()?;
    let params = calibrate_cached(cfg.t, cfg.rho, cfg.calibration_seed)?;
    run_scenario_with(cfg, &params)
}

/// As [`run_scenario`] with explicit design parameters.
pub fn run_scenario_with(cfg: &ScenarioConfig, params: &DgpParams) -> Result<ScenarioResult> {
    cfg.validate()?;
    let methods = cfg.scenario_methods();
    let run = run_replicates(cfg, params, &methods)?;
    let theta_true = params.true_theta();
    let rows = aggregate(cfg, &methods, &run, theta_true, false);
    Ok(ScenarioResult {
        config: cfg.clone(),
        methods,
        params: *params,
        theta_true,
        rows,
        failures: run.failures,
        replicates_run: run.replicates_run,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerRow {
    pub theta0: f64,
    pub scenario: Scenario,
    pub n: usize,
    pub t: f64,
    pub rho: f64,
    pub method: String,
    pub rejection_rate: f64,
    pub failures: usize,
}

pub const POWER_HEADER: [&str; 8] = ["theta0", "scenario", "n", "t", "rho", "method", "rejection_rate", "failures"];

pub fn write_power_csv<W: Write>(rows: &[PowerRow], out: W, paper_format: bool) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(POWER_HEADER).map_err(csv_err)?;
    for r in rows {
        let rate = if paper_format { format!("{:.3}", r.rejection_rate) } else { fmt_sig(r.rejection_rate) };
        w.write_record([
            fmt_sig(r.theta0),
            r.scenario.name().into(),
            r.n.to_string(),
            fmt_sig(r.t),
            fmt_sig(r.rho),
            r.method.clone(),
            rate,
            r.failures.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(csv_err)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PowerResult {
    pub config: ScenarioConfig,
    pub methods: Vec<SimMethod>,
    pub params: DgpParams,
    pub grid: Vec<f64>,
    pub rows: Vec<PowerRow>,
    pub failures: Vec<(f64, Vec<ReplicateFailure>)>,
}

/// Rejection rates of `H0: theta = 0` over the effect grid, with common
/// replicate seeds across grid points.
pub fn run_power(cfg: &ScenarioConfig) -> Result<PowerResult> {
    cfg.validate()?;
    let params = calibrate_cached(cfg.t, cfg.rho, cfg.calibration_seed)?;
    run_power_with(cfg, &params)
}

pub fn run_power_with(cfg: &ScenarioConfig, params: &DgpParams) -> Result<PowerResult> {
    cfg.validate()?;
    let methods = cfg.power_methods();
    if let Some(m) = methods.iter().find(|m| matches!(m, SimMethod::Point(_))) {
        return Err(PelError::Usage(format!("power curves need interval methods; got '{}'", m.name())));
    }
    let grid = cfg.power_grid();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for &theta in &grid {
        let p = params.with_theta(theta);
        let run = run_replicates(cfg, &p, &methods)?;
        for m in aggregate(cfg, &methods, &run, theta, true) {
            rows.push(PowerRow {
                theta0: theta,
                scenario: m.scenario,
                n: m.n,
                t: m.t,
                rho: m.rho,
                method: m.method,
                rejection_rate: m.rejection_rate.expect("power row"),
                failures: m.failures,
            });
        }
        failures.push((theta, run.failures));
    }
    Ok(PowerResult { config: cfg.clone(), methods, params: *params, grid, rows, failures })
}

/// `(-2 r_basic(theta0) / c_hat, -2 r_mc(theta0) / delta_hat)`; infinite when
/// `theta0` is not attainable.
pub fn ratio_statistics(d: &Dataset, spec: &ModelSpec, theta0: f64) -> Result<(f64, f64)> {
    let fits = ModelFits::fit(d, spec)?;
    let basic = BasicProblem::new(d, &fits.ps.tau_hat)?;
    let var = sandwich_variance(d, &fits, Estimator::Ipw2, &basic.point())?;
    let c = basic.scaling(var)?;
    let s_basic = -2.0 * basic.ratio(theta0)? / c;
    let prob = CalibratedProblem::new(d, &fits)?;
    let mcp = prob.solve_mcp()?;
    let asy = asymptotics_mc(d, &fits, &prob, &mcp)?;
    let s_mc = -2.0 * prob.ratio(theta0, &mcp)? / asy.delta_hat;
    Ok((s_basic, s_mc))
}

/// Share of replicates whose ratio statistics exceed the chi-square cut-off.
pub fn wilks_rejection(cfg: &ScenarioConfig, params: &DgpParams) -> Result<(f64, f64, usize)> {
    cfg.validate()?;
    let spec = cfg.scenario.model_spec();
    let theta0 = params.true_theta();
    let cut = chi2_1_quantile(cfg.alpha);
    let stats: Vec<Result<(f64, f64)>> = (0..cfg.n_sim)
        .into_par_iter()
        .map(|s| {
            let seed = derive_seed(SeedSpec { master: cfg.master_seed, stream: s as u64 });
            ratio_statistics(&gen_sample(cfg.n, params, seed)?.data, &spec, theta0)
        })
        .collect();
    let ok: Vec<(f64, f64)> = stats.iter().filter_map(|r| r.as_ref().ok().copied()).collect();
    let failed = stats.len() - ok.len();
    if failed as f64 > MAX_FAILURE_FRACTION * cfg.n_sim as f64 {
        return Err(PelError::TooManyFailures { failed, total: cfg.n_sim });
    }
    let k = ok.len() as f64;
    let rb = ok.iter().filter(|s| s.0 > cut).count() as f64 / k;
    let rm = ok.iter().filter(|s| s.1 > cut).count() as f64 / k;
    Ok((rb, rm, failed))
}
