use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pelcausal::data::{load_csv, save_csv};
use pelcausal::simulation::{
    calibrate_cached, gen_sample, run_power_with, run_scenario_with, write_metrics_csv, write_power_csv, MetricsRow,
};
use pelcausal::{
    run_estimate, ColumnSet, InferenceOptions, IntervalKind, Method, ModelFits, ModelSpec, PelError, ScenarioConfig,
};
use serde_json::json;

mod presets;
mod render;

#[derive(Parser, Debug)]
#[command(name = "pelcausal", version, about = "Pseudo empirical likelihood inference for the average treatment effect")]
struct Cli {
    /// Worker threads for replicate and bootstrap loops (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate the treatment effect on a `t,y,x1,...` CSV file.
    Estimate(EstimateArgs),
    /// Run simulation cells and write their metrics.
    Simulate(SimulateArgs),
    /// Rejection-rate curves over a grid of true effects.
    Power(PowerArgs),
    /// Draw one sample from the calibrated simulation design.
    Generate(GenerateArgs),
    /// Write the full grid of simulation presets.
    Presets(PresetArgs),
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum Format {
    Json,
    Table,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    /// Input CSV with header `t,y,x1,...,xd`.
    #[arg(long)]
    data: PathBuf,
    /// ipw1, ipw2, aipw1, aipw2, pel or mcp.
    #[arg(long, default_value = "mcp")]
    method: String,
    /// none, wald, pelr, mcp-chi2, mcp-boot or boot-wald.
    #[arg(long, default_value = "none")]
    ci: String,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long = "bootstrap-b", default_value_t = pelcausal::bootstrap::DEFAULT_B)]
    bootstrap_b: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Propensity covariates, e.g. `x1,x2`; `none` for intercept only.
    #[arg(long)]
    ps_columns: Option<String>,
    /// Outcome regression covariates, same syntax.
    #[arg(long)]
    or_columns: Option<String>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Also write the JSON document here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write fitted model coefficients as JSON.
    #[arg(long)]
    dump_fits: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Scenario config JSON; repeatable.
    #[arg(long, required_unless_present = "preset_dir")]
    config: Vec<PathBuf>,
    /// Run presets from this directory (desk subset unless `--full`).
    #[arg(long, conflicts_with = "config")]
    preset_dir: Option<PathBuf>,
    /// With `--preset-dir`, run every preset.
    #[arg(long, requires = "preset_dir")]
    full: bool,
    #[arg(long)]
    out: PathBuf,
    /// Metadata sidecar path (default: `<out>.meta.json`).
    #[arg(long)]
    metadata: Option<PathBuf>,
    /// Round as the published tables do.
    #[arg(long)]
    paper_format: bool,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args, Debug)]
struct PowerArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    metadata: Option<PathBuf>,
    /// Comma-separated true effects; overrides the config grid.
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<f64>>,
    #[arg(long)]
    paper_format: bool,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args, Debug)]
struct Overrides {
    #[arg(long)]
    n_sim: Option<usize>,
    #[arg(long = "bootstrap-b")]
    bootstrap_b: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated method names, replacing the config list.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0.5)]
    t: f64,
    #[arg(long, default_value_t = 0.5)]
    rho: f64,
    /// True effect under the shifted-intercept design.
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PresetArgs {
    #[arg(long)]
    dir: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(k) = cli.threads {
        if k == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let res = match cli.command {
        Command::Estimate(a) => cmd_estimate(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Power(a) => cmd_power(a),
        Command::Generate(a) => cmd_generate(a),
        Command::Presets(a) => presets::write_all(&a.dir).map(|k| eprintln!("wrote {k} presets to {}", a.dir.display())),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &PelError) -> u8 {
    match e {
        PelError::Io { .. } | PelError::Parse { .. } | PelError::InvalidData(_) | PelError::Usage(_) => 2,
        _ => 1,
    }
}

fn usage(msg: impl Into<String>) -> PelError {
    PelError::Usage(msg.into())
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> PelError {
    PelError::Io { path: path.display().to_string(), reason: e.to_string() }
}

fn create(path: &Path) -> pelcausal::Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| io_err(path, e))
}

fn write_json(path: &Path, value: &serde_json::Value) -> pelcausal::Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| io_err(path, e))?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| io_err(path, e))
}

fn parse_columns(spec: Option<&str>, d: usize) -> pelcausal::Result<ColumnSet> {
    let Some(s) = spec else { return Ok(ColumnSet::All) };
    let s = s.trim();
    if s.eq_ignore_ascii_case("none") {
        return Ok(ColumnSet::Subset(vec![]));
    }
    let mut idx = Vec::new();
    for name in s.split(',').map(str::trim) {
        let k = name
            .strip_prefix('x')
            .and_then(|v| v.parse::<usize>().ok())
            .filter(|&k| k >= 1 && k <= d)
            .ok_or_else(|| usage(format!("unknown covariate '{name}' (expected x1..x{d})")))?;
        if idx.contains(&(k - 1)) {
            return Err(usage(format!("covariate '{name}' listed twice")));
        }
        idx.push(k - 1);
    }
    Ok(ColumnSet::Subset(idx))
}

fn cmd_estimate(a: EstimateArgs) -> pelcausal::Result<()> {
    let method = Method::parse(&a.method).ok_or_else(|| usage(format!("unknown method '{}'", a.method)))?;
    let ci = IntervalKind::parse(&a.ci).ok_or_else(|| usage(format!("unknown interval '{}'", a.ci)))?;
    if !ci.compatible(method) {
        return Err(usage(format!("interval '{}' is not available for method '{}'", ci.name(), method.name())));
    }
    if !(a.alpha > 0.0 && a.alpha < 1.0) {
        return Err(usage(format!("alpha {} outside (0, 1)", a.alpha)));
    }
    let d = load_csv(&a.data)?;
    let spec = ModelSpec {
        ps_columns: parse_columns(a.ps_columns.as_deref(), d.d())?,
        or_columns: parse_columns(a.or_columns.as_deref(), d.d())?,
    };
    let opts = InferenceOptions { alpha: a.alpha, bootstrap_b: a.bootstrap_b, seed: a.seed };
    if let Some(path) = &a.dump_fits {
        let fits = ModelFits::fit(&d, &spec)?;
        write_json(
            path,
            &json!({
                "propensity": { "coefficients": fits.ps.alpha, "iterations": fits.ps.iterations, "columns": fits.ps.columns },
                "outcome_treated": { "coefficients": fits.or1.beta, "mean_fitted": fits.or1.mbar, "columns": fits.or1.columns },
                "outcome_control": { "coefficients": fits.or0.beta, "mean_fitted": fits.or0.mbar, "columns": fits.or0.columns },
            }),
        )?;
    }
    let report = run_estimate(&d, &spec, method, ci, &opts)?;
    let doc = json!({
        "report": render::report_json(&report),
        "config": {
            "data": a.data.display().to_string(),
            "method": method.name(),
            "ci": ci.name(),
            "alpha": a.alpha,
            "bootstrap_b": a.bootstrap_b,
            "seed": a.seed,
            "ps_columns": spec.ps_columns,
            "or_columns": spec.or_columns,
            "n": d.n(),
            "n_treated": d.n_treated(),
            "n_control": d.n_control(),
        },
        "version": env!("CARGO_PKG_VERSION"),
    });
    if let Some(path) = &a.out {
        write_json(path, &doc)?;
    }
    let text = match a.format {
        Format::Json => serde_json::to_string_pretty(&doc).expect("json"),
        Format::Table => render::report_table(&report),
    };
    println!("{text}");
    Ok(())
}

fn read_config(path: &Path) -> pelcausal::Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    ScenarioConfig::from_json(&text).map_err(|e| match e {
        PelError::Usage(m) => usage(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn apply(cfg: &mut ScenarioConfig, o: &Overrides) -> pelcausal::Result<()> {
    if let Some(k) = o.n_sim {
        cfg.n_sim = k;
    }
    if let Some(b) = o.bootstrap_b {
        cfg.b = b;
    }
    if let Some(s) = o.seed {
        cfg.master_seed = s;
    }
    if let Some(names) = &o.methods {
        let parsed = names
            .iter()
            .map(|n| pelcausal::SimMethod::parse(n).ok_or_else(|| usage(format!("unknown method '{n}'"))))
            .collect::<pelcausal::Result<Vec<_>>>()?;
        cfg.methods = Some(parsed);
    }
    cfg.validate()
}

fn metadata_path(out: &Path, explicit: &Option<PathBuf>) -> PathBuf {
    explicit.clone().unwrap_or_else(|| {
        let mut s = out.as_os_str().to_owned();
        s.push(".meta.json");
        PathBuf::from(s)
    })
}

fn cmd_simulate(a: SimulateArgs) -> pelcausal::Result<()> {
    let paths = match &a.preset_dir {
        Some(dir) => presets::select(dir, a.full)?,
        None => a.config.clone(),
    };
    let mut cells = Vec::new();
    for p in &paths {
        let mut cfg = read_config(p)?;
        apply(&mut cfg, &a.overrides)?;
        cells.push((p.clone(), cfg));
    }
    let mut rows: Vec<MetricsRow> = Vec::new();
    let mut meta = Vec::new();
    for (path, cfg) in &cells {
        let params = calibrate_cached(cfg.t, cfg.rho, cfg.calibration_seed)?;
        let res = run_scenario_with(cfg, &params)?;
        eprintln!(
            "{}: {} replicates, {} failed",
            path.display(),
            res.replicates_run,
            res.failures.len()
        );
        rows.extend(res.rows.iter().cloned());
        meta.push(json!({
            "config_path": path.display().to_string(),
            "config": res.config,
            "methods": res.methods,
            "dgp": res.params,
            "theta_true": res.theta_true,
            "replicate_seeds": "derive_seed(master_seed, s) for s in 0..replicates_run",
            "replicates_run": res.replicates_run,
            "failures": res.failures,
        }));
    }
    let mut w = create(&a.out)?;
    write_metrics_csv(&rows, &mut w, a.paper_format)?;
    w.flush().map_err(|e| io_err(&a.out, e))?;
    write_json(
        &metadata_path(&a.out, &a.metadata),
        &json!({ "cells": meta, "paper_format": a.paper_format, "version": env!("CARGO_PKG_VERSION") }),
    )
}

fn cmd_power(a: PowerArgs) -> pelcausal::Result<()> {
    let mut cfg = read_config(&a.config)?;
    if let Some(g) = &a.grid {
        cfg.theta_grid = Some(g.clone());
    }
    apply(&mut cfg, &a.overrides)?;
    let params = calibrate_cached(cfg.t, cfg.rho, cfg.calibration_seed)?;
    let res = run_power_with(&cfg, &params)?;
    let mut w = create(&a.out)?;
    write_power_csv(&res.rows, &mut w, a.paper_format)?;
    w.flush().map_err(|e| io_err(&a.out, e))?;
    write_json(
        &metadata_path(&a.out, &a.metadata),
        &json!({
            "config": res.config,
            "methods": res.methods,
            "dgp": res.params,
            "grid": res.grid,
            "replicate_seeds": "derive_seed(master_seed, s), shared across grid points",
            "failures": res.failures,
            "version": env!("CARGO_PKG_VERSION"),
        }),
    )
}

fn cmd_generate(a: GenerateArgs) -> pelcausal::Result<()> {
    let mut params = calibrate_cached(a.t, a.rho, pelcausal::simulation::DEFAULT_CALIBRATION_SEED)?;
    params.theta_shift = a.theta;
    let s = gen_sample(a.n, &params, a.seed)?;
    save_csv(&s.data, &a.out)
}
