use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pelcausal"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn sample(dir: &Path, n: usize, seed: u64) -> PathBuf {
    let p = dir.join(format!("d{n}_{seed}.csv"));
    let o = run(&["generate", "--n", &n.to_string(), "--seed", &seed.to_string(), "--out", p.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    p
}

fn estimate_json(data: &Path, extra: &[&str]) -> Value {
    let mut args = vec!["estimate", "--data", data.to_str().unwrap()];
    args.extend_from_slice(extra);
    let o = run(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    serde_json::from_slice(&o.stdout).unwrap()
}

fn preset_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../presets")
}

#[test]
fn ipw2_and_pel_agree() {
    let dir = tempfile::tempdir().unwrap();
    let d = sample(dir.path(), 300, 1);
    let a = estimate_json(&d, &["--method", "ipw2"]);
    let b = estimate_json(&d, &["--method", "pel"]);
    assert_eq!(a["report"]["theta"], b["report"]["theta"]);
}

#[test]
fn wald_interval_is_normal_arithmetic() {
    let dir = tempfile::tempdir().unwrap();
    let d = sample(dir.path(), 300, 2);
    let v = estimate_json(&d, &["--method", "aipw2", "--ci", "wald", "--alpha", "0.05"]);
    let r = &v["report"];
    let (th, se) = (r["theta"].as_f64().unwrap(), r["se"].as_f64().unwrap());
    assert!((r["ci"]["lo"].as_f64().unwrap() - (th - 1.959964 * se)).abs() < 1e-6);
    assert!((r["ci"]["hi"].as_f64().unwrap() - (th + 1.959964 * se)).abs() < 1e-6);
    assert_eq!(v["config"]["seed"], 0);
    assert_eq!(v["config"]["n"], 300);
}

#[test]
fn missing_file_is_a_usage_failure() {
    let o = run(&["estimate", "--data", "/definitely/not/here.csv"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("cannot open"));
}

#[test]
fn incompatible_pairs_and_unknown_names_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = sample(dir.path(), 100, 3);
    let p = d.to_str().unwrap();
    for args in [
        vec!["estimate", "--data", p, "--method", "aipw2", "--ci", "pelr"],
        vec!["estimate", "--data", p, "--method", "mcp", "--ci", "wald"],
        vec!["estimate", "--data", p, "--method", "nope"],
        vec!["estimate", "--data", p, "--ps-columns", "x9"],
        vec!["estimate", "--data", p, "--no-such-flag"],
    ] {
        let o = run(&args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", stderr(&o));
    }
}

#[test]
fn table_and_json_carry_the_same_digits() {
    let dir = tempfile::tempdir().unwrap();
    let d = sample(dir.path(), 250, 4);
    let v = estimate_json(&d, &["--method", "mcp", "--ci", "mcp-chi2"]);
    let o = run(&["estimate", "--data", d.to_str().unwrap(), "--method", "mcp", "--ci", "mcp-chi2", "--format", "table"]);
    let table = String::from_utf8(o.stdout).unwrap();
    for key in ["theta", "ci_lo", "ci_hi"] {
        let line = table.lines().find(|l| l.split_whitespace().next() == Some(key)).unwrap();
        let shown: f64 = line.split_whitespace().nth(1).unwrap().parse().unwrap();
        let want = match key {
            "theta" => &v["report"]["theta"],
            "ci_lo" => &v["report"]["ci"]["lo"],
            _ => &v["report"]["ci"]["hi"],
        };
        assert_eq!(shown, want.as_f64().unwrap(), "{key}");
    }
}

#[test]
fn covariate_overrides_and_fit_dump() {
    let dir = tempfile::tempdir().unwrap();
    let d = sample(dir.path(), 200, 5);
    let fits = dir.path().join("fits.json");
    let v = estimate_json(
        &d,
        &["--method", "aipw2", "--ps-columns", "x1,x2", "--or-columns", "none", "--dump-fits", fits.to_str().unwrap()],
    );
    assert!(v["report"]["theta"].is_number());
    let f: Value = serde_json::from_str(&std::fs::read_to_string(fits).unwrap()).unwrap();
    assert_eq!(f["propensity"]["coefficients"].as_array().unwrap().len(), 3);
    assert_eq!(f["outcome_treated"]["coefficients"].as_array().unwrap().len(), 1);
}

fn simulate(cfg: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    run(&args)
}

#[test]
fn table2_preset_fills_every_method_row_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = preset_dir().join("table2_tt_n400_rho05.json");
    let out1 = dir.path().join("a.csv");
    let out2 = dir.path().join("b.csv");
    let fast = ["--n-sim", "2", "--bootstrap-b", "20"];
    let o = simulate(&cfg, &out1, &fast);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut o = bin();
    o.args(["--threads", "1", "simulate", "--config", cfg.to_str().unwrap(), "--out", out2.to_str().unwrap()]).args(fast);
    assert!(o.output().unwrap().status.success());
    let a = std::fs::read(&out1).unwrap();
    assert_eq!(a, std::fs::read(&out2).unwrap());

    let text = String::from_utf8(a).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "scenario,n,t,rho,method,rb_pct,mse_x100,cp_pct,al_x100,rejection_rate,failures");
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 10);
    for r in &rows {
        if r[4].starts_with("I_") {
            assert!(!r[7].is_empty() && !r[8].is_empty() && r[5].is_empty(), "{r:?}");
        } else {
            assert!(!r[5].is_empty() && !r[6].is_empty() && r[7].is_empty(), "{r:?}");
        }
    }
    let meta: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("a.csv.meta.json")).unwrap()).unwrap();
    let cell = &meta["cells"][0];
    assert_eq!(cell["config"]["n_sim"], 2);
    assert!(cell["dgp"]["alpha0"].is_number() && cell["dgp"]["a1"].as_f64().unwrap() > 0.0);
}

#[test]
fn bad_config_field_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"n": 100, "n_sim": 2, "t": 0.5, "rho": 0.5, "scenario": "TT", "sample_size": 3}"#).unwrap();
    let o = simulate(&cfg, &dir.path().join("o.csv"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("sample_size"));
}

#[test]
fn power_grid_and_method_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("p.json");
    std::fs::write(&cfg, r#"{"n": 200, "n_sim": 5, "t": 0.5, "rho": 0.5, "scenario": "TT", "methods": ["I_AIPW2", "I_MCP"]}"#).unwrap();
    let out = dir.path().join("p.csv");
    let o = run(&["power", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--grid", "0"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "theta0,scenario,n,t,rho,method,rejection_rate,failures");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("0,TT,200,0.5,0.5,I_AIPW2,"));

    std::fs::write(&cfg, r#"{"n": 200, "n_sim": 5, "t": 0.5, "rho": 0.5, "scenario": "TT", "methods": ["I_FOO"]}"#).unwrap();
    let o = run(&["power", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("I_FOO"));
}

#[test]
fn shipped_presets_cover_the_grid() {
    let names: Vec<String> = std::fs::read_dir(preset_dir())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".json"))
        .collect();
    assert_eq!(names.len(), 82);
    assert!(names.iter().any(|n| n == "table2_tt_n400_rho05.json"));
}
