use pelcausal::simulation::fmt_sig;
use pelcausal::EstimateReport;
use serde_json::{json, Value};

/// Rounds to the printed precision so JSON and table agree digit for digit.
fn num(v: f64) -> Value {
    fmt_sig(v).parse::<f64>().map(Value::from).unwrap_or(Value::Null)
}

pub fn report_json(r: &EstimateReport) -> Value {
    json!({
        "method": r.method.name(),
        "mu1": num(r.mu1),
        "mu0": num(r.mu0),
        "theta": num(r.theta),
        "variance": r.variance.map(num),
        "se": r.variance.map(|v| num(v.sqrt())),
        "ci": r.ci.map(|c| json!({ "lo": num(c.lo), "hi": num(c.hi), "level": num(c.level) })),
        "diagnostics": r.diagnostics,
    })
}

pub fn report_table(r: &EstimateReport) -> String {
    let mut rows: Vec<(&str, String)> = vec![
        ("method", r.method.name().to_string()),
        ("mu1", fmt_sig(r.mu1)),
        ("mu0", fmt_sig(r.mu0)),
        ("theta", fmt_sig(r.theta)),
    ];
    if let Some(v) = r.variance {
        rows.push(("variance", fmt_sig(v)));
        rows.push(("se", fmt_sig(v.sqrt())));
    }
    if let Some(c) = r.ci {
        rows.push(("ci_level", fmt_sig(c.level)));
        rows.push(("ci_lo", fmt_sig(c.lo)));
        rows.push(("ci_hi", fmt_sig(c.hi)));
    }
    let mut out: Vec<String> = rows.iter().map(|(k, v)| format!("{k:<10} {v}")).collect();
    for d in &r.diagnostics {
        out.push(format!("{:<10} {d}", "note"));
    }
    out.join("\n")
}
