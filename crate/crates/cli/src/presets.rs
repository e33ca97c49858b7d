use std::path::{Path, PathBuf};

use pelcausal::simulation::{Scenario, ScenarioConfig, SimMethod};
use pelcausal::PelError;

const NS: [usize; 3] = [100, 200, 400];
const LEVELS: [f64; 3] = [0.3, 0.5, 0.7];
/// Cells run without `--full`.
const DESK_TAG: &str = "_n400_t05_";
pub const TABLE2_PRESET: &str = "table2_tt_n400_rho05.json";

fn tag(v: f64) -> String {
    format!("{:02}", (v * 10.0).round() as u32)
}

pub fn file_name(s: Scenario, n: usize, t: f64, rho: f64) -> String {
    format!("{}_n{n}_t{}_rho{}.json", s.name().to_ascii_lowercase(), tag(t), tag(rho))
}

pub fn grid() -> Vec<(String, ScenarioConfig)> {
    let mut out = Vec::new();
    for (k, (s, n, t, rho)) in Scenario::ALL
        .iter()
        .flat_map(|&s| NS.iter().flat_map(move |&n| LEVELS.iter().flat_map(move |&t| LEVELS.iter().map(move |&r| (s, n, t, r)))))
        .enumerate()
    {
        let mut cfg = ScenarioConfig::new(n, 1000, t, rho, s).with_methods(&SimMethod::table_set());
        cfg.master_seed = k as u64 + 1;
        out.push((file_name(s, n, t, rho), cfg));
    }
    out
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> PelError {
    PelError::Io { path: path.display().to_string(), reason: e.to_string() }
}

pub fn write_all(dir: &Path) -> pelcausal::Result<usize> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let cells = grid();
    let table2 = cells
        .iter()
        .find(|(name, _)| name == &file_name(Scenario::TT, 400, 0.5, 0.5))
        .map(|(_, c)| c.clone())
        .expect("grid holds the TT n=400 cell");
    for (name, cfg) in cells.iter().chain(std::iter::once(&(TABLE2_PRESET.to_string(), table2))) {
        let path = dir.join(name);
        let text = serde_json::to_string_pretty(cfg).expect("config json");
        std::fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))?;
    }
    Ok(cells.len() + 1)
}

/// Grid presets in `dir`, sorted; the desk subset unless `full`.
pub fn select(dir: &Path, full: bool) -> pelcausal::Result<Vec<PathBuf>> {
    let rd = std::fs::read_dir(dir).map_err(|e| io_err(dir, e))?;
    let mut paths: Vec<PathBuf> = rd
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().and_then(|s| s.to_str()).unwrap_or("");
            name.ends_with(".json") && name != TABLE2_PRESET && (full || name.contains(DESK_TAG))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(PelError::Usage(format!("no presets found in {}", dir.display())));
    }
    Ok(paths)
}
