//! Shared fixtures for the benchmarks.

use pelcausal::simulation::{calibrate_cached, gen_sample, DEFAULT_CALIBRATION_SEED};
use pelcausal::Dataset;

/// A draw from the calibrated design with `t = 0.5`, `rho = 0.5`.
pub fn fixture(n: usize, seed: u64) -> Dataset {
    let p = calibrate_cached(0.5, 0.5, DEFAULT_CALIBRATION_SEED).expect("calibration");
    gen_sample(n, &p, seed).expect("sample").data
}
