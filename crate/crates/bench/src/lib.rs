//! Shared inputs for the benchmarks.

use shmm::{presets, simulate, SeasonalHMM};

/// The two-state yearly Gaussian model and `n` observations drawn from it.
pub fn study_fixture(n: usize) -> (SeasonalHMM, Vec<f64>) {
    let model = presets::simulation_study();
    let obs = simulate(&model, n, 1).values;
    (model, obs)
}
