//! Seeded simulation of hidden and observed trajectories.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::model_io::fingerprint;
use crate::emissions::{draw_index, EmissionModel};
use crate::model::SeasonalHMM;
use crate::rng::{stream_rng, streams};

/// A simulated path. States are 0-based here and written 1-based to files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Option<Vec<usize>>,
    pub values: Vec<f64>,
    pub seed: u64,
    pub stream: u64,
    /// SHA-256 of the serialized model.
    pub fingerprint: String,
}

/// Simulate `n` steps on the simulation stream of `seed`.
pub fn simulate(model: &SeasonalHMM, n: usize, seed: u64) -> Trajectory {
    simulate_stream(model, n, seed, streams::SIMULATION_BASE)
}

/// Simulate on an explicit RNG stream; batch replicate `r` uses stream `r`.
pub fn simulate_stream(model: &SeasonalHMM, n: usize, seed: u64, stream: u64) -> Trajectory {
    let (states, values) = draw(model, n, seed, stream);
    Trajectory {
        states: Some(states),
        values,
        seed,
        stream,
        fingerprint: fingerprint(model),
    }
}

/// `reps` independent trajectories; replicate 0 equals [`simulate`].
pub fn simulate_batch(model: &SeasonalHMM, n: usize, reps: usize, seed: u64) -> Vec<Trajectory> {
    let fp = fingerprint(model);
    (0..reps as u64)
        .into_par_iter()
        .map(|r| {
            let (states, values) = draw(model, n, seed, streams::SIMULATION_BASE + r);
            Trajectory {
                states: Some(states),
                values,
                seed,
                stream: streams::SIMULATION_BASE + r,
                fingerprint: fp.clone(),
            }
        })
        .collect()
}

fn draw(model: &SeasonalHMM, n: usize, seed: u64, stream: u64) -> (Vec<usize>, Vec<f64>) {
    let mut rng = stream_rng(seed, stream);
    let k = model.dims.states;
    let q: Vec<Vec<f64>> = (1..=model.dims.period)
        .map(|t| model.transition.transition_entries(t))
        .collect();
    let mut states = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n);
    let mut x = 0;
    for i in 0..n {
        x = if i == 0 {
            draw_index(&model.pi, &mut rng)
        } else {
            let qi = &q[(i - 1) % model.dims.period];
            draw_index(&qi[x * k..(x + 1) * k], &mut rng)
        };
        states.push(x);
        values.push(model.emissions.sample(x, i + 1, &mut rng));
    }
    (states, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::test_models::random_model;

    #[test]
    fn same_seed_same_values() {
        let mut rng = stream_rng(41, 0);
        let m = random_model(3, 5, &mut rng);
        let a = simulate(&m, 200, 7);
        let b = simulate(&m, 200, 7);
        assert_eq!(a, b);
        let c = simulate(&m, 200, 8);
        assert_ne!(a.values, c.values);
    }

    #[test]
    fn single_state_stays_put() {
        let mut rng = stream_rng(42, 0);
        let m = random_model(1, 3, &mut rng);
        let t = simulate(&m, 50, 1);
        assert!(t.states.unwrap().iter().all(|&s| s == 0));
    }

    #[test]
    fn batch_replicate_zero_is_simulate() {
        let mut rng = stream_rng(43, 0);
        let m = random_model(2, 4, &mut rng);
        let batch = simulate_batch(&m, 100, 3, 5);
        assert_eq!(batch[0], simulate(&m, 100, 5));
        assert_ne!(batch[1].values, batch[2].values);
    }
}
