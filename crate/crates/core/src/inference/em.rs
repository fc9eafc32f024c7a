//! One EM iteration.

use serde::{Deserialize, Serialize};

use super::smoothing::forward_backward;
use super::transition::{maximize, transition_objective, TransitionCounts, EM_NEWTON_ITERS};
use crate::emissions::EmissionModel;
use crate::error::Result;
use crate::model::{PeriodicLogitTransition, SeasonalHMM};

/// How the initial distribution is handled by EM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialMode {
    /// `π` is a free parameter updated to the first smoothing marginal.
    #[default]
    Free,
    /// `π` is tied to the stationary law of `Q(1)⋯Q(T)`.
    Stationary,
}

/// Result of [`em_iterate`].
#[derive(Debug, Clone)]
pub struct EmStep {
    pub model: SeasonalHMM,
    /// Log-likelihood of the model passed in (before the update).
    pub loglik: f64,
    /// Emission states whose responsibilities were numerically zero.
    pub flagged_states: Vec<usize>,
    /// True when the transition block could not be improved.
    pub transition_stalled: bool,
}

/// One EM iteration: E-step by forward-backward, then the initial law, the
/// transition coefficients and the emission parameters are updated in turn.
pub fn em_iterate(model: &SeasonalHMM, obs: &[f64], mode: InitialMode) -> Result<EmStep> {
    let smooth = forward_backward(model, obs)?;
    let dims = model.dims;
    let k = dims.states;
    let gamma1 = &smooth.marginal[..k];
    let counts = TransitionCounts::from_smoothing(dims, &smooth);

    let (transition, pi, stalled) = match mode {
        InitialMode::Free => {
            let total: f64 = gamma1.iter().sum();
            let pi: Vec<f64> = gamma1.iter().map(|g| g / total).collect();
            let old = transition_objective(&model.transition, &counts);
            let tr = maximize(&model.transition, &counts, EM_NEWTON_ITERS);
            let stalled = transition_objective(&tr, &counts) <= old;
            (tr, pi, stalled)
        }
        InitialMode::Stationary => stationary_update(model, &counts, gamma1)?,
    };

    let emission = model.emissions.weighted_mstep(obs, &smooth.marginal)?;
    let updated = SeasonalHMM {
        dims,
        transition,
        emissions: emission.params,
        pi,
    };
    Ok(EmStep {
        model: updated,
        loglik: smooth.loglik,
        flagged_states: emission.flagged_states,
        transition_stalled: stalled,
    })
}

/// With `π = π(β)`, the transition block also carries `Σ_k γ_1(k) log π_k(β)`.
/// The unconstrained maximizer of the pairwise part gives a search direction;
/// the step is shortened until the full block objective improves.
fn stationary_update(
    model: &SeasonalHMM,
    counts: &TransitionCounts,
    gamma1: &[f64],
) -> Result<(PeriodicLogitTransition, Vec<f64>, bool)> {
    let objective = |tr: &PeriodicLogitTransition| -> Option<(f64, Vec<f64>)> {
        let pi: Vec<f64> = tr.stationary_distribution().ok()?.iter().copied().collect();
        let init: f64 = gamma1
            .iter()
            .zip(&pi)
            .filter(|(g, _)| **g > 0.0)
            .map(|(g, p)| g * p.ln())
            .sum();
        let v = transition_objective(tr, counts) + init;
        v.is_finite().then_some((v, pi))
    };
    let current = &model.transition;
    let (base, base_pi) = match objective(current) {
        Some(v) => v,
        None => {
            let pi = current.stationary_distribution()?.iter().copied().collect();
            return Ok((current.clone(), pi, true));
        }
    };
    let target = maximize(current, counts, EM_NEWTON_ITERS);
    let mut step = 1.0;
    for _ in 0..40 {
        let beta: Vec<f64> = current
            .beta()
            .iter()
            .zip(target.beta())
            .map(|(a, b)| a + step * (b - a))
            .collect();
        let trial = PeriodicLogitTransition::new(current.dims(), beta)?;
        if let Some((v, pi)) = objective(&trial) {
            if v > base {
                return Ok((trial, pi, false));
            }
        }
        step *= 0.5;
    }
    Ok((current.clone(), base_pi, true))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::log_likelihood;
    use crate::inference::test_models::random_model;
    use crate::rng::stream_rng;
    use crate::sim::simulate;

    #[test]
    fn likelihood_never_decreases_over_iterations() {
        let mut rng = stream_rng(11, 0);
        for mode in [InitialMode::Free, InitialMode::Stationary] {
            let truth = random_model(2, 6, &mut rng);
            let obs = simulate(&truth, 600, 3).values;
            let mut model = random_model(2, 6, &mut rng);
            if mode == InitialMode::Stationary {
                model = model.with_stationary_pi().unwrap();
            }
            let mut prev = f64::NEG_INFINITY;
            for _ in 0..15 {
                let step = em_iterate(&model, &obs, mode).unwrap();
                assert!(step.loglik >= prev - 1e-9, "{} < {prev}", step.loglik);
                prev = step.loglik;
                model = step.model;
            }
            assert!(log_likelihood(&model, &obs).unwrap() >= prev - 1e-9);
        }
    }

    #[test]
    fn stationary_mode_keeps_pi_stationary() {
        let mut rng = stream_rng(12, 0);
        let truth = random_model(3, 4, &mut rng);
        let obs = simulate(&truth, 300, 5).values;
        let model = random_model(3, 4, &mut rng).with_stationary_pi().unwrap();
        let step = em_iterate(&model, &obs, InitialMode::Stationary).unwrap();
        let pi = step.model.transition.stationary_distribution().unwrap();
        for (a, b) in pi.iter().zip(&step.model.pi) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
