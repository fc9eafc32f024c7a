//! Moment-based recovery of a seasonal HMM up to per-time relabelling.
//!
//! With `O_t(a, k) = E[φ_a(Y_t) | X_t = k]`, the moments of three consecutive
//! observations factor through `O_{t-1}, O_t, O_{t+1}`, the time marginals and
//! `Q(t-1), Q(t)`. A random linear combination of the slices of the third-order
//! moment is diagonalized to read off `O_t`, from which `π*(t)` and `Q*(t)`
//! follow by linear algebra.

mod features;
mod moments;
mod recover;

pub use features::{feature_matrix, FeatureMap};
pub use moments::{empirical_moments, phase_windows, population_moments, MomentSet};
pub use recover::{
    recover, recover_phase, recover_transition, PhaseDiagnostics, PhaseRecovery, SpectralRecovery,
};

use nalgebra::DMatrix;
use rand::Rng;
use serde::Serialize;

use crate::error::Result;
use crate::model::SeasonalHMM;
use crate::numeric::permutations;

/// Column permutation of `recovered` closest to `truth` in Frobenius norm:
/// `perm[k]` is the recovered column matched to true column `k`.
pub fn align_columns(recovered: &DMatrix<f64>, truth: &DMatrix<f64>) -> Vec<usize> {
    let k = truth.ncols();
    let mut best = (f64::INFINITY, (0..k).collect::<Vec<_>>());
    for perm in permutations(k) {
        let d: f64 = (0..k)
            .map(|c| (recovered.column(perm[c]) - truth.column(c)).norm_squared())
            .sum();
        if d < best.0 {
            best = (d, perm);
        }
    }
    best.1
}

/// Largest absolute errors of a recovery at one phase, after alignment.
#[derive(Debug, Clone, Serialize)]
pub struct PhaseError {
    pub t: usize,
    pub o_error: f64,
    pub pi_error: f64,
    pub q_error: f64,
}

/// Compare a recovery with the generating model, aligning each phase separately.
pub fn recovery_error(
    rec: &SpectralRecovery,
    model: &SeasonalHMM,
    features: &FeatureMap,
) -> Result<Vec<PhaseError>> {
    let period = model.dims.period;
    let marginals = model.phase_marginals()?;
    let truth_o = (1..=period)
        .map(|t| feature_matrix(&model.emissions, t, features))
        .collect::<Result<Vec<_>>>()?;
    let perms: Vec<Vec<usize>> = (0..period)
        .map(|i| align_columns(&rec.o[i], &truth_o[i]))
        .collect();
    let k = model.dims.states;
    let mut out = Vec::with_capacity(period);
    for i in 0..period {
        let p = &perms[i];
        let pn = &perms[(i + 1) % period];
        let q_true = model.transition.transition_matrix(i + 1);
        let mut o_err: f64 = 0.0;
        for c in 0..k {
            o_err = o_err.max((rec.o[i].column(p[c]) - truth_o[i].column(c)).amax());
        }
        let mut pi_err: f64 = 0.0;
        let mut q_err: f64 = 0.0;
        for a in 0..k {
            pi_err = pi_err.max((rec.pi[i][p[a]] - marginals[i][a]).abs());
            for b in 0..k {
                q_err = q_err.max((rec.q[i][(p[a], pn[b])] - q_true[(a, b)]).abs());
            }
        }
        out.push(PhaseError {
            t: i + 1,
            o_error: o_err,
            pi_error: pi_err,
            q_error: q_err,
        });
    }
    Ok(out)
}

/// Population moments for every phase, recovery, and comparison with the model.
pub fn population_round_trip<R: Rng + ?Sized>(
    model: &SeasonalHMM,
    features: &FeatureMap,
    rng: &mut R,
) -> Result<(SpectralRecovery, Vec<PhaseError>)> {
    let sets = (1..=model.dims.period)
        .map(|t| population_moments(model, t, features))
        .collect::<Result<Vec<_>>>()?;
    let rec = recover(&sets, model.dims.states, rng)?;
    let err = recovery_error(&rec, model, features)?;
    Ok((rec, err))
}

/// Empirical moments for every phase from one long observation sequence.
pub fn empirical_cycle(
    values: &[f64],
    period: usize,
    features: &FeatureMap,
    states: usize,
) -> Result<Vec<MomentSet>> {
    (1..=period)
        .map(|t| empirical_moments(&phase_windows(values, period, t), t, features, states))
        .collect()
}

/// True when every `O_t` has smallest singular value above `sigma_min` and every
/// `|det Q(t)|` exceeds `det_min`.
pub fn passes_screen(
    model: &SeasonalHMM,
    features: &FeatureMap,
    sigma_min: f64,
    det_min: f64,
) -> Result<bool> {
    for t in 1..=model.dims.period {
        if model.transition.transition_matrix(t).determinant().abs() <= det_min {
            return Ok(false);
        }
        if model.emissions.linear_independence_check(t, features)? <= sigma_min {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Draw random Gaussian models until one passes [`passes_screen`] under its own
/// default histogram features (`2K` bins); returns the model and the features.
pub fn random_screened_model<R: Rng + ?Sized>(
    k: usize,
    period: usize,
    sigma_min: f64,
    det_min: f64,
    rng: &mut R,
) -> Result<(SeasonalHMM, FeatureMap)> {
    const MAX_DRAWS: usize = 10_000;
    for _ in 0..MAX_DRAWS {
        let model = crate::presets::random_gaussian(k, period, rng)?;
        let features = FeatureMap::histogram_from_model(&model, 2 * k)?;
        if features.len() >= k && passes_screen(&model, &features, sigma_min, det_min)? {
            return Ok((model, features));
        }
    }
    Err(crate::error::ShmmError::Numerical(format!(
        "no random model passed the screen in {MAX_DRAWS} draws"
    )))
}
