//! Periodic emission families.
//!
//! Each family provides per-state, per-time log-densities, a sampler, a weighted
//! M-step for EM and a description of `ν_{k,t}` as a finite mixture of atoms,
//! exponentials and normals (used for closed-form feature integrals).

mod exp_scale;
mod gaussian;
mod zero_inflated;

pub use exp_scale::ExpPeriodicScale;
pub use gaussian::GaussianPeriodicMean;
pub use zero_inflated::ZeroInflatedExp;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ShmmError};
use crate::numeric::phase_of;
use crate::spectral::FeatureMap;

/// One component of an emission law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LawComponent {
    Atom { weight: f64, at: f64 },
    Exponential { weight: f64, rate: f64 },
    Normal { weight: f64, mean: f64, sd: f64 },
}

impl LawComponent {
    pub fn weight(&self) -> f64 {
        match *self {
            LawComponent::Atom { weight, .. }
            | LawComponent::Exponential { weight, .. }
            | LawComponent::Normal { weight, .. } => weight,
        }
    }

    /// Unweighted CDF of the component at `x`.
    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            LawComponent::Atom { at, .. } => {
                if x >= at {
                    1.0
                } else {
                    0.0
                }
            }
            LawComponent::Exponential { rate, .. } => {
                if x <= 0.0 {
                    0.0
                } else {
                    -(-rate * x).exp_m1()
                }
            }
            LawComponent::Normal { mean, sd, .. } => normal_cdf((x - mean) / sd),
        }
    }

    /// Unweighted mean of the component.
    pub fn mean(&self) -> f64 {
        match *self {
            LawComponent::Atom { at, .. } => at,
            LawComponent::Exponential { rate, .. } => 1.0 / rate,
            LawComponent::Normal { mean, .. } => mean,
        }
    }
}

pub(crate) fn normal_cdf(z: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-z / std::f64::consts::SQRT_2)
}

/// Weighted M-step result.
#[derive(Debug, Clone)]
pub struct MStepOutcome<E> {
    pub params: E,
    /// States whose parameters were left unchanged: total weight below 1e-10, or
    /// the candidate update failed to improve the weighted log-likelihood.
    pub flagged_states: Vec<usize>,
}

/// Total posterior weight below which a state's parameters are not updated.
pub const DEGENERATE_WEIGHT: f64 = 1e-10;

/// Common interface of the emission families.
///
/// Observations are passed as a slice whose element `i` is observed at time
/// `t = i + 1`; weights are row-major `n × K` posteriors.
pub trait EmissionModel: Sized {
    fn states(&self) -> usize;

    fn period(&self) -> usize;

    /// Natural log of the density of `ν_{k,t}` at `y` (state `k` is 0-based,
    /// `t` is a 1-based time reduced mod `T`).
    fn log_density(&self, k: usize, t: usize, y: f64) -> Result<f64>;

    fn sample<R: Rng + ?Sized>(&self, k: usize, t: usize, rng: &mut R) -> f64;

    fn weighted_mstep(&self, obs: &[f64], weights: &[f64]) -> Result<MStepOutcome<Self>>;

    /// `ν_{k,t}` as a list of weighted components.
    fn law(&self, k: usize, t: usize) -> Vec<LawComponent>;

    /// Flattened parameters of state `k`, used for label alignment.
    fn state_parameters(&self, k: usize) -> Vec<f64>;

    /// Relabel states: new state `a` is old state `perm[a]`.
    fn permuted(&self, perm: &[usize]) -> Self;

    /// Check the family's bound constraints.
    fn validate(&self) -> Result<()>;

    /// Row-major `n × K` table of log-densities; errors name the first
    /// observation outside the support.
    fn log_density_table(&self, obs: &[f64]) -> Result<Vec<f64>> {
        let k = self.states();
        let mut out = Vec::with_capacity(obs.len() * k);
        for (i, &y) in obs.iter().enumerate() {
            for s in 0..k {
                out.push(
                    self.log_density(s, i + 1, y)
                        .map_err(|_| ShmmError::Domain { index: i, value: y })?,
                );
            }
        }
        Ok(out)
    }

    /// `Σ_i Σ_k w_ik log f_{k,t_i}(y_i)`, skipping zero weights.
    fn weighted_loglik(&self, obs: &[f64], weights: &[f64]) -> Result<f64> {
        let k = self.states();
        let table = self.log_density_table(obs)?;
        Ok(table
            .iter()
            .zip(weights)
            .take(obs.len() * k)
            .filter(|(_, &w)| w > 0.0)
            .map(|(l, w)| w * l)
            .sum())
    }
}

/// The concrete family of a model, tagged by `family` in model documents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family")]
pub enum Emissions {
    #[serde(rename = "gaussian_periodic_mean")]
    GaussianPeriodicMean(GaussianPeriodicMean),
    #[serde(rename = "exp_periodic_scale")]
    ExpPeriodicScale(ExpPeriodicScale),
    #[serde(rename = "zero_inflated_exp")]
    ZeroInflatedExp(ZeroInflatedExp),
}

impl Emissions {
    pub const FAMILY_TAGS: [&'static str; 3] = [
        "gaussian_periodic_mean",
        "exp_periodic_scale",
        "zero_inflated_exp",
    ];

    pub fn family_tag(&self) -> &'static str {
        match self {
            Emissions::GaussianPeriodicMean(_) => Self::FAMILY_TAGS[0],
            Emissions::ExpPeriodicScale(_) => Self::FAMILY_TAGS[1],
            Emissions::ZeroInflatedExp(_) => Self::FAMILY_TAGS[2],
        }
    }

    /// Mean of `ν_{k,t}`.
    pub fn mean(&self, k: usize, t: usize) -> f64 {
        self.law(k, t).iter().map(|c| c.weight() * c.mean()).sum()
    }

    /// Smallest singular value of the feature matrix `O_t`; near zero means the
    /// emission laws at time `t` are (numerically) linearly dependent.
    pub fn linear_independence_check(&self, t: usize, features: &FeatureMap) -> Result<f64> {
        if features.len() < self.states() {
            return Err(ShmmError::InvalidArgument(format!(
                "feature count {} is below the state count {}",
                features.len(),
                self.states()
            )));
        }
        let o = crate::spectral::feature_matrix(self, t, features)?;
        Ok(o.singular_values().min())
    }
}

macro_rules! dispatch {
    ($self:expr, $e:ident => $body:expr) => {
        match $self {
            Emissions::GaussianPeriodicMean($e) => $body,
            Emissions::ExpPeriodicScale($e) => $body,
            Emissions::ZeroInflatedExp($e) => $body,
        }
    };
}

impl EmissionModel for Emissions {
    fn states(&self) -> usize {
        dispatch!(self, e => e.states())
    }

    fn period(&self) -> usize {
        dispatch!(self, e => e.period())
    }

    fn log_density(&self, k: usize, t: usize, y: f64) -> Result<f64> {
        dispatch!(self, e => e.log_density(k, t, y))
    }

    fn sample<R: Rng + ?Sized>(&self, k: usize, t: usize, rng: &mut R) -> f64 {
        dispatch!(self, e => e.sample(k, t, rng))
    }

    fn weighted_mstep(&self, obs: &[f64], weights: &[f64]) -> Result<MStepOutcome<Self>> {
        Ok(match self {
            Emissions::GaussianPeriodicMean(e) => {
                let o = e.weighted_mstep(obs, weights)?;
                MStepOutcome {
                    params: Emissions::GaussianPeriodicMean(o.params),
                    flagged_states: o.flagged_states,
                }
            }
            Emissions::ExpPeriodicScale(e) => {
                let o = e.weighted_mstep(obs, weights)?;
                MStepOutcome {
                    params: Emissions::ExpPeriodicScale(o.params),
                    flagged_states: o.flagged_states,
                }
            }
            Emissions::ZeroInflatedExp(e) => {
                let o = e.weighted_mstep(obs, weights)?;
                MStepOutcome {
                    params: Emissions::ZeroInflatedExp(o.params),
                    flagged_states: o.flagged_states,
                }
            }
        })
    }

    fn law(&self, k: usize, t: usize) -> Vec<LawComponent> {
        dispatch!(self, e => e.law(k, t))
    }

    fn state_parameters(&self, k: usize) -> Vec<f64> {
        dispatch!(self, e => e.state_parameters(k))
    }

    fn permuted(&self, perm: &[usize]) -> Self {
        match self {
            Emissions::GaussianPeriodicMean(e) => Emissions::GaussianPeriodicMean(e.permuted(perm)),
            Emissions::ExpPeriodicScale(e) => Emissions::ExpPeriodicScale(e.permuted(perm)),
            Emissions::ZeroInflatedExp(e) => Emissions::ZeroInflatedExp(e.permuted(perm)),
        }
    }

    fn validate(&self) -> Result<()> {
        dispatch!(self, e => e.validate())
    }

    fn log_density_table(&self, obs: &[f64]) -> Result<Vec<f64>> {
        dispatch!(self, e => e.log_density_table(obs))
    }
}

/// Trigonometric polynomial with zero constant term:
/// `Σ_l coef[2l-2] cos(2πlt/T) + coef[2l-1] sin(2πlt/T)`.
pub(crate) fn periodic_offset(coef: &[f64], t: usize, period: usize) -> f64 {
    let degree = coef.len() / 2;
    let z = crate::numeric::trig_basis(t, period, degree);
    coef.iter().zip(&z[1..]).map(|(c, z)| c * z).sum()
}

/// The trigonometric regressors without the constant, for time `t`.
pub(crate) fn periodic_regressors(t: usize, period: usize, degree: usize) -> Vec<f64> {
    crate::numeric::trig_basis(t, period, degree)[1..].to_vec()
}

/// Draw an index from a discrete distribution.
pub(crate) fn draw_index<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    // roundoff: fall back to the last index with positive weight
    weights
        .iter()
        .rposition(|&w| w > 0.0)
        .unwrap_or(weights.len() - 1)
}

pub(crate) fn check_simplex(p: &[f64], what: &str) -> Result<()> {
    if p.is_empty() || p.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(ShmmError::InvalidModel(format!(
            "{what} must be non-empty, finite and non-negative"
        )));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-12 {
        return Err(ShmmError::InvalidModel(format!(
            "{what} sums to {s}, not 1"
        )));
    }
    Ok(())
}

/// Phase index (0-based) of the observation at slice position `i`.
#[inline]
pub(crate) fn phase_index(i: usize, period: usize) -> usize {
    phase_of(i + 1, period) - 1
}

#[cfg(test)]
pub(crate) mod test_support {
    /// Adaptive Simpson quadrature, an oracle independent of the families.
    pub fn integrate<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
        fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> f64 {
            let m = 0.5 * (a + b);
            (b - a) / 6.0 * (f(a) + 4.0 * f(m) + f(b))
        }
        fn recurse<F: Fn(f64) -> f64>(
            f: &F,
            a: f64,
            b: f64,
            whole: f64,
            tol: f64,
            depth: u32,
        ) -> f64 {
            let m = 0.5 * (a + b);
            let left = simpson(f, a, m);
            let right = simpson(f, m, b);
            if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
                return left + right + (left + right - whole) / 15.0;
            }
            recurse(f, a, m, left, tol / 2.0, depth - 1)
                + recurse(f, m, b, right, tol / 2.0, depth - 1)
        }
        recurse(f, a, b, simpson(f, a, b), tol, 50)
    }
}
