//! Seasonal hidden Markov models.
//!
//! A seasonal HMM is a hidden Markov model whose transition matrices `Q(t)` and
//! emission laws `ν_{k,t}` are periodic in `t` with a known period `T`. This crate
//! provides:
//!
//! * the model types and the trigonometric-logit transition parametrization
//!   ([`model`]), the chunked homogeneous view used as a likelihood oracle
//!   ([`chunked`]) and numerical assumption checks ([`assumptions`]);
//! * three periodic emission families ([`emissions`]);
//! * exact log-space smoothing, EM with multi-start, Viterbi decoding and
//!   label alignment ([`inference`]);
//! * moment-based spectral recovery of emission features, time marginals and
//!   transition matrices up to per-time permutation ([`spectral`]);
//! * seeded simulation ([`sim`]), data ingestion and model documents
//!   ([`dataio`]) and parametric-bootstrap validation ([`validate`]).
//!
//! Time is 1-based throughout the public API: observation `i` of a slice (0-based)
//! is time `t = i + 1`, and its phase is `((t - 1) mod T) + 1`. `Q(t)` is the
//! transition matrix from `X_t` to `X_{t+1}`.

// NaN must fail parameter checks, hence `!(x > 0.0)` over `x <= 0.0`
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod assumptions;
pub mod chunked;
pub mod dataio;
pub mod emissions;
pub mod error;
pub mod inference;
pub mod model;
pub mod numeric;
pub mod presets;
pub mod rng;
pub mod sim;
pub mod spectral;
pub mod validate;

pub use emissions::{
    EmissionModel, Emissions, ExpPeriodicScale, GaussianPeriodicMean, LawComponent, ZeroInflatedExp,
};
pub use error::{Result, ShmmError};
pub use inference::{
    align_states, em_iterate, fit, forward_backward, log_likelihood, viterbi, Alignment,
    FamilySpec, FitConfig, FitDiagnostics, FitOutcome, InitialMode, SmoothingResult,
};
pub use model::{ModelDims, PeriodicLogitTransition, SeasonalHMM};
pub use sim::{simulate, simulate_batch, Trajectory};
