//! Smoothing, likelihood, EM estimation, decoding and label alignment.

mod align;
mod em;
mod fit;
mod smoothing;
mod transition;

pub use align::{align_states, Alignment};
pub use em::{em_iterate, EmStep, InitialMode};
pub use fit::{fit, refine, FamilySpec, FitConfig, FitDiagnostics, FitOutcome, StartRecord};
pub use smoothing::{forward_backward, log_likelihood, viterbi, SmoothingResult};
pub use transition::{transition_gradient, transition_objective, TransitionCounts};
