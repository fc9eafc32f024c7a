//! Log-space forward-backward, likelihood and Viterbi decoding.

use crate::emissions::EmissionModel;
use crate::error::{Result, ShmmError};
use crate::model::SeasonalHMM;
use crate::numeric::log_sum_exp;

/// Posterior marginals and pairwise probabilities from one forward-backward pass.
///
/// Indices are 0-based: `marginal(i, k) = P(X_{i+1} = k+1 | Y)`.
#[derive(Debug, Clone)]
pub struct SmoothingResult {
    pub n: usize,
    pub states: usize,
    /// Row-major `n × K`.
    pub marginal: Vec<f64>,
    /// `(n-1) × K × K`; entry `[i][k][l] = P(X_{i+1}=k, X_{i+2}=l | Y)`.
    pub pairwise: Vec<f64>,
    pub loglik: f64,
}

impl SmoothingResult {
    #[inline]
    pub fn marginal(&self, i: usize, k: usize) -> f64 {
        self.marginal[i * self.states + k]
    }

    #[inline]
    pub fn pairwise(&self, i: usize, k: usize, l: usize) -> f64 {
        self.pairwise[(i * self.states + k) * self.states + l]
    }
}

/// Inputs shared by the passes: log emissions and log transitions per phase.
struct Tables {
    k: usize,
    period: usize,
    log_emit: Vec<f64>,
    log_q: Vec<f64>,
    log_pi: Vec<f64>,
}

impl Tables {
    fn new(model: &SeasonalHMM, obs: &[f64]) -> Result<Self> {
        if obs.is_empty() {
            return Err(ShmmError::InvalidArgument(
                "observation sequence is empty".into(),
            ));
        }
        Ok(Self {
            k: model.dims.states,
            period: model.dims.period,
            log_emit: model.emissions.log_density_table(obs)?,
            log_q: model.transition.log_entries_by_phase(),
            log_pi: model.pi.iter().map(|p| p.ln()).collect(),
        })
    }

    /// `log Q_{kl}(t)` for the transition leaving 0-based position `i`.
    #[inline]
    fn log_q(&self, i: usize, k: usize, l: usize) -> f64 {
        let p = i % self.period;
        self.log_q[(p * self.k + k) * self.k + l]
    }

    #[inline]
    fn emit(&self, i: usize, k: usize) -> f64 {
        self.log_emit[i * self.k + k]
    }

    fn forward(&self, n: usize) -> Vec<f64> {
        let k = self.k;
        let mut alpha = vec![0.0; n * k];
        for s in 0..k {
            alpha[s] = self.log_pi[s] + self.emit(0, s);
        }
        let mut terms = vec![0.0; k];
        for i in 1..n {
            for l in 0..k {
                for (s, term) in terms.iter_mut().enumerate() {
                    *term = alpha[(i - 1) * k + s] + self.log_q(i - 1, s, l);
                }
                alpha[i * k + l] = log_sum_exp(&terms) + self.emit(i, l);
            }
        }
        alpha
    }

    fn first_dead_observation(&self, n: usize) -> usize {
        (0..n)
            .find(|&i| (0..self.k).all(|s| self.emit(i, s) == f64::NEG_INFINITY))
            .unwrap_or(0)
    }
}

/// `log L_{n,π}[θ; Y]` by a log-space forward pass.
pub fn log_likelihood(model: &SeasonalHMM, obs: &[f64]) -> Result<f64> {
    let tables = Tables::new(model, obs)?;
    let n = obs.len();
    let alpha = tables.forward(n);
    let ll = log_sum_exp(&alpha[(n - 1) * tables.k..]);
    if ll == f64::NEG_INFINITY {
        return Err(ShmmError::ZeroLikelihood {
            index: tables.first_dead_observation(n),
        });
    }
    Ok(ll)
}

/// Exact smoothing probabilities and the log-likelihood.
pub fn forward_backward(model: &SeasonalHMM, obs: &[f64]) -> Result<SmoothingResult> {
    let tables = Tables::new(model, obs)?;
    let n = obs.len();
    let k = tables.k;
    let alpha = tables.forward(n);
    let loglik = log_sum_exp(&alpha[(n - 1) * k..]);
    if !loglik.is_finite() {
        return Err(ShmmError::ZeroLikelihood {
            index: tables.first_dead_observation(n),
        });
    }

    let mut beta = vec![0.0; n * k];
    let mut terms = vec![0.0; k];
    for i in (0..n - 1).rev() {
        for s in 0..k {
            for (l, term) in terms.iter_mut().enumerate() {
                *term = tables.log_q(i, s, l) + tables.emit(i + 1, l) + beta[(i + 1) * k + l];
            }
            beta[i * k + s] = log_sum_exp(&terms);
        }
    }

    let marginal: Vec<f64> = alpha
        .iter()
        .zip(&beta)
        .map(|(a, b)| (a + b - loglik).exp())
        .collect();

    let mut pairwise = vec![0.0; n.saturating_sub(1) * k * k];
    for i in 0..n.saturating_sub(1) {
        for s in 0..k {
            let a = alpha[i * k + s];
            for l in 0..k {
                let v = a + tables.log_q(i, s, l) + tables.emit(i + 1, l) + beta[(i + 1) * k + l]
                    - loglik;
                pairwise[(i * k + s) * k + l] = v.exp();
            }
        }
    }

    Ok(SmoothingResult {
        n,
        states: k,
        marginal,
        pairwise,
        loglik,
    })
}

/// Most probable hidden path (0-based states); ties go to the lower state index.
pub fn viterbi(model: &SeasonalHMM, obs: &[f64]) -> Result<Vec<usize>> {
    let tables = Tables::new(model, obs)?;
    let n = obs.len();
    let k = tables.k;
    let mut score: Vec<f64> = (0..k)
        .map(|s| tables.log_pi[s] + tables.emit(0, s))
        .collect();
    let mut back = vec![0usize; n * k];
    let mut next = vec![0.0; k];
    for i in 1..n {
        for l in 0..k {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for (s, &sc) in score.iter().enumerate() {
                let v = sc + tables.log_q(i - 1, s, l);
                if v > best {
                    best = v;
                    arg = s;
                }
            }
            back[i * k + l] = arg;
            next[l] = best + tables.emit(i, l);
        }
        std::mem::swap(&mut score, &mut next);
    }
    let mut last = 0;
    let mut best = f64::NEG_INFINITY;
    for (s, &v) in score.iter().enumerate() {
        if v > best {
            best = v;
            last = s;
        }
    }
    if best == f64::NEG_INFINITY {
        return Err(ShmmError::ZeroLikelihood {
            index: tables.first_dead_observation(n),
        });
    }
    let mut path = vec![0; n];
    path[n - 1] = last;
    for i in (1..n).rev() {
        path[i - 1] = back[i * k + path[i]];
    }
    Ok(path)
}
