//! The homogeneous HMM obtained by grouping `T` consecutive steps into one block.
//!
//! Block `U_j = (X_{jT+1}, …, X_{(j+1)T})` is a homogeneous Markov chain on `K^T`
//! states with observations `W_j = (Y_{jT+1}, …, Y_{(j+1)T})`. This view is
//! exponential in `T` and is used as an independent likelihood oracle.

use nalgebra::DMatrix;

use crate::emissions::EmissionModel;
use crate::error::{Result, ShmmError};
use crate::model::SeasonalHMM;
use crate::numeric::log_sum_exp;

pub const DEFAULT_CAP: usize = 4096;

#[derive(Debug, Clone)]
pub struct ChunkedHMM {
    model: SeasonalHMM,
    size: usize,
    /// `q[t-1]` is `Q(t)`, row-major.
    q: Vec<Vec<f64>>,
}

/// Build the chunked view, refusing when `K^T` exceeds `cap`.
pub fn chunk(model: &SeasonalHMM, cap: usize) -> Result<ChunkedHMM> {
    let k = model.dims.states as u128;
    let mut size: u128 = 1;
    for _ in 0..model.dims.period {
        size = size.saturating_mul(k);
        if size > cap as u128 {
            return Err(ShmmError::TooLarge {
                states: k.checked_pow(model.dims.period as u32).unwrap_or(u128::MAX),
                cap,
            });
        }
    }
    Ok(ChunkedHMM {
        model: model.clone(),
        size: size as usize,
        q: (1..=model.dims.period)
            .map(|t| model.transition.transition_entries(t))
            .collect(),
    })
}

impl ChunkedHMM {
    /// Number of block states `K^T`.
    pub fn size(&self) -> usize {
        self.size
    }

    /// The block state with code `u` as a tuple of 0-based states; the first
    /// time step is the most significant digit.
    pub fn decode(&self, mut u: usize) -> Vec<usize> {
        let k = self.model.dims.states;
        let mut out = vec![0; self.model.dims.period];
        for slot in out.iter_mut().rev() {
            *slot = u % k;
            u /= k;
        }
        out
    }

    fn q(&self, t: usize, i: usize, j: usize) -> f64 {
        let k = self.model.dims.states;
        self.q[t - 1][i * k + j]
    }

    fn within(&self, v: &[usize]) -> f64 {
        v.windows(2)
            .enumerate()
            .map(|(t, w)| self.q(t + 1, w[0], w[1]))
            .product()
    }

    /// `Q̃_uv = Q_{u_T v_1}(T) Q_{v_1 v_2}(1) ⋯ Q_{v_{T-1} v_T}(T-1)`.
    pub fn transition(&self, u: usize, v: usize) -> f64 {
        let period = self.model.dims.period;
        let (u, v) = (self.decode(u), self.decode(v));
        self.q(period, u[period - 1], v[0]) * self.within(&v)
    }

    pub fn transition_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.size, self.size, |u, v| self.transition(u, v))
    }

    /// Law of the first block: `π_{v_1} Q_{v_1 v_2}(1) ⋯`.
    pub fn initial(&self) -> Vec<f64> {
        (0..self.size)
            .map(|v| {
                let v = self.decode(v);
                self.model.pi[v[0]] * self.within(&v)
            })
            .collect()
    }

    /// `log g(w | u) = Σ_t log f_{u_t,t}(w_t)`, over the observed part of a block.
    pub fn block_log_density(&self, u: usize, block: &[f64]) -> Result<f64> {
        let u = self.decode(u);
        block
            .iter()
            .enumerate()
            .map(|(t, &y)| self.model.emissions.log_density(u[t], t + 1, y))
            .sum()
    }

    /// Log-likelihood of `obs` by a plain log-space forward pass over blocks;
    /// a trailing partial block contributes its observed entries only.
    pub fn log_likelihood(&self, obs: &[f64]) -> Result<f64> {
        if obs.is_empty() {
            return Err(ShmmError::InvalidArgument(
                "observation sequence is empty".into(),
            ));
        }
        let period = self.model.dims.period;
        let log_q = self.transition_matrix().map(f64::ln);
        let mut blocks = obs.chunks(period);
        let first = blocks.next().expect("non-empty");
        let mut alpha: Vec<f64> = self
            .initial()
            .iter()
            .enumerate()
            .map(|(u, p)| Ok(p.ln() + self.block_log_density(u, first)?))
            .collect::<Result<_>>()?;
        let mut terms = vec![0.0; self.size];
        for block in blocks {
            let mut next = vec![0.0; self.size];
            for (v, nv) in next.iter_mut().enumerate() {
                for (u, term) in terms.iter_mut().enumerate() {
                    *term = alpha[u] + log_q[(u, v)];
                }
                *nv = log_sum_exp(&terms) + self.block_log_density(v, block)?;
            }
            alpha = next;
        }
        Ok(log_sum_exp(&alpha))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::log_likelihood;
    use crate::inference::test_models::random_model;
    use crate::rng::stream_rng;
    use rand::Rng;

    #[test]
    fn single_state_is_trivial() {
        let mut rng = stream_rng(61, 0);
        let m = random_model(1, 4, &mut rng);
        let c = chunk(&m, DEFAULT_CAP).unwrap();
        assert_eq!(c.size(), 1);
        assert_eq!(c.transition_matrix()[(0, 0)], 1.0);
    }

    #[test]
    fn two_by_two_entry() {
        let mut rng = stream_rng(62, 0);
        let m = random_model(2, 2, &mut rng);
        let c = chunk(&m, DEFAULT_CAP).unwrap();
        let q1 = m.transition.transition_matrix(1);
        let q2 = m.transition.transition_matrix(2);
        // u = (1,1) -> code 0, v = (2,1) -> code 2
        assert_eq!(c.transition(0, 2), q2[(0, 1)] * q1[(1, 0)]);
        let t = c.transition_matrix();
        for r in t.row_iter() {
            assert!((r.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn likelihood_matches_periodic_forward() {
        let mut rng = stream_rng(63, 0);
        for _ in 0..5 {
            let m = random_model(2, 3, &mut rng);
            let obs: Vec<f64> = (0..8).map(|_| rng.random_range(-2.0..2.0)).collect();
            let c = chunk(&m, DEFAULT_CAP).unwrap();
            let a = c.log_likelihood(&obs).unwrap();
            let b = log_likelihood(&m, &obs).unwrap();
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn cap_is_enforced() {
        let mut rng = stream_rng(64, 0);
        let m = random_model(3, 9, &mut rng);
        match chunk(&m, DEFAULT_CAP) {
            Err(ShmmError::TooLarge { states, cap }) => {
                assert_eq!(states, 19683);
                assert_eq!(cap, 4096);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
