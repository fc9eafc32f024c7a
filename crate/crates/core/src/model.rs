//! Model types: dimensions, the trigonometric-logit transition family and the
//! seasonal HMM itself.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::emissions::{EmissionModel, Emissions};
use crate::error::{Result, ShmmError};
use crate::numeric::{phase_of, softmax_into, trig_basis};

/// State count `K`, period `T` and trigonometric degree `d` of the transitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelDims {
    #[serde(rename = "K")]
    pub states: usize,
    #[serde(rename = "T")]
    pub period: usize,
    #[serde(rename = "d")]
    pub degree: usize,
}

impl ModelDims {
    pub fn new(states: usize, period: usize, degree: usize) -> Result<Self> {
        if states == 0 {
            return Err(ShmmError::InvalidModel("state count K must be >= 1".into()));
        }
        if period == 0 {
            return Err(ShmmError::InvalidModel("period T must be >= 1".into()));
        }
        Ok(Self {
            states,
            period,
            degree,
        })
    }

    /// Number of trigonometric coefficients per logit, `2d + 1`.
    pub fn coefficients(&self) -> usize {
        2 * self.degree + 1
    }

    /// `T > 2d`: the coefficients can be recovered from `Q(1), …, Q(T)`.
    pub fn beta_identifiable(&self) -> bool {
        self.period > 2 * self.degree
    }

    /// Length of the flat coefficient vector, `K (K-1) (2d+1)`.
    pub fn beta_len(&self) -> usize {
        self.states * (self.states - 1) * self.coefficients()
    }
}

/// `Q_ij(t) ∝ exp(Z(t)·β_ij)` with `β_iK ≡ 0` (last column is the reference).
///
/// Coefficients are stored flat, row-major over `[i][j][c]` with
/// `i ∈ 0..K`, `j ∈ 0..K-1`, `c ∈ 0..2d+1` in the order
/// `(constant, cos 1, sin 1, …, cos d, sin d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicLogitTransition {
    dims: ModelDims,
    beta: Vec<f64>,
}

impl PeriodicLogitTransition {
    pub fn new(dims: ModelDims, beta: Vec<f64>) -> Result<Self> {
        if beta.len() != dims.beta_len() {
            return Err(ShmmError::InvalidModel(format!(
                "beta has {} coefficients, expected K(K-1)(2d+1) = {}",
                beta.len(),
                dims.beta_len()
            )));
        }
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(ShmmError::InvalidModel(
                "beta has non-finite entries".into(),
            ));
        }
        Ok(Self { dims, beta })
    }

    /// All-zero coefficients: every `Q(t)` is the uniform matrix.
    pub fn zeros(dims: ModelDims) -> Self {
        Self {
            dims,
            beta: vec![0.0; dims.beta_len()],
        }
    }

    /// Build from nested `[i][j][c]` arrays.
    pub fn from_nested(dims: ModelDims, nested: &[Vec<Vec<f64>>]) -> Result<Self> {
        let (k, c) = (dims.states, dims.coefficients());
        if nested.len() != k
            || nested
                .iter()
                .any(|row| row.len() != k - 1 || row.iter().any(|coefs| coefs.len() != c))
        {
            return Err(ShmmError::InvalidModel(format!(
                "beta must have shape {k} x {} x {c}",
                k - 1
            )));
        }
        let flat = nested.iter().flatten().flatten().copied().collect();
        Self::new(dims, flat)
    }

    pub fn to_nested(&self) -> Vec<Vec<Vec<f64>>> {
        let (k, c) = (self.dims.states, self.dims.coefficients());
        (0..k)
            .map(|i| {
                (0..k - 1)
                    .map(|j| self.beta[self.index(i, j, 0)..self.index(i, j, 0) + c].to_vec())
                    .collect()
            })
            .collect()
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, c: usize) -> usize {
        (i * (self.dims.states - 1) + j) * self.dims.coefficients() + c
    }

    pub fn coef(&self, i: usize, j: usize, c: usize) -> f64 {
        self.beta[self.index(i, j, c)]
    }

    /// Logits of row `i` at regressors `z`; the reference column gets 0.
    pub(crate) fn row_logits(&self, i: usize, z: &[f64], out: &mut [f64]) {
        let k = self.dims.states;
        let c = self.dims.coefficients();
        for (j, o) in out.iter_mut().enumerate().take(k - 1) {
            let start = self.index(i, j, 0);
            *o = self.beta[start..start + c]
                .iter()
                .zip(z)
                .map(|(b, zc)| b * zc)
                .sum();
        }
        out[k - 1] = 0.0;
    }

    /// Row-major `K × K` entries of `Q(t)`; `t` is reduced mod `T`.
    pub fn transition_entries(&self, t: usize) -> Vec<f64> {
        let k = self.dims.states;
        let z = trig_basis(t, self.dims.period, self.dims.degree);
        let mut out = vec![0.0; k * k];
        let mut logits = vec![0.0; k];
        for i in 0..k {
            self.row_logits(i, &z, &mut logits);
            softmax_into(&logits, &mut out[i * k..(i + 1) * k]);
        }
        out
    }

    /// `Q(t)`, the transition matrix from `X_t` to `X_{t+1}`.
    pub fn transition_matrix(&self, t: usize) -> DMatrix<f64> {
        let k = self.dims.states;
        DMatrix::from_row_slice(k, k, &self.transition_entries(t))
    }

    /// `Q(1), …, Q(T)`.
    pub fn all_matrices(&self) -> Vec<DMatrix<f64>> {
        (1..=self.dims.period)
            .map(|t| self.transition_matrix(t))
            .collect()
    }

    /// Elementwise log of `Q(t)` for every phase, row-major, phase-major.
    pub(crate) fn log_entries_by_phase(&self) -> Vec<f64> {
        (1..=self.dims.period)
            .flat_map(|t| self.transition_entries(t).into_iter().map(f64::ln))
            .collect()
    }

    /// Product `Q(1) Q(2) ⋯ Q(T)`.
    pub fn period_product(&self) -> DMatrix<f64> {
        let k = self.dims.states;
        self.all_matrices()
            .into_iter()
            .fold(DMatrix::identity(k, k), |acc, q| acc * q)
    }

    /// Stationary law of `Q(1)⋯Q(T)` by power iteration.
    pub fn stationary_distribution(&self) -> Result<DVector<f64>> {
        stationary_of(&self.period_product())
    }

    /// Relabel states: new state `a` is old state `perm[a]`.
    ///
    /// The reference column moves with the permutation, so coefficients are
    /// re-expressed relative to the new last state.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let k = self.dims.states;
        let c = self.dims.coefficients();
        assert_eq!(perm.len(), k, "permutation length must equal K");
        let old = |i: usize, j: usize, cc: usize| -> f64 {
            if j == k - 1 {
                0.0
            } else {
                self.coef(i, j, cc)
            }
        };
        let mut beta = vec![0.0; self.beta.len()];
        for a in 0..k {
            for b in 0..k - 1 {
                for cc in 0..c {
                    beta[self.index(a, b, cc)] =
                        old(perm[a], perm[b], cc) - old(perm[a], perm[k - 1], cc);
                }
            }
        }
        Self {
            dims: self.dims,
            beta,
        }
    }
}

/// Fixed point of a row-stochastic matrix by power iteration.
pub fn stationary_of(p: &DMatrix<f64>) -> Result<DVector<f64>> {
    const MAX_ITERS: usize = 1_000_000;
    let k = p.nrows();
    let pt = p.transpose();
    let mut pi = DVector::from_element(k, 1.0 / k as f64);
    for _ in 0..MAX_ITERS {
        let mut next = &pt * &pi;
        let total = next.sum();
        next /= total;
        let delta = (&next - &pi).amax();
        pi = next;
        if delta < 1e-15 {
            let residual = (&pt * &pi - &pi).amax();
            if residual < 1e-10 {
                return Ok(pi);
            }
        }
    }
    Err(ShmmError::Numerical(format!(
        "power iteration for the stationary distribution did not converge in {MAX_ITERS} iterations"
    )))
}

/// A seasonal hidden Markov model.
#[derive(Debug, Clone, PartialEq)]
pub struct SeasonalHMM {
    pub dims: ModelDims,
    pub transition: PeriodicLogitTransition,
    pub emissions: Emissions,
    pub pi: Vec<f64>,
}

impl SeasonalHMM {
    pub fn new(
        transition: PeriodicLogitTransition,
        emissions: Emissions,
        pi: Vec<f64>,
    ) -> Result<Self> {
        let dims = transition.dims();
        if emissions.states() != dims.states {
            return Err(ShmmError::InvalidModel(format!(
                "emissions have {} states but transitions have {}",
                emissions.states(),
                dims.states
            )));
        }
        if emissions.period() != dims.period {
            return Err(ShmmError::InvalidModel(format!(
                "emission period {} differs from transition period {}",
                emissions.period(),
                dims.period
            )));
        }
        validate_distribution(&pi, dims.states)?;
        emissions.validate()?;
        Ok(Self {
            dims,
            transition,
            emissions,
            pi,
        })
    }

    /// Same model with the initial law replaced by the stationary law of
    /// `Q(1)⋯Q(T)`.
    pub fn with_stationary_pi(mut self) -> Result<Self> {
        self.pi = self
            .transition
            .stationary_distribution()?
            .iter()
            .copied()
            .collect();
        Ok(self)
    }

    /// Unconditional laws `π*(1), …, π*(T)` of `X_t` when `X_1` follows the
    /// stationary distribution.
    pub fn phase_marginals(&self) -> Result<Vec<DVector<f64>>> {
        let mut out = Vec::with_capacity(self.dims.period);
        let mut current = self.transition.stationary_distribution()?;
        for t in 1..=self.dims.period {
            let next = self.transition.transition_matrix(t).transpose() * &current;
            out.push(current);
            current = next;
        }
        Ok(out)
    }

    /// Relabel states: new state `a` is old state `perm[a]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            dims: self.dims,
            transition: self.transition.permuted(perm),
            emissions: self.emissions.permuted(perm),
            pi: perm.iter().map(|&p| self.pi[p]).collect(),
        }
    }

    /// Phase in `1..=T` of the 1-based time `t`.
    pub fn phase(&self, t: usize) -> usize {
        phase_of(t, self.dims.period)
    }
}

pub(crate) fn validate_distribution(p: &[f64], k: usize) -> Result<()> {
    if p.len() != k {
        return Err(ShmmError::InvalidModel(format!(
            "initial distribution has {} entries, expected {k}",
            p.len()
        )));
    }
    if p.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(ShmmError::InvalidModel(
            "initial distribution has negative or non-finite entries".into(),
        ));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(ShmmError::InvalidModel(format!(
            "initial distribution sums to {total}, not 1"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn logistic(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    #[test]
    fn zero_beta_gives_uniform_rows() {
        for k in 1..=4 {
            let tr = PeriodicLogitTransition::zeros(ModelDims::new(k, 5, 2).unwrap());
            for t in 1..=5 {
                let q = tr.transition_matrix(t);
                for v in q.iter() {
                    assert!((v - 1.0 / k as f64).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn two_state_row_is_logistic_of_linear_predictor() {
        // β_1 = (1, 0.7, 0.5) on the free column.
        let dims = ModelDims::new(2, 365, 1).unwrap();
        let tr = PeriodicLogitTransition::new(dims, vec![1.0, 0.7, 0.5, -1.0, -0.6, 0.7]).unwrap();
        let q = tr.transition_matrix(1);
        let angle = 2.0 * std::f64::consts::PI / 365.0;
        let expected = logistic(1.0 + 0.7 * angle.cos() + 0.5 * angle.sin());
        assert!((q[(0, 0)] - expected).abs() < 1e-15);
        // Independently evaluated: σ(1 + 0.7 cos(2π/365) + 0.5 sin(2π/365)).
        assert!((q[(0, 0)] - 0.846_642_011_153_797_6).abs() < 1e-12);
        let expected_21 = logistic(-1.0 - 0.6 * angle.cos() + 0.7 * angle.sin());
        assert!((q[(1, 0)] - expected_21).abs() < 1e-15);
    }

    #[test]
    fn diagonal_log_k_coefficients() {
        // β̄_ijl = 1{i=j} 1{l=constant} log K under the reference-category convention.
        for k in 2..=5usize {
            let dims = ModelDims::new(k, 12, 1).unwrap();
            let mut tr = PeriodicLogitTransition::zeros(dims);
            for i in 0..k - 1 {
                let idx = tr.index(i, i, 0);
                tr.beta[idx] = (k as f64).ln();
            }
            let kf = k as f64;
            for t in 1..=12 {
                let q = tr.transition_matrix(t);
                for i in 0..k - 1 {
                    for j in 0..k {
                        let want = if i == j {
                            kf / (2.0 * kf - 1.0)
                        } else {
                            1.0 / (2.0 * kf - 1.0)
                        };
                        assert!((q[(i, j)] - want).abs() < 1e-14);
                    }
                }
                // last row: all logits zero
                for j in 0..k {
                    assert!((q[(k - 1, j)] - 1.0 / kf).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn stationary_for_uniform_matrices() {
        for k in [2usize, 3] {
            let tr = PeriodicLogitTransition::zeros(ModelDims::new(k, 4, 1).unwrap());
            let pi = tr.stationary_distribution().unwrap();
            for v in pi.iter() {
                assert!((v - 1.0 / k as f64).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn stationary_matches_direct_solve_for_study_parameters() {
        let dims = ModelDims::new(2, 365, 1).unwrap();
        let tr = PeriodicLogitTransition::new(dims, vec![1.0, 0.7, 0.5, -1.0, -0.6, 0.7]).unwrap();
        let p = tr.period_product();
        let pi = tr.stationary_distribution().unwrap();
        let residual = (p.transpose() * &pi - &pi).amax();
        assert!(residual < 1e-10);
        // Direct solve: (Pᵀ - I) π = 0 with the last equation replaced by Σπ = 1.
        let mut a = p.transpose() - DMatrix::identity(2, 2);
        a.row_mut(1).fill(1.0);
        let b = DVector::from_vec(vec![0.0, 1.0]);
        let direct = a.lu().solve(&b).unwrap();
        assert!((&direct - &pi).amax() < 1e-8);
    }

    #[test]
    fn permutation_preserves_transition_matrices() {
        let dims = ModelDims::new(3, 6, 1).unwrap();
        let beta: Vec<f64> = (0..dims.beta_len())
            .map(|i| ((i * 37 % 11) as f64 - 5.0) / 4.0)
            .collect();
        let tr = PeriodicLogitTransition::new(dims, beta).unwrap();
        let perm = [2usize, 0, 1];
        let p = tr.permuted(&perm);
        for t in 1..=6 {
            let q = tr.transition_matrix(t);
            let qp = p.transition_matrix(t);
            for a in 0..3 {
                for b in 0..3 {
                    assert!((qp[(a, b)] - q[(perm[a], perm[b])]).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        let dims = ModelDims::new(2, 3, 1).unwrap();
        assert!(PeriodicLogitTransition::new(dims, vec![0.0; 5]).is_err());
        assert!(ModelDims::new(0, 3, 1).is_err());
        assert!(ModelDims::new(2, 0, 1).is_err());
        assert!(!ModelDims::new(2, 4, 2).unwrap().beta_identifiable());
        assert!(ModelDims::new(2, 5, 2).unwrap().beta_identifiable());
    }

    proptest! {
        #[test]
        fn rows_are_probability_vectors_and_periodic(
            k in 1usize..5, period in 1usize..20, degree in 0usize..3,
            seed in any::<u64>(), t in 1usize..100,
        ) {
            let dims = ModelDims::new(k, period, degree).unwrap();
            let mut s = seed;
            let beta = (0..dims.beta_len()).map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 8.0 - 4.0
            }).collect();
            let tr = PeriodicLogitTransition::new(dims, beta).unwrap();
            let q = tr.transition_entries(t);
            prop_assert_eq!(&q, &tr.transition_entries(t + period));
            for i in 0..k {
                let row = &q[i * k..(i + 1) * k];
                prop_assert!(row.iter().all(|&v| v > 0.0 && v < 1.0 || k == 1));
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}
