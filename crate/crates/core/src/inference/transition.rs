//! The transition block of the EM intermediate quantity.
//!
//! `Σ_t Σ_{k,l} π_{t,t+1|n}(k,l) log Q_kl(t)` only depends on the pairwise
//! posteriors through their sums over times sharing a phase, so the objective is
//! evaluated on `T × K × K` aggregated counts.

use nalgebra::{DMatrix, DVector};

use super::smoothing::SmoothingResult;
use crate::model::{ModelDims, PeriodicLogitTransition};
use crate::numeric::trig_basis;

const GRADIENT_TOL: f64 = 1e-6;
/// Newton iterations per M-step. EM only needs an improvement, and the next
/// iteration resumes from where this one stopped.
pub(crate) const EM_NEWTON_ITERS: usize = 8;
const MAX_HALVINGS: usize = 40;
const ARMIJO: f64 = 1e-4;

/// Expected transition counts aggregated by phase: `counts[(p*K + k)*K + l]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionCounts {
    pub dims: ModelDims,
    pub counts: Vec<f64>,
}

impl TransitionCounts {
    pub fn new(dims: ModelDims, counts: Vec<f64>) -> Self {
        assert_eq!(counts.len(), dims.period * dims.states * dims.states);
        Self { dims, counts }
    }

    /// Aggregate the pairwise posteriors of a smoothing pass.
    pub fn from_smoothing(dims: ModelDims, s: &SmoothingResult) -> Self {
        let k = dims.states;
        let mut counts = vec![0.0; dims.period * k * k];
        for i in 0..s.n.saturating_sub(1) {
            let p = i % dims.period;
            let src = &s.pairwise[i * k * k..(i + 1) * k * k];
            for (c, v) in counts[p * k * k..(p + 1) * k * k].iter_mut().zip(src) {
                *c += v;
            }
        }
        Self { dims, counts }
    }

    #[inline]
    fn get(&self, p: usize, i: usize, l: usize) -> f64 {
        let k = self.dims.states;
        self.counts[(p * k + i) * k + l]
    }
}

/// `Σ_p Σ_{k,l} A_p(k,l) log Q_kl(p)`.
pub fn transition_objective(tr: &PeriodicLogitTransition, counts: &TransitionCounts) -> f64 {
    let dims = tr.dims();
    (0..dims.states)
        .map(|i| row_objective(tr.beta(), i, dims, counts, &bases(dims)))
        .sum()
}

/// Gradient of [`transition_objective`] with respect to the flat coefficients.
pub fn transition_gradient(tr: &PeriodicLogitTransition, counts: &TransitionCounts) -> Vec<f64> {
    let dims = tr.dims();
    let z = bases(dims);
    let width = row_width(dims);
    let mut g = vec![0.0; dims.beta_len()];
    for i in 0..dims.states {
        let row = row_gradient(tr.beta(), i, dims, counts, &z);
        g[i * width..(i + 1) * width].copy_from_slice(&row);
    }
    g
}

/// Improve the transition block row by row with at most `max_iters` damped
/// Newton steps per row; the result never has a lower objective than `current`.
pub(crate) fn maximize(
    current: &PeriodicLogitTransition,
    counts: &TransitionCounts,
    max_iters: usize,
) -> PeriodicLogitTransition {
    let dims = current.dims();
    if dims.states == 1 {
        return current.clone();
    }
    let z = bases(dims);
    let width = row_width(dims);
    let mut beta = current.beta().to_vec();
    for i in 0..dims.states {
        let total: f64 = (0..dims.period)
            .flat_map(|p| (0..dims.states).map(move |l| (p, l)))
            .map(|(p, l)| counts.get(p, i, l))
            .sum();
        if total <= 0.0 {
            continue;
        }
        let mut f = row_objective(&beta, i, dims, counts, &z);
        for _ in 0..max_iters {
            let g = row_gradient(&beta, i, dims, counts, &z);
            let gnorm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            if gnorm < GRADIENT_TOL {
                break;
            }
            let dir = newton_direction(&beta, i, dims, counts, &z, &g);
            let slope: f64 = g.iter().zip(&dir).map(|(a, b)| a * b).sum();
            // the predicted gain is below rounding of the objective
            if slope <= 1e-19 * f.abs().max(1.0) {
                break;
            }
            let base = beta[i * width..(i + 1) * width].to_vec();
            let mut step = 1.0;
            let mut accepted = false;
            for _ in 0..MAX_HALVINGS {
                for (c, (b, d)) in base.iter().zip(&dir).enumerate() {
                    beta[i * width + c] = b + step * d;
                }
                let trial = row_objective(&beta, i, dims, counts, &z);
                if trial.is_finite() && trial >= f + ARMIJO * step * slope {
                    f = trial;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                beta[i * width..(i + 1) * width].copy_from_slice(&base);
                break;
            }
        }
    }
    PeriodicLogitTransition::new(dims, beta).expect("dimensions are unchanged")
}

fn row_width(dims: ModelDims) -> usize {
    (dims.states - 1) * dims.coefficients()
}

fn bases(dims: ModelDims) -> Vec<Vec<f64>> {
    (1..=dims.period)
        .map(|t| trig_basis(t, dims.period, dims.degree))
        .collect()
}

/// Row `i` of `Q(p)` for every phase, from the flat coefficients.
fn row_probs(beta: &[f64], i: usize, dims: ModelDims, z: &[f64], out: &mut [f64]) {
    let k = dims.states;
    let c = dims.coefficients();
    // logits are written to `out` and normalized in place
    out[k - 1] = 0.0;
    for j in 0..k - 1 {
        let start = (i * (k - 1) + j) * c;
        out[j] = beta[start..start + c]
            .iter()
            .zip(z)
            .map(|(b, zc)| b * zc)
            .sum();
    }
    let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for o in out.iter_mut() {
        *o = (*o - max).exp();
        total += *o;
    }
    out.iter_mut().for_each(|o| *o /= total);
}

fn row_objective(
    beta: &[f64],
    i: usize,
    dims: ModelDims,
    counts: &TransitionCounts,
    z: &[Vec<f64>],
) -> f64 {
    let k = dims.states;
    let mut q = vec![0.0; k];
    let mut total = 0.0;
    for (p, zp) in z.iter().enumerate() {
        row_probs(beta, i, dims, zp, &mut q);
        for (l, ql) in q.iter().enumerate() {
            let a = counts.get(p, i, l);
            if a > 0.0 {
                total += a * ql.ln();
            }
        }
    }
    total
}

fn row_gradient(
    beta: &[f64],
    i: usize,
    dims: ModelDims,
    counts: &TransitionCounts,
    z: &[Vec<f64>],
) -> Vec<f64> {
    let k = dims.states;
    let c = dims.coefficients();
    let mut g = vec![0.0; row_width(dims)];
    let mut q = vec![0.0; k];
    for (p, zp) in z.iter().enumerate() {
        row_probs(beta, i, dims, zp, &mut q);
        let n: f64 = (0..k).map(|l| counts.get(p, i, l)).sum();
        for j in 0..k - 1 {
            let r = counts.get(p, i, j) - n * q[j];
            for (cc, zc) in zp.iter().enumerate() {
                g[j * c + cc] += r * zc;
            }
        }
    }
    g
}

/// Newton direction `(-H)^{-1} g`, or `g` when `-H` is not positive definite.
fn newton_direction(
    beta: &[f64],
    i: usize,
    dims: ModelDims,
    counts: &TransitionCounts,
    z: &[Vec<f64>],
    g: &[f64],
) -> Vec<f64> {
    let k = dims.states;
    let c = dims.coefficients();
    let w = row_width(dims);
    let mut h = DMatrix::<f64>::zeros(w, w);
    let mut q = vec![0.0; k];
    for (p, zp) in z.iter().enumerate() {
        row_probs(beta, i, dims, zp, &mut q);
        let n: f64 = (0..k).map(|l| counts.get(p, i, l)).sum();
        if n == 0.0 {
            continue;
        }
        for j in 0..k - 1 {
            for m in 0..k - 1 {
                let cov = n * (if j == m { q[j] } else { 0.0 } - q[j] * q[m]);
                for a in 0..c {
                    for b in 0..c {
                        h[(j * c + a, m * c + b)] += cov * zp[a] * zp[b];
                    }
                }
            }
        }
    }
    let gv = DVector::from_column_slice(g);
    match h.cholesky() {
        Some(ch) => {
            let d = ch.solve(&gv);
            if d.iter().all(|x| x.is_finite()) && d.dot(&gv) > 0.0 {
                d.iter().copied().collect()
            } else {
                g.to_vec()
            }
        }
        None => g.to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use rand::Rng;

    fn random_instance(
        seed: u64,
        k: usize,
        period: usize,
        degree: usize,
    ) -> (PeriodicLogitTransition, TransitionCounts) {
        let mut rng = stream_rng(seed, 0);
        let dims = ModelDims::new(k, period, degree).unwrap();
        let beta = (0..dims.beta_len())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let counts = (0..period * k * k)
            .map(|_| rng.random_range(0.0..20.0))
            .collect();
        (
            PeriodicLogitTransition::new(dims, beta).unwrap(),
            TransitionCounts::new(dims, counts),
        )
    }

    #[test]
    fn gradient_matches_central_differences() {
        for seed in 0..10 {
            let (tr, counts) = random_instance(seed, 3, 7, 2);
            let g = transition_gradient(&tr, &counts);
            let h = 1e-6;
            for idx in 0..g.len() {
                let mut plus = tr.beta().to_vec();
                plus[idx] += h;
                let mut minus = tr.beta().to_vec();
                minus[idx] -= h;
                let fp = transition_objective(
                    &PeriodicLogitTransition::new(tr.dims(), plus).unwrap(),
                    &counts,
                );
                let fm = transition_objective(
                    &PeriodicLogitTransition::new(tr.dims(), minus).unwrap(),
                    &counts,
                );
                let fd = (fp - fm) / (2.0 * h);
                assert!(
                    (fd - g[idx]).abs() <= 1e-4 * g[idx].abs().max(1.0),
                    "{fd} vs {}",
                    g[idx]
                );
            }
        }
    }

    #[test]
    fn maximizer_reaches_stationary_point_and_never_decreases() {
        for seed in 0..10 {
            let (tr, counts) = random_instance(100 + seed, 3, 5, 1);
            let before = transition_objective(&tr, &counts);
            let out = maximize(&tr, &counts, 200);
            let after = transition_objective(&out, &counts);
            assert!(after >= before);
            let g = transition_gradient(&out, &counts);
            let gnorm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!(gnorm < 1e-6, "gradient norm {gnorm}");
        }
    }

    #[test]
    fn saturated_counts_recover_the_generating_matrices() {
        // Counts proportional to Q(p) itself: the maximizer is the generator.
        let (tr, _) = random_instance(7, 3, 5, 2);
        let dims = tr.dims();
        let counts: Vec<f64> = (1..=dims.period)
            .flat_map(|t| tr.transition_entries(t).into_iter().map(|q| 1000.0 * q))
            .collect();
        let counts = TransitionCounts::new(dims, counts);
        let fitted = maximize(&PeriodicLogitTransition::zeros(dims), &counts, 200);
        for (a, b) in fitted.beta().iter().zip(tr.beta()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn gradient_vanishes_at_the_maximizer_fixed_point() {
        let (tr, _) = random_instance(9, 2, 4, 1);
        let dims = tr.dims();
        let counts: Vec<f64> = (1..=dims.period)
            .flat_map(|t| tr.transition_entries(t).into_iter().map(|q| 50.0 * q))
            .collect();
        let counts = TransitionCounts::new(dims, counts);
        let out = maximize(&tr, &counts, 200);
        for (a, b) in out.beta().iter().zip(tr.beta()) {
            assert!((a - b).abs() < 1e-8);
        }
    }
}
