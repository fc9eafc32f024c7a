use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use super::gaussian::check_weights;
use super::{
    check_simplex, draw_index, periodic_offset, periodic_regressors, phase_index, EmissionModel,
    LawComponent, MStepOutcome, DEGENERATE_WEIGHT,
};
use crate::error::{Result, ShmmError};
use crate::numeric::log_sum_exp;

fn default_scale_floor() -> f64 {
    1e-3
}

const SCALE_STEPS: usize = 25;

/// Exponential mixture per state with a periodic scale factor:
/// `f_{k,t}(y) = Σ_m p_km (λ_km / s_k(t)) exp(-λ_km y / s_k(t))` for `y ≥ 0`,
/// with `s_k(t) = 1 + σ_k(t)` and `σ_k` a zero-constant trigonometric
/// polynomial with coefficients `delta[k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpPeriodicScale {
    pub period: usize,
    pub degree: usize,
    pub weights: Vec<Vec<f64>>,
    pub rates: Vec<Vec<f64>>,
    pub delta: Vec<Vec<f64>>,
    #[serde(default = "default_scale_floor")]
    pub scale_floor: f64,
}

impl ExpPeriodicScale {
    pub fn new(
        period: usize,
        degree: usize,
        weights: Vec<Vec<f64>>,
        rates: Vec<Vec<f64>>,
        delta: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let e = Self {
            period,
            degree,
            weights,
            rates,
            delta,
            scale_floor: default_scale_floor(),
        };
        e.validate()?;
        Ok(e)
    }

    pub fn with_scale_floor(mut self, floor: f64) -> Self {
        self.scale_floor = floor;
        self
    }

    pub fn components(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    /// `1 + σ_k(t)`.
    pub fn scale(&self, k: usize, t: usize) -> f64 {
        1.0 + periodic_offset(&self.delta[k], t, self.period)
    }

    fn scales_for(&self, delta: &[f64]) -> Vec<f64> {
        (0..self.period)
            .map(|p| 1.0 + periodic_offset(delta, p + 1, self.period))
            .collect()
    }

    fn log_terms(weights: &[f64], rates: &[f64], scale: f64, y: f64, out: &mut [f64]) {
        let ls = scale.ln();
        for (m, o) in out.iter_mut().enumerate() {
            *o = weights[m].ln() + rates[m].ln() - ls - rates[m] * y / scale;
        }
    }

    /// Weighted log-likelihood of state `k` as a function of its scale
    /// coefficients, at the current weights and rates.
    pub fn scale_objective(&self, k: usize, delta: &[f64], obs: &[f64], w: &[f64]) -> f64 {
        objective(
            &self.weights[k],
            &self.rates[k],
            &self.scales_for(delta),
            self.period,
            obs,
            w,
        )
    }

    /// Analytic gradient of [`Self::scale_objective`] with respect to `delta`.
    pub fn scale_gradient(&self, k: usize, delta: &[f64], obs: &[f64], w: &[f64]) -> Vec<f64> {
        self.scale_derivatives(&self.weights[k], &self.rates[k], delta, obs, w)
            .0
    }

    /// Gradient and a negative-definite-when-possible curvature matrix of the
    /// EM surrogate in `delta`.
    fn scale_derivatives(
        &self,
        weights: &[f64],
        rates: &[f64],
        delta: &[f64],
        obs: &[f64],
        w: &[f64],
    ) -> (Vec<f64>, DMatrix<f64>) {
        let nreg = delta.len();
        let scales = self.scales_for(delta);
        let regressors: Vec<Vec<f64>> = (0..self.period)
            .map(|p| periodic_regressors(p + 1, self.period, self.degree))
            .collect();
        let mut grad = vec![0.0; nreg];
        let mut hess = DMatrix::zeros(nreg, nreg);
        let mut terms = vec![0.0; rates.len()];
        for (i, (&y, &wi)) in obs.iter().zip(w).enumerate() {
            if wi <= 0.0 {
                continue;
            }
            let p = phase_index(i, self.period);
            let s = scales[p];
            Self::log_terms(weights, rates, s, y, &mut terms);
            let lse = log_sum_exp(&terms);
            if !lse.is_finite() {
                continue;
            }
            // a = Σ_m r_im = w_i, b = Σ_m r_im λ_m y_i
            let b: f64 = terms
                .iter()
                .zip(rates)
                .map(|(t, r)| wi * (t - lse).exp() * r * y)
                .sum();
            let d1 = -wi / s + b / (s * s);
            let d2 = wi / (s * s) - 2.0 * b / (s * s * s);
            let z = &regressors[p];
            for c in 0..nreg {
                grad[c] += d1 * z[c];
                for c2 in 0..nreg {
                    hess[(c, c2)] += d2 * z[c] * z[c2];
                }
            }
        }
        (grad, hess)
    }

    fn feasible(&self, delta: &[f64]) -> bool {
        self.scales_for(delta)
            .iter()
            .all(|&s| s.is_finite() && s >= self.scale_floor)
    }

    fn update_state(
        &self,
        k: usize,
        obs: &[f64],
        w: &[f64],
    ) -> Option<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let m_count = self.components();
        let total: f64 = w.iter().sum();
        if total < DEGENERATE_WEIGHT {
            return None;
        }
        let scales = self.scales_for(&self.delta[k]);
        let mut mass = vec![0.0; m_count];
        let mut scaled_sum = vec![0.0; m_count];
        let mut terms = vec![0.0; m_count];
        for (i, (&y, &wi)) in obs.iter().zip(w).enumerate() {
            if wi <= 0.0 {
                continue;
            }
            let s = scales[phase_index(i, self.period)];
            Self::log_terms(&self.weights[k], &self.rates[k], s, y, &mut terms);
            let lse = log_sum_exp(&terms);
            if !lse.is_finite() {
                continue;
            }
            for m in 0..m_count {
                let r = wi * (terms[m] - lse).exp();
                mass[m] += r;
                scaled_sum[m] += r * y / s;
            }
        }
        let weights: Vec<f64> = mass.iter().map(|r| r / total).collect();
        let rates: Vec<f64> = (0..m_count)
            .map(|m| {
                if mass[m] > 1e-12 * total && scaled_sum[m] > 0.0 {
                    mass[m] / scaled_sum[m]
                } else {
                    self.rates[k][m]
                }
            })
            .collect();

        // Damped Newton / gradient ascent on the scale coefficients with
        // backtracking on the weighted log-likelihood.
        let mut delta = self.delta[k].clone();
        if !delta.is_empty() {
            let scales_of = |d: &[f64]| self.scales_for(d);
            let mut current = objective(&weights, &rates, &scales_of(&delta), self.period, obs, w);
            for _ in 0..SCALE_STEPS {
                let (grad, hess) = self.scale_derivatives(&weights, &rates, &delta, obs, w);
                let gnorm = grad.iter().map(|g| g.abs()).fold(0.0, f64::max);
                if gnorm < 1e-9 * (1.0 + total) {
                    break;
                }
                let g = DVector::from_vec(grad.clone());
                let direction = (-hess)
                    .cholesky()
                    .map(|ch| ch.solve(&g))
                    .filter(|d| d.iter().all(|v| v.is_finite()) && d.dot(&g) > 0.0)
                    .unwrap_or_else(|| g.clone() / (1.0 + total));
                let slope = direction.dot(&g);
                let mut step = 1.0;
                let mut improved = false;
                for _ in 0..60 {
                    let cand: Vec<f64> = delta
                        .iter()
                        .zip(direction.iter())
                        .map(|(d, dd)| d + step * dd)
                        .collect();
                    if self.feasible(&cand) {
                        let val =
                            objective(&weights, &rates, &scales_of(&cand), self.period, obs, w);
                        if val >= current + 1e-4 * step * slope {
                            delta = cand;
                            current = val;
                            improved = true;
                            break;
                        }
                    }
                    step *= 0.5;
                }
                if !improved {
                    break;
                }
            }
        }
        Some((weights, rates, delta))
    }

    fn canonicalize_state(&mut self, k: usize) {
        let mut order: Vec<usize> = (0..self.components()).collect();
        order.sort_by(|&a, &b| self.rates[k][a].total_cmp(&self.rates[k][b]));
        self.weights[k] = order.iter().map(|&i| self.weights[k][i]).collect();
        self.rates[k] = order.iter().map(|&i| self.rates[k][i]).collect();
    }
}

fn objective(
    weights: &[f64],
    rates: &[f64],
    scales: &[f64],
    period: usize,
    obs: &[f64],
    w: &[f64],
) -> f64 {
    let mut terms = vec![0.0; rates.len()];
    obs.iter()
        .zip(w)
        .enumerate()
        .filter(|(_, (_, &wi))| wi > 0.0)
        .map(|(i, (&y, &wi))| {
            ExpPeriodicScale::log_terms(
                weights,
                rates,
                scales[phase_index(i, period)],
                y,
                &mut terms,
            );
            wi * log_sum_exp(&terms)
        })
        .sum()
}

impl EmissionModel for ExpPeriodicScale {
    fn states(&self) -> usize {
        self.weights.len()
    }

    fn period(&self) -> usize {
        self.period
    }

    fn log_density(&self, k: usize, t: usize, y: f64) -> Result<f64> {
        if !(y >= 0.0) || !y.is_finite() {
            return Err(ShmmError::Domain { index: 0, value: y });
        }
        let mut terms = vec![0.0; self.components()];
        Self::log_terms(
            &self.weights[k],
            &self.rates[k],
            self.scale(k, t),
            y,
            &mut terms,
        );
        Ok(log_sum_exp(&terms))
    }

    fn log_density_table(&self, obs: &[f64]) -> Result<Vec<f64>> {
        let kc = self.states();
        let scales: Vec<Vec<f64>> = (0..kc).map(|k| self.scales_for(&self.delta[k])).collect();
        let mut terms = vec![0.0; self.components()];
        let mut out = Vec::with_capacity(obs.len() * kc);
        for (i, &y) in obs.iter().enumerate() {
            if !(y >= 0.0) || !y.is_finite() {
                return Err(ShmmError::Domain { index: i, value: y });
            }
            let p = phase_index(i, self.period);
            for k in 0..kc {
                Self::log_terms(
                    &self.weights[k],
                    &self.rates[k],
                    scales[k][p],
                    y,
                    &mut terms,
                );
                out.push(log_sum_exp(&terms));
            }
        }
        Ok(out)
    }

    fn sample<R: Rng + ?Sized>(&self, k: usize, t: usize, rng: &mut R) -> f64 {
        let m = draw_index(&self.weights[k], rng);
        let e: f64 = rng.sample(Exp1);
        e * self.scale(k, t) / self.rates[k][m]
    }

    fn weighted_mstep(&self, obs: &[f64], weights: &[f64]) -> Result<MStepOutcome<Self>> {
        let kc = self.states();
        check_weights(obs, weights, kc)?;
        let mut next = self.clone();
        let mut flagged = Vec::new();
        for k in 0..kc {
            let w: Vec<f64> = (0..obs.len()).map(|i| weights[i * kc + k]).collect();
            let Some((p, rates, delta)) = self.update_state(k, obs, &w) else {
                flagged.push(k);
                continue;
            };
            let mut trial = self.clone();
            trial.weights[k] = p;
            trial.rates[k] = rates;
            trial.delta[k] = delta;
            trial.canonicalize_state(k);
            let old = self.scale_objective(k, &self.delta[k], obs, &w);
            let new = trial.scale_objective(k, &trial.delta[k], obs, &w);
            if trial.feasible(&trial.delta[k]) && new >= old {
                next.weights[k] = trial.weights[k].clone();
                next.rates[k] = trial.rates[k].clone();
                next.delta[k] = trial.delta[k].clone();
            } else {
                flagged.push(k);
            }
        }
        Ok(MStepOutcome {
            params: next,
            flagged_states: flagged,
        })
    }

    fn law(&self, k: usize, t: usize) -> Vec<LawComponent> {
        let s = self.scale(k, t);
        (0..self.components())
            .map(|m| LawComponent::Exponential {
                weight: self.weights[k][m],
                rate: self.rates[k][m] / s,
            })
            .collect()
    }

    fn state_parameters(&self, k: usize) -> Vec<f64> {
        let mut v = self.weights[k].clone();
        v.extend(&self.rates[k]);
        v.extend(&self.delta[k]);
        v
    }

    fn permuted(&self, perm: &[usize]) -> Self {
        let pick = |v: &Vec<Vec<f64>>| perm.iter().map(|&p| v[p].clone()).collect();
        Self {
            period: self.period,
            degree: self.degree,
            weights: pick(&self.weights),
            rates: pick(&self.rates),
            delta: pick(&self.delta),
            scale_floor: self.scale_floor,
        }
    }

    fn validate(&self) -> Result<()> {
        let k = self.states();
        let m = self.components();
        if k == 0 || m == 0 || self.period == 0 {
            return Err(ShmmError::InvalidModel(
                "exponential family needs at least one state, component and period".into(),
            ));
        }
        if self.rates.len() != k || self.delta.len() != k {
            return Err(ShmmError::InvalidModel(
                "exponential parameter blocks disagree on K".into(),
            ));
        }
        for s in 0..k {
            check_simplex(&self.weights[s], "exponential mixture weights")?;
            if self.weights[s].len() != m || self.rates[s].len() != m {
                return Err(ShmmError::InvalidModel(
                    "exponential parameter blocks disagree on M".into(),
                ));
            }
            if self.rates[s].iter().any(|&r| !(r > 0.0) || !r.is_finite()) {
                return Err(ShmmError::InvalidModel(
                    "exponential rates must be positive".into(),
                ));
            }
            if self.delta[s].len() != 2 * self.degree {
                return Err(ShmmError::InvalidModel(format!(
                    "scale coefficients for state {} have length {}, expected {}",
                    s + 1,
                    self.delta[s].len(),
                    2 * self.degree
                )));
            }
            if !self.feasible(&self.delta[s]) {
                return Err(ShmmError::InvalidModel(format!(
                    "scale 1 + σ_{}(t) drops below the floor {}",
                    s + 1,
                    self.scale_floor
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emissions::test_support::integrate;
    use crate::rng::stream_rng;

    fn two_state() -> ExpPeriodicScale {
        ExpPeriodicScale::new(
            12,
            1,
            vec![vec![0.4, 0.6], vec![0.7, 0.3]],
            vec![vec![0.5, 3.0], vec![1.0, 4.0]],
            vec![vec![0.3, -0.2], vec![-0.4, 0.1]],
        )
        .unwrap()
    }

    #[test]
    fn unit_exponential_at_one() {
        let e =
            ExpPeriodicScale::new(3, 0, vec![vec![1.0]], vec![vec![1.0]], vec![vec![]]).unwrap();
        assert!((e.log_density(0, 2, 1.0).unwrap() + 1.0).abs() < 1e-15);
        assert!(e.log_density(0, 1, -0.5).is_err());
    }

    #[test]
    fn density_normalizes() {
        let e = two_state();
        for t in [1, 4, 9] {
            for k in 0..2 {
                let f = |y: f64| e.log_density(k, t, y).unwrap().exp();
                let mass = integrate(&f, 0.0, 60.0, 1e-11) + integrate(&f, 60.0, 400.0, 1e-11);
                assert!((mass - 1.0).abs() < 1e-6, "k={k} t={t} mass={mass}");
            }
        }
    }

    #[test]
    fn sample_mean_matches_scaled_exponential_mean() {
        let e = ExpPeriodicScale::new(
            12,
            1,
            vec![vec![1.0]],
            vec![vec![2.0]],
            vec![vec![0.5, 0.2]],
        )
        .unwrap();
        let t = 2;
        let mut rng = stream_rng(3, 9);
        let n = 100_000;
        let mean = (0..n).map(|_| e.sample(0, t, &mut rng)).sum::<f64>() / n as f64;
        let want = e.scale(0, t) / 2.0;
        let se = want / (n as f64).sqrt();
        assert!((mean - want).abs() < 4.0 * se, "{mean} vs {want}");
    }

    #[test]
    fn scale_gradient_matches_central_differences() {
        let e = two_state();
        let mut rng = stream_rng(17, 0);
        let obs: Vec<f64> = (0..300).map(|i| e.sample(i % 2, i + 1, &mut rng)).collect();
        let w: Vec<f64> = (0..300)
            .map(|i| 0.2 + 0.6 * ((i * 31 % 17) as f64 / 17.0))
            .collect();
        for k in 0..2 {
            let delta = vec![0.1, -0.15];
            let g = e.scale_gradient(k, &delta, &obs, &w);
            for c in 0..2 {
                let h = 1e-6;
                let mut up = delta.clone();
                up[c] += h;
                let mut dn = delta.clone();
                dn[c] -= h;
                let fd = (e.scale_objective(k, &up, &obs, &w)
                    - e.scale_objective(k, &dn, &obs, &w))
                    / (2.0 * h);
                assert!(
                    (g[c] - fd).abs() <= 1e-4 * fd.abs().max(1.0),
                    "k={k} c={c}: {} vs {fd}",
                    g[c]
                );
            }
        }
    }

    #[test]
    fn mstep_is_monotone_and_respects_floor() {
        let truth = two_state();
        let mut rng = stream_rng(21, 0);
        let obs: Vec<f64> = (0..600)
            .map(|i| truth.sample(i % 2, i + 1, &mut rng))
            .collect();
        let weights: Vec<f64> = (0..600)
            .flat_map(|i| if i % 2 == 0 { [0.9, 0.1] } else { [0.1, 0.9] })
            .collect();
        let mut cur = ExpPeriodicScale::new(
            12,
            1,
            vec![vec![0.5, 0.5], vec![0.5, 0.5]],
            vec![vec![1.0, 2.0], vec![1.0, 2.0]],
            vec![vec![0.0, 0.0], vec![0.0, 0.0]],
        )
        .unwrap();
        let mut prev = cur.weighted_loglik(&obs, &weights).unwrap();
        for _ in 0..15 {
            cur = cur.weighted_mstep(&obs, &weights).unwrap().params;
            cur.validate().unwrap();
            let now = cur.weighted_loglik(&obs, &weights).unwrap();
            assert!(now >= prev - 1e-9);
            prev = now;
            for k in 0..2 {
                assert!(cur.rates[k][0] <= cur.rates[k][1]);
            }
        }
    }

    #[test]
    fn scale_floor_is_enforced_at_construction() {
        let r = ExpPeriodicScale::new(
            4,
            1,
            vec![vec![1.0]],
            vec![vec![1.0]],
            vec![vec![-1.0, 0.0]],
        );
        assert!(r.is_err());
    }
}
