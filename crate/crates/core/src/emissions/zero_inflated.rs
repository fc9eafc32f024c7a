use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use super::gaussian::check_weights;
use super::{
    check_simplex, draw_index, EmissionModel, LawComponent, MStepOutcome, DEGENERATE_WEIGHT,
};
use crate::error::{Result, ShmmError};
use crate::numeric::log_sum_exp;

/// Point mass at zero plus an exponential mixture, constant in time.
///
/// `weights[k]` has `M` entries; entry 0 is the dry mass `p_k1`. `rates[k]` has
/// `M - 1` entries for the exponential components, kept in increasing order.
/// The density is taken with respect to `δ_0 + Lebesgue(0, ∞)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroInflatedExp {
    pub period: usize,
    pub weights: Vec<Vec<f64>>,
    pub rates: Vec<Vec<f64>>,
}

impl ZeroInflatedExp {
    pub fn new(period: usize, weights: Vec<Vec<f64>>, rates: Vec<Vec<f64>>) -> Result<Self> {
        let z = Self {
            period,
            weights,
            rates,
        };
        z.validate()?;
        Ok(z)
    }

    /// `M`, counting the point mass.
    pub fn components(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    /// Mean of state `k`: `Σ_{m≥2} p_km / λ_km`.
    pub fn state_mean(&self, k: usize) -> f64 {
        self.rates[k]
            .iter()
            .zip(&self.weights[k][1..])
            .map(|(r, p)| p / r)
            .sum()
    }

    fn state_log_density(weights: &[f64], rates: &[f64], y: f64, terms: &mut [f64]) -> f64 {
        if y == 0.0 {
            return weights[0].ln();
        }
        for (m, t) in terms.iter_mut().enumerate() {
            *t = weights[m + 1].ln() + rates[m].ln() - rates[m] * y;
        }
        log_sum_exp(terms)
    }

    fn state_objective(weights: &[f64], rates: &[f64], obs: &[f64], w: &[f64]) -> f64 {
        let mut terms = vec![0.0; rates.len()];
        obs.iter()
            .zip(w)
            .filter(|(_, &wi)| wi > 0.0)
            .map(|(&y, &wi)| wi * Self::state_log_density(weights, rates, y, &mut terms))
            .sum()
    }

    fn update_state(&self, k: usize, obs: &[f64], w: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
        let m_count = self.components();
        let total: f64 = w.iter().sum();
        if total < DEGENERATE_WEIGHT {
            return None;
        }
        let mut mass = vec![0.0; m_count];
        let mut amount = vec![0.0; m_count];
        let mut terms = vec![0.0; m_count - 1];
        for (&y, &wi) in obs.iter().zip(w) {
            if wi <= 0.0 {
                continue;
            }
            if y == 0.0 {
                mass[0] += wi;
                continue;
            }
            for (m, t) in terms.iter_mut().enumerate() {
                *t = self.weights[k][m + 1].ln() + self.rates[k][m].ln() - self.rates[k][m] * y;
            }
            let lse = log_sum_exp(&terms);
            if !lse.is_finite() {
                continue;
            }
            for m in 0..m_count - 1 {
                let r = wi * (terms[m] - lse).exp();
                mass[m + 1] += r;
                amount[m + 1] += r * y;
            }
        }
        let weights = mass.iter().map(|r| r / total).collect();
        let rates = (1..m_count)
            .map(|m| {
                if mass[m] > 1e-12 * total && amount[m] > 0.0 {
                    mass[m] / amount[m]
                } else {
                    self.rates[k][m - 1]
                }
            })
            .collect();
        Some((weights, rates))
    }

    fn canonicalize_state(&mut self, k: usize) {
        let mut order: Vec<usize> = (0..self.rates[k].len()).collect();
        order.sort_by(|&a, &b| self.rates[k][a].total_cmp(&self.rates[k][b]));
        let wet: Vec<f64> = order.iter().map(|&i| self.weights[k][i + 1]).collect();
        self.weights[k].truncate(1);
        self.weights[k].extend(wet);
        self.rates[k] = order.iter().map(|&i| self.rates[k][i]).collect();
    }
}

impl EmissionModel for ZeroInflatedExp {
    fn states(&self) -> usize {
        self.weights.len()
    }

    fn period(&self) -> usize {
        self.period
    }

    fn log_density(&self, k: usize, _t: usize, y: f64) -> Result<f64> {
        if !(y >= 0.0) || !y.is_finite() {
            return Err(ShmmError::Domain { index: 0, value: y });
        }
        let mut terms = vec![0.0; self.rates[k].len()];
        Ok(Self::state_log_density(
            &self.weights[k],
            &self.rates[k],
            y,
            &mut terms,
        ))
    }

    fn sample<R: Rng + ?Sized>(&self, k: usize, _t: usize, rng: &mut R) -> f64 {
        let m = draw_index(&self.weights[k], rng);
        if m == 0 {
            return 0.0;
        }
        let e: f64 = rng.sample(Exp1);
        e / self.rates[k][m - 1]
    }

    fn weighted_mstep(&self, obs: &[f64], weights: &[f64]) -> Result<MStepOutcome<Self>> {
        let kc = self.states();
        check_weights(obs, weights, kc)?;
        if let Some((i, &y)) = obs.iter().enumerate().find(|(_, &y)| !(y >= 0.0)) {
            return Err(ShmmError::Domain { index: i, value: y });
        }
        let mut next = self.clone();
        let mut flagged = Vec::new();
        for k in 0..kc {
            let w: Vec<f64> = (0..obs.len()).map(|i| weights[i * kc + k]).collect();
            let Some((p, rates)) = self.update_state(k, obs, &w) else {
                flagged.push(k);
                continue;
            };
            let mut trial = self.clone();
            trial.weights[k] = p;
            trial.rates[k] = rates;
            trial.canonicalize_state(k);
            let old = Self::state_objective(&self.weights[k], &self.rates[k], obs, &w);
            let new = Self::state_objective(&trial.weights[k], &trial.rates[k], obs, &w);
            if new >= old {
                next.weights[k] = trial.weights[k].clone();
                next.rates[k] = trial.rates[k].clone();
            } else {
                flagged.push(k);
            }
        }
        Ok(MStepOutcome {
            params: next,
            flagged_states: flagged,
        })
    }

    fn law(&self, k: usize, _t: usize) -> Vec<LawComponent> {
        std::iter::once(LawComponent::Atom {
            weight: self.weights[k][0],
            at: 0.0,
        })
        .chain(
            self.rates[k]
                .iter()
                .zip(&self.weights[k][1..])
                .map(|(&rate, &weight)| LawComponent::Exponential { weight, rate }),
        )
        .collect()
    }

    fn state_parameters(&self, k: usize) -> Vec<f64> {
        let mut v = self.weights[k].clone();
        v.extend(&self.rates[k]);
        v
    }

    fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            period: self.period,
            weights: perm.iter().map(|&p| self.weights[p].clone()).collect(),
            rates: perm.iter().map(|&p| self.rates[p].clone()).collect(),
        }
    }

    fn validate(&self) -> Result<()> {
        let k = self.states();
        let m = self.components();
        if k == 0 || m < 1 || self.period == 0 {
            return Err(ShmmError::InvalidModel(
                "zero-inflated family needs at least one state and one component".into(),
            ));
        }
        if self.rates.len() != k {
            return Err(ShmmError::InvalidModel(
                "zero-inflated parameter blocks disagree on K".into(),
            ));
        }
        for s in 0..k {
            check_simplex(&self.weights[s], "zero-inflated weights")?;
            if self.weights[s].len() != m || self.rates[s].len() != m - 1 {
                return Err(ShmmError::InvalidModel(format!(
                    "state {} needs {m} weights and {} rates",
                    s + 1,
                    m - 1
                )));
            }
            if self.rates[s].iter().any(|&r| !(r > 0.0) || !r.is_finite()) {
                return Err(ShmmError::InvalidModel(
                    "zero-inflated rates must be positive".into(),
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    fn precip_like() -> ZeroInflatedExp {
        ZeroInflatedExp::new(
            365,
            vec![
                vec![0.983, 0.003, 0.014],
                vec![0.749, 0.025, 0.226],
                vec![0.033, 0.258, 0.709],
                vec![0.029, 0.059, 0.912],
            ],
            vec![
                vec![3.455, 3.455],
                vec![1.162, 1.825],
                vec![0.481, 2.330],
                vec![0.086, 0.214],
            ],
        )
        .unwrap()
    }

    #[test]
    fn dry_day_log_density_is_log_dry_mass() {
        let z = precip_like();
        assert_eq!(z.log_density(0, 1, 0.0).unwrap(), 0.983f64.ln());
        assert!(z.log_density(0, 1, -1.0).is_err());
    }

    #[test]
    fn normalization_is_analytic() {
        // p_k1 + Σ_m p_km ∫ λ e^{-λy} dy = Σ p = 1
        let z = precip_like();
        for k in 0..4 {
            let cont: f64 = z.rates[k]
                .iter()
                .zip(&z.weights[k][1..])
                .map(|(r, p)| p * (1.0 - (-r * f64::MAX.sqrt()).exp()))
                .sum();
            assert!((z.weights[k][0] + cont - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn all_dry_mass_always_samples_zero() {
        let z = ZeroInflatedExp::new(1, vec![vec![1.0, 0.0]], vec![vec![1.0]]).unwrap();
        let mut rng = stream_rng(0, 0);
        assert!((0..1000).all(|_| z.sample(0, 1, &mut rng) == 0.0));
    }

    #[test]
    fn all_zero_data_gives_full_dry_mass() {
        let z = ZeroInflatedExp::new(
            1,
            vec![vec![0.5, 0.5], vec![0.5, 0.5]],
            vec![vec![1.0], vec![1.0]],
        )
        .unwrap();
        let obs = [0.0; 6];
        let w: Vec<f64> = (0..6).flat_map(|_| [1.0, 0.0]).collect();
        let out = z.weighted_mstep(&obs, &w).unwrap();
        assert_eq!(out.params.weights[0], vec![1.0, 0.0]);
        assert_eq!(out.flagged_states, vec![1]);
    }

    #[test]
    fn single_component_rate_maximizes_over_grid() {
        // Grid-search oracle over λ for the weighted objective.
        let z = ZeroInflatedExp::new(1, vec![vec![0.5, 0.5]], vec![vec![1.0]]).unwrap();
        let mut rng = stream_rng(4, 4);
        let truth = ZeroInflatedExp::new(1, vec![vec![0.3, 0.7]], vec![vec![0.5]]).unwrap();
        let obs: Vec<f64> = (0..2000).map(|_| truth.sample(0, 1, &mut rng)).collect();
        let w = vec![1.0; obs.len()];
        let out = z.weighted_mstep(&obs, &w).unwrap().params;
        let lambda = out.rates[0][0];
        let wet: Vec<f64> = obs.iter().copied().filter(|&y| y > 0.0).collect();
        assert!((lambda - wet.len() as f64 / wet.iter().sum::<f64>()).abs() < 1e-12);
        let obj = |l: f64| ZeroInflatedExp::state_objective(&out.weights[0], &[l], &obs, &w);
        let best = (1..4000)
            .map(|i| i as f64 * 0.0005)
            .max_by(|a, b| obj(*a).total_cmp(&obj(*b)))
            .unwrap();
        assert!((best - lambda).abs() <= 0.0005);
        assert!(obj(lambda) >= obj(best));
        let before = z.weighted_loglik(&obs, &w).unwrap();
        let after = out.weighted_loglik(&obs, &w).unwrap();
        assert!(after > before);
    }

    #[test]
    fn rates_stay_sorted() {
        let z = ZeroInflatedExp::new(1, vec![vec![0.2, 0.4, 0.4]], vec![vec![3.0, 0.3]]).unwrap();
        let mut rng = stream_rng(8, 8);
        let obs: Vec<f64> = (0..500).map(|_| z.sample(0, 1, &mut rng)).collect();
        let out = z.weighted_mstep(&obs, &vec![1.0; 500]).unwrap().params;
        assert!(out.rates[0][0] <= out.rates[0][1]);
    }
}
