use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{
    check_simplex, draw_index, periodic_offset, periodic_regressors, phase_index, EmissionModel,
    LawComponent, MStepOutcome, DEGENERATE_WEIGHT,
};
use crate::error::{Result, ShmmError};
use crate::numeric::log_sum_exp;

fn default_variance_floor() -> f64 {
    1e-6
}

/// Gaussian mixture per state with a periodic mean offset:
/// `ν_{k,t} = Σ_m p_km N(μ_km + s_k(t), σ²_km)` where `s_k` is a trigonometric
/// polynomial of degree `degree` with zero constant term and coefficients
/// `delta[k] = (cos 1, sin 1, …)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPeriodicMean {
    pub period: usize,
    pub degree: usize,
    pub weights: Vec<Vec<f64>>,
    pub means: Vec<Vec<f64>>,
    pub delta: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
    #[serde(default = "default_variance_floor")]
    pub variance_floor: f64,
}

impl GaussianPeriodicMean {
    pub fn new(
        period: usize,
        degree: usize,
        weights: Vec<Vec<f64>>,
        means: Vec<Vec<f64>>,
        delta: Vec<Vec<f64>>,
        variances: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let g = Self {
            period,
            degree,
            weights,
            means,
            delta,
            variances,
            variance_floor: default_variance_floor(),
        };
        g.validate()?;
        Ok(g)
    }

    pub fn with_variance_floor(mut self, floor: f64) -> Self {
        self.variance_floor = floor;
        self
    }

    pub fn components(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    /// Periodic mean offset `s_k(t)`.
    pub fn offset(&self, k: usize, t: usize) -> f64 {
        periodic_offset(&self.delta[k], t, self.period)
    }

    /// `s_k(p+1)` for every phase `p` and state `k`, phase-major.
    fn offsets_by_phase(&self) -> Vec<f64> {
        let k = self.states();
        let mut out = Vec::with_capacity(self.period * k);
        for p in 0..self.period {
            for s in 0..k {
                out.push(self.offset(s, p + 1));
            }
        }
        out
    }

    fn component_log_terms(&self, k: usize, offset: f64, y: f64, out: &mut [f64]) {
        for (m, o) in out.iter_mut().enumerate() {
            let var = self.variances[k][m];
            let r = y - self.means[k][m] - offset;
            *o = self.weights[k][m].ln()
                - 0.5 * (2.0 * std::f64::consts::PI * var).ln()
                - 0.5 * r * r / var;
        }
    }

    /// `Σ_i w_i log f_{k,t_i}(y_i)` for a single state.
    fn state_objective(&self, k: usize, obs: &[f64], w: &[f64]) -> f64 {
        let offsets: Vec<f64> = (0..self.period).map(|p| self.offset(k, p + 1)).collect();
        let mut terms = vec![0.0; self.components()];
        obs.iter()
            .zip(w)
            .enumerate()
            .filter(|(_, (_, &wi))| wi > 0.0)
            .map(|(i, (&y, &wi))| {
                self.component_log_terms(k, offsets[phase_index(i, self.period)], y, &mut terms);
                wi * log_sum_exp(&terms)
            })
            .sum()
    }

    fn update_state(&self, k: usize, obs: &[f64], w: &[f64]) -> Option<StateParams> {
        let m_count = self.components();
        let nreg = 2 * self.degree;
        let total: f64 = w.iter().sum();
        if total < DEGENERATE_WEIGHT {
            return None;
        }
        let offsets: Vec<f64> = (0..self.period).map(|p| self.offset(k, p + 1)).collect();
        let regressors: Vec<Vec<f64>> = (0..self.period)
            .map(|p| periodic_regressors(p + 1, self.period, self.degree))
            .collect();

        // Inner responsibilities r_im = w_i P(component m | y_i, state k).
        let mut resp = vec![0.0; obs.len() * m_count];
        let mut terms = vec![0.0; m_count];
        for (i, (&y, &wi)) in obs.iter().zip(w).enumerate() {
            if wi <= 0.0 {
                continue;
            }
            self.component_log_terms(k, offsets[phase_index(i, self.period)], y, &mut terms);
            let lse = log_sum_exp(&terms);
            if !lse.is_finite() {
                continue;
            }
            for m in 0..m_count {
                resp[i * m_count + m] = wi * (terms[m] - lse).exp();
            }
        }
        let comp_mass: Vec<f64> = (0..m_count)
            .map(|m| (0..obs.len()).map(|i| resp[i * m_count + m]).sum())
            .collect();
        let weights: Vec<f64> = comp_mass.iter().map(|r| r / total).collect();

        // Weighted least squares for (μ_k1..μ_kM, δ_k) at the current variances.
        let active: Vec<usize> = (0..m_count)
            .filter(|&m| comp_mass[m] > 1e-12 * total)
            .collect();
        let dim = active.len() + nreg;
        let mut a = DMatrix::<f64>::zeros(dim, dim);
        let mut b = DVector::<f64>::zeros(dim);
        for (i, &y) in obs.iter().enumerate() {
            let z = &regressors[phase_index(i, self.period)];
            for (ai, &m) in active.iter().enumerate() {
                let omega = resp[i * m_count + m] / self.variances[k][m];
                if omega == 0.0 {
                    continue;
                }
                a[(ai, ai)] += omega;
                b[ai] += omega * y;
                for (c, &zc) in z.iter().enumerate() {
                    let col = active.len() + c;
                    a[(ai, col)] += omega * zc;
                    b[col] += omega * zc * y;
                    for (c2, &zc2) in z.iter().enumerate().skip(c) {
                        a[(col, active.len() + c2)] += omega * zc * zc2;
                    }
                }
            }
        }
        // symmetrize the upper triangle
        for r in 0..dim {
            for c in 0..r {
                a[(r, c)] = a[(c, r)];
            }
        }
        let theta = solve_symmetric(a, b)?;
        let mut means = self.means[k].clone();
        for (ai, &m) in active.iter().enumerate() {
            means[m] = theta[ai];
        }
        let delta: Vec<f64> = (0..nreg).map(|c| theta[active.len() + c]).collect();

        let mut variances = self.variances[k].clone();
        for &m in &active {
            let mut ss = 0.0;
            for (i, &y) in obs.iter().enumerate() {
                let r = resp[i * m_count + m];
                if r == 0.0 {
                    continue;
                }
                let z = &regressors[phase_index(i, self.period)];
                let fitted = means[m] + delta.iter().zip(z).map(|(d, z)| d * z).sum::<f64>();
                ss += r * (y - fitted).powi(2);
            }
            variances[m] = (ss / comp_mass[m]).max(self.variance_floor);
        }
        Some(StateParams {
            weights,
            means,
            delta,
            variances,
        })
    }

    /// Sort mixture components within each state by variance, then mean.
    fn canonicalize_state(&mut self, k: usize) {
        let m = self.components();
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| {
            self.variances[k][a]
                .total_cmp(&self.variances[k][b])
                .then(self.means[k][a].total_cmp(&self.means[k][b]))
        });
        self.weights[k] = order.iter().map(|&i| self.weights[k][i]).collect();
        self.means[k] = order.iter().map(|&i| self.means[k][i]).collect();
        self.variances[k] = order.iter().map(|&i| self.variances[k][i]).collect();
    }
}

struct StateParams {
    weights: Vec<f64>,
    means: Vec<f64>,
    delta: Vec<f64>,
    variances: Vec<f64>,
}

/// Solve a symmetric positive semi-definite system, falling back to a
/// truncated-SVD least-squares solution when Cholesky fails.
fn solve_symmetric(a: DMatrix<f64>, b: DVector<f64>) -> Option<DVector<f64>> {
    if a.nrows() == 0 {
        return Some(b);
    }
    if let Some(ch) = a.clone().cholesky() {
        let x = ch.solve(&b);
        if x.iter().all(|v| v.is_finite()) {
            return Some(x);
        }
    }
    let svd = a.svd(true, true);
    let eps = svd.singular_values.max() * 1e-12;
    svd.solve(&b, eps)
        .ok()
        .filter(|x| x.iter().all(|v| v.is_finite()))
}

impl EmissionModel for GaussianPeriodicMean {
    fn states(&self) -> usize {
        self.weights.len()
    }

    fn period(&self) -> usize {
        self.period
    }

    fn log_density(&self, k: usize, t: usize, y: f64) -> Result<f64> {
        if !y.is_finite() {
            return Err(ShmmError::Domain { index: 0, value: y });
        }
        let mut terms = vec![0.0; self.components()];
        self.component_log_terms(k, self.offset(k, t), y, &mut terms);
        Ok(log_sum_exp(&terms))
    }

    fn log_density_table(&self, obs: &[f64]) -> Result<Vec<f64>> {
        let k = self.states();
        let offsets = self.offsets_by_phase();
        let mut terms = vec![0.0; self.components()];
        let mut out = Vec::with_capacity(obs.len() * k);
        for (i, &y) in obs.iter().enumerate() {
            if !y.is_finite() {
                return Err(ShmmError::Domain { index: i, value: y });
            }
            let p = phase_index(i, self.period);
            for s in 0..k {
                self.component_log_terms(s, offsets[p * k + s], y, &mut terms);
                out.push(log_sum_exp(&terms));
            }
        }
        Ok(out)
    }

    fn sample<R: Rng + ?Sized>(&self, k: usize, t: usize, rng: &mut R) -> f64 {
        let m = draw_index(&self.weights[k], rng);
        let z: f64 = rng.sample(StandardNormal);
        self.means[k][m] + self.offset(k, t) + self.variances[k][m].sqrt() * z
    }

    fn weighted_mstep(&self, obs: &[f64], weights: &[f64]) -> Result<MStepOutcome<Self>> {
        let kc = self.states();
        check_weights(obs, weights, kc)?;
        let mut next = self.clone();
        let mut flagged = Vec::new();
        for k in 0..kc {
            let w: Vec<f64> = (0..obs.len()).map(|i| weights[i * kc + k]).collect();
            let Some(cand) = self.update_state(k, obs, &w) else {
                flagged.push(k);
                continue;
            };
            let mut trial = self.clone();
            trial.weights[k] = cand.weights;
            trial.means[k] = cand.means;
            trial.delta[k] = cand.delta;
            trial.variances[k] = cand.variances;
            trial.canonicalize_state(k);
            if trial.state_objective(k, obs, &w) >= self.state_objective(k, obs, &w) {
                next.weights[k] = trial.weights[k].clone();
                next.means[k] = trial.means[k].clone();
                next.delta[k] = trial.delta[k].clone();
                next.variances[k] = trial.variances[k].clone();
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
        let offset = self.offset(k, t);
        (0..self.components())
            .map(|m| LawComponent::Normal {
                weight: self.weights[k][m],
                mean: self.means[k][m] + offset,
                sd: self.variances[k][m].sqrt(),
            })
            .collect()
    }

    fn state_parameters(&self, k: usize) -> Vec<f64> {
        let mut v = self.weights[k].clone();
        v.extend(&self.means[k]);
        v.extend(&self.delta[k]);
        v.extend(&self.variances[k]);
        v
    }

    fn permuted(&self, perm: &[usize]) -> Self {
        let pick = |v: &Vec<Vec<f64>>| perm.iter().map(|&p| v[p].clone()).collect();
        Self {
            period: self.period,
            degree: self.degree,
            weights: pick(&self.weights),
            means: pick(&self.means),
            delta: pick(&self.delta),
            variances: pick(&self.variances),
            variance_floor: self.variance_floor,
        }
    }

    fn validate(&self) -> Result<()> {
        let k = self.states();
        let m = self.components();
        if k == 0 || m == 0 || self.period == 0 {
            return Err(ShmmError::InvalidModel(
                "gaussian family needs at least one state, component and period".into(),
            ));
        }
        if self.means.len() != k || self.variances.len() != k || self.delta.len() != k {
            return Err(ShmmError::InvalidModel(
                "gaussian parameter blocks disagree on K".into(),
            ));
        }
        for s in 0..k {
            check_simplex(&self.weights[s], "gaussian mixture weights")?;
            if self.weights[s].len() != m
                || self.means[s].len() != m
                || self.variances[s].len() != m
            {
                return Err(ShmmError::InvalidModel(
                    "gaussian parameter blocks disagree on M".into(),
                ));
            }
            if self.delta[s].len() != 2 * self.degree {
                return Err(ShmmError::InvalidModel(format!(
                    "delta for state {} has {} coefficients, expected {}",
                    s + 1,
                    self.delta[s].len(),
                    2 * self.degree
                )));
            }
            if self.means[s]
                .iter()
                .chain(&self.delta[s])
                .any(|v| !v.is_finite())
            {
                return Err(ShmmError::InvalidModel(
                    "gaussian means must be finite".into(),
                ));
            }
            if self.variances[s]
                .iter()
                .any(|&v| !v.is_finite() || v < self.variance_floor)
            {
                return Err(ShmmError::InvalidModel(format!(
                    "gaussian variances must be finite and >= floor {}",
                    self.variance_floor
                )));
            }
        }
        Ok(())
    }
}

pub(super) fn check_weights(obs: &[f64], weights: &[f64], k: usize) -> Result<()> {
    if weights.len() != obs.len() * k {
        return Err(ShmmError::InvalidArgument(format!(
            "weights have {} entries, expected n*K = {}",
            weights.len(),
            obs.len() * k
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emissions::test_support::integrate;
    use crate::rng::stream_rng;

    fn single(
        period: usize,
        degree: usize,
        mean: f64,
        delta: Vec<f64>,
        var: f64,
    ) -> GaussianPeriodicMean {
        GaussianPeriodicMean::new(
            period,
            degree,
            vec![vec![1.0]],
            vec![vec![mean]],
            vec![delta],
            vec![vec![var]],
        )
        .unwrap()
    }

    #[test]
    fn standard_normal_mode() {
        let g = single(4, 0, 0.0, vec![], 1.0);
        let v = g.log_density(0, 1, 0.0).unwrap();
        assert!((v + 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-15);
    }

    #[test]
    fn density_normalizes_and_is_periodic() {
        let g = GaussianPeriodicMean::new(
            10,
            1,
            vec![vec![0.3, 0.7]],
            vec![vec![-1.0, 2.0]],
            vec![vec![1.5, -0.5]],
            vec![vec![0.5, 2.0]],
        )
        .unwrap();
        for t in 1..=10 {
            let f = |y: f64| g.log_density(0, t, y).unwrap().exp();
            let mass = integrate(&f, -40.0, 40.0, 1e-11);
            assert!((mass - 1.0).abs() < 1e-6, "t={t} mass={mass}");
            assert_eq!(
                g.log_density(0, t, 0.3).unwrap(),
                g.log_density(0, t + 10, 0.3).unwrap()
            );
        }
    }

    #[test]
    fn sample_mean_matches_periodic_mean() {
        let g = single(12, 1, 1.0, vec![2.0, -1.0], 4.0);
        let mut rng = stream_rng(11, 0);
        let t = 3;
        let n = 100_000;
        let mean = (0..n).map(|_| g.sample(0, t, &mut rng)).sum::<f64>() / n as f64;
        let se = (4.0 / n as f64).sqrt();
        let want = 1.0 + g.offset(0, t);
        assert!((mean - want).abs() < 4.0 * se, "mean {mean} want {want}");
    }

    #[test]
    fn single_component_mstep_is_ordinary_least_squares() {
        // OLS oracle via explicit normal equations on (1, cos, sin).
        let period = 7;
        let obs: Vec<f64> = (0..50)
            .map(|i| ((i * 17 % 13) as f64) * 0.3 - 1.0)
            .collect();
        let g = single(period, 1, 0.0, vec![0.0, 0.0], 1.0);
        let w = vec![1.0; obs.len()];
        let out = g.weighted_mstep(&obs, &w).unwrap();
        assert!(out.flagged_states.is_empty());

        let x = DMatrix::from_fn(obs.len(), 3, |i, c| {
            crate::numeric::trig_basis(i + 1, period, 1)[c]
        });
        let y = DVector::from_vec(obs.clone());
        let beta = (x.transpose() * &x)
            .lu()
            .solve(&(x.transpose() * &y))
            .unwrap();
        let p = &out.params;
        assert!((p.means[0][0] - beta[0]).abs() < 1e-10);
        assert!((p.delta[0][0] - beta[1]).abs() < 1e-10);
        assert!((p.delta[0][1] - beta[2]).abs() < 1e-10);
        let resid = &y - &x * &beta;
        let var = resid.norm_squared() / obs.len() as f64;
        assert!((p.variances[0][0] - var).abs() < 1e-10);
    }

    #[test]
    fn constant_model_recovers_sample_moments() {
        let obs = [1.0, 2.0, 4.0, 7.0, 11.0];
        let g = single(1, 0, 0.0, vec![], 1.0);
        let out = g.weighted_mstep(&obs, &[1.0; 5]).unwrap().params;
        let mean = obs.iter().sum::<f64>() / 5.0;
        let var = obs.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / 5.0;
        assert!((out.means[0][0] - mean).abs() < 1e-12);
        assert!((out.variances[0][0] - var).abs() < 1e-12);
    }

    #[test]
    fn mstep_never_decreases_weighted_loglik() {
        let g = GaussianPeriodicMean::new(
            5,
            1,
            vec![vec![0.5, 0.5], vec![0.2, 0.8]],
            vec![vec![-1.0, 1.0], vec![3.0, 4.0]],
            vec![vec![0.1, 0.0], vec![0.0, 0.2]],
            vec![vec![1.0, 1.0], vec![0.5, 2.0]],
        )
        .unwrap();
        let mut rng = stream_rng(5, 1);
        let obs: Vec<f64> = (0..400).map(|i| g.sample(i % 2, i + 1, &mut rng)).collect();
        let weights: Vec<f64> = (0..400)
            .flat_map(|i| {
                let a = ((i * 7919) % 100) as f64 / 100.0;
                [a, 1.0 - a]
            })
            .collect();
        let mut cur = g;
        let mut prev = cur.weighted_loglik(&obs, &weights).unwrap();
        for _ in 0..10 {
            cur = cur.weighted_mstep(&obs, &weights).unwrap().params;
            let now = cur.weighted_loglik(&obs, &weights).unwrap();
            assert!(now >= prev - 1e-9, "{now} < {prev}");
            prev = now;
        }
    }

    #[test]
    fn degenerate_state_is_flagged_and_kept() {
        let g = GaussianPeriodicMean::new(
            1,
            0,
            vec![vec![1.0], vec![1.0]],
            vec![vec![0.0], vec![5.0]],
            vec![vec![], vec![]],
            vec![vec![1.0], vec![1.0]],
        )
        .unwrap();
        let obs = [0.1, -0.2, 0.3];
        let weights = [1.0, 0.0, 1.0, 0.0, 1.0, 0.0];
        let out = g.weighted_mstep(&obs, &weights).unwrap();
        assert_eq!(out.flagged_states, vec![1]);
        assert_eq!(out.params.means[1], vec![5.0]);
    }

    #[test]
    fn rejects_variance_below_floor() {
        let r = GaussianPeriodicMean::new(
            1,
            0,
            vec![vec![1.0]],
            vec![vec![0.0]],
            vec![vec![]],
            vec![vec![1e-9]],
        );
        assert!(r.is_err());
    }
}
