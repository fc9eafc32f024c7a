//! Low-order moments of three consecutive observations.

use nalgebra::{DMatrix, DVector};

use super::features::{feature_matrix, FeatureMap};
use crate::error::{Result, ShmmError};
use crate::model::SeasonalHMM;
use crate::numeric::phase_of;

/// Moments around phase `t`:
///
/// * `l_prev`, `l`, `l_next`: `E φ(Y_{t-1})`, `E φ(Y_t)`, `E φ(Y_{t+1})`;
/// * `n_mat`: `E φ(Y_t) φ(Y_{t+1})ᵀ`;
/// * `p_mat`: `E φ(Y_{t-1}) φ(Y_{t+1})ᵀ`;
/// * `m_slices[b]`: `E φ(Y_{t-1}) φ_b(Y_t) φ(Y_{t+1})ᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSet {
    pub t: usize,
    pub l_prev: DVector<f64>,
    pub l: DVector<f64>,
    pub l_next: DVector<f64>,
    pub n_mat: DMatrix<f64>,
    pub p_mat: DMatrix<f64>,
    pub m_slices: Vec<DMatrix<f64>>,
    /// Number of windows averaged; `None` for population moments.
    pub windows: Option<usize>,
}

impl MomentSet {
    pub fn features(&self) -> usize {
        self.l.len()
    }
}

/// Exact moments at phase `t` under the stationary regime of `model`.
pub fn population_moments(
    model: &SeasonalHMM,
    t: usize,
    features: &FeatureMap,
) -> Result<MomentSet> {
    let period = model.dims.period;
    let t = phase_of(t, period);
    let prev = phase_of(t + period - 1, period);
    let next = phase_of(t + 1, period);
    let marginals = model.phase_marginals()?;
    let pi_prev = &marginals[prev - 1];
    let pi_t = &marginals[t - 1];

    let o_prev = feature_matrix(&model.emissions, prev, features)?;
    let o_t = feature_matrix(&model.emissions, t, features)?;
    let o_next = feature_matrix(&model.emissions, next, features)?;
    let q_prev = model.transition.transition_matrix(prev);
    let q_t = model.transition.transition_matrix(t);

    let a = &o_prev * DMatrix::from_diagonal(pi_prev) * &q_prev;
    let c = &q_t * o_next.transpose();
    let pi_next = q_t.transpose() * pi_t;
    let m_slices = (0..features.len())
        .map(|b| &a * DMatrix::from_diagonal(&o_t.row(b).transpose()) * &c)
        .collect();
    Ok(MomentSet {
        t,
        l_prev: &o_prev * pi_prev,
        l: &o_t * pi_t,
        l_next: &o_next * pi_next,
        n_mat: &o_t * DMatrix::from_diagonal(pi_t) * &c,
        p_mat: &a * &c,
        m_slices,
        windows: None,
    })
}

/// Windows `(y_{i-1}, y_i, y_{i+1})` whose centre has phase `t`.
pub fn phase_windows(values: &[f64], period: usize, t: usize) -> Vec<[f64; 3]> {
    let t = phase_of(t, period);
    (1..values.len().saturating_sub(1))
        .filter(|&i| phase_of(i + 1, period) == t)
        .map(|i| [values[i - 1], values[i], values[i + 1]])
        .collect()
}

/// Sample averages of the feature products over the windows.
pub fn empirical_moments(
    windows: &[[f64; 3]],
    t: usize,
    features: &FeatureMap,
    states: usize,
) -> Result<MomentSet> {
    if windows.len() < states.max(1) {
        return Err(ShmmError::Data(format!(
            "{} windows at phase {t}; at least {} are needed",
            windows.len(),
            states.max(1)
        )));
    }
    let n = features.len();
    let mut l_prev = DVector::zeros(n);
    let mut l = DVector::zeros(n);
    let mut l_next = DVector::zeros(n);
    let mut n_mat = DMatrix::zeros(n, n);
    let mut p_mat = DMatrix::zeros(n, n);
    let mut m_slices = vec![DMatrix::zeros(n, n); n];
    let mut f0 = vec![0.0; n];
    let mut f1 = vec![0.0; n];
    let mut f2 = vec![0.0; n];
    for w in windows {
        features.eval_into(w[0], &mut f0);
        features.eval_into(w[1], &mut f1);
        features.eval_into(w[2], &mut f2);
        for a in 0..n {
            l_prev[a] += f0[a];
            l[a] += f1[a];
            l_next[a] += f2[a];
        }
        for c in 0..n {
            if f2[c] == 0.0 {
                continue;
            }
            for a in 0..n {
                n_mat[(a, c)] += f1[a] * f2[c];
                let pc = f0[a] * f2[c];
                p_mat[(a, c)] += pc;
                if pc != 0.0 {
                    for (b, slice) in m_slices.iter_mut().enumerate() {
                        slice[(a, c)] += pc * f1[b];
                    }
                }
            }
        }
    }
    let inv = 1.0 / windows.len() as f64;
    l_prev *= inv;
    l *= inv;
    l_next *= inv;
    n_mat *= inv;
    p_mat *= inv;
    m_slices.iter_mut().for_each(|m| *m *= inv);
    Ok(MomentSet {
        t,
        l_prev,
        l,
        l_next,
        n_mat,
        p_mat,
        m_slices,
        windows: Some(windows.len()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_window_gives_its_products() {
        let f = FeatureMap::exponential(vec![0.5, 1.0]).unwrap();
        let w = [[0.3, 1.2, 2.0]];
        let m = empirical_moments(&w, 1, &f, 1).unwrap();
        let p0 = f.eval(0.3);
        let p1 = f.eval(1.2);
        let p2 = f.eval(2.0);
        for a in 0..2 {
            assert!((m.l_prev[a] - p0[a]).abs() < 1e-15);
            for c in 0..2 {
                assert!((m.n_mat[(a, c)] - p1[a] * p2[c]).abs() < 1e-15);
                assert!((m.p_mat[(a, c)] - p0[a] * p2[c]).abs() < 1e-15);
                for b in 0..2 {
                    assert!((m.m_slices[b][(a, c)] - p0[a] * p1[b] * p2[c]).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn too_few_windows_is_a_data_error() {
        let f = FeatureMap::exponential(vec![0.5, 1.0]).unwrap();
        assert!(matches!(
            empirical_moments(&[[0.0, 1.0, 2.0]], 1, &f, 2),
            Err(ShmmError::Data(_))
        ));
    }

    #[test]
    fn windows_are_selected_by_centre_phase() {
        let v: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let w = phase_windows(&v, 3, 1);
        // centres at t = 4, 7 (t = 1 and 10 lack a neighbour)
        assert_eq!(w, vec![[2.0, 3.0, 4.0], [5.0, 6.0, 7.0]]);
    }
}
