//! Feature maps `φ = (φ_1, …, φ_N)` and their expectations under emission laws.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::emissions::{EmissionModel, Emissions, LawComponent};
use crate::error::{Result, ShmmError};
use crate::model::SeasonalHMM;

const QUAD_ABS_TOL: f64 = 1e-12;
const QUAD_MAX_DEPTH: u32 = 60;

/// A finite family of bounded test functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureMap {
    /// Indicators of `(-∞, e_1], (e_1, e_2], …, (e_last, ∞)`; `N = edges + 1`.
    Histogram { edges: Vec<f64> },
    /// `e^{-s y}` for each `s`; bounded on the non-negative half line.
    Exponential { rates: Vec<f64> },
    /// `clamp(y, -clip, clip)^a` for `a = 0..=order`; `N = order + 1`.
    ClippedMoments { order: usize, clip: f64 },
}

impl FeatureMap {
    pub fn histogram(mut edges: Vec<f64>) -> Result<Self> {
        if edges.iter().any(|e| !e.is_finite()) {
            return Err(ShmmError::InvalidArgument(
                "histogram edges must be finite".into(),
            ));
        }
        edges.sort_by(f64::total_cmp);
        edges.dedup();
        Ok(FeatureMap::Histogram { edges })
    }

    /// `bins` bins with edges at the empirical quantiles of `values`; repeated
    /// quantiles (atoms) are merged, so fewer bins may result.
    pub fn histogram_from_data(values: &[f64], bins: usize) -> Result<Self> {
        if values.is_empty() || bins == 0 {
            return Err(ShmmError::InvalidArgument(
                "need data and at least one bin for quantile histogram edges".into(),
            ));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let edges = (1..bins)
            .map(|j| crate::numeric::quantile_sorted_linear(&sorted, j as f64 / bins as f64))
            .collect();
        Self::histogram(edges)
    }

    /// `bins` bins at the quantiles of the phase-averaged stationary marginal law
    /// of the observations.
    pub fn histogram_from_model(model: &SeasonalHMM, bins: usize) -> Result<Self> {
        let marginals = model.phase_marginals()?;
        let period = model.dims.period;
        let mut parts: Vec<(f64, LawComponent)> = Vec::new();
        for (ti, pi) in marginals.iter().enumerate() {
            for k in 0..model.dims.states {
                for c in model.emissions.law(k, ti + 1) {
                    parts.push((pi[k] / period as f64, c));
                }
            }
        }
        let cdf = |x: f64| -> f64 { parts.iter().map(|(w, c)| w * c.weight() * c.cdf(x)).sum() };
        let (mut lo, mut hi) = (-1.0, 1.0);
        while cdf(lo) > 1e-9 {
            lo *= 2.0;
        }
        while cdf(hi) < 1.0 - 1e-9 {
            hi *= 2.0;
        }
        let edges = (1..bins)
            .map(|j| {
                let target = j as f64 / bins as f64;
                let (mut a, mut b) = (lo, hi);
                for _ in 0..200 {
                    let m = 0.5 * (a + b);
                    if cdf(m) < target {
                        a = m;
                    } else {
                        b = m;
                    }
                }
                b
            })
            .collect();
        Self::histogram(edges)
    }

    pub fn exponential(rates: Vec<f64>) -> Result<Self> {
        if rates.is_empty() || rates.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(ShmmError::InvalidArgument(
                "exponential feature rates must be finite and non-negative".into(),
            ));
        }
        Ok(FeatureMap::Exponential { rates })
    }

    pub fn clipped_moments(order: usize, clip: f64) -> Result<Self> {
        if !(clip > 0.0) || !clip.is_finite() {
            return Err(ShmmError::InvalidArgument(
                "clip must be positive and finite".into(),
            ));
        }
        Ok(FeatureMap::ClippedMoments { order, clip })
    }

    /// Feature count `N`.
    pub fn len(&self) -> usize {
        match self {
            FeatureMap::Histogram { edges } => edges.len() + 1,
            FeatureMap::Exponential { rates } => rates.len(),
            FeatureMap::ClippedMoments { order, .. } => order + 1,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `φ(y)` written into `out` (length `N`).
    pub fn eval_into(&self, y: f64, out: &mut [f64]) {
        match self {
            FeatureMap::Histogram { edges } => {
                out.iter_mut().for_each(|o| *o = 0.0);
                let bin = edges.partition_point(|&e| e < y);
                out[bin] = 1.0;
            }
            FeatureMap::Exponential { rates } => {
                for (o, s) in out.iter_mut().zip(rates) {
                    *o = (-s * y).exp();
                }
            }
            FeatureMap::ClippedMoments { clip, .. } => {
                let c = y.clamp(-clip, *clip);
                let mut p = 1.0;
                for o in out.iter_mut() {
                    *o = p;
                    p *= c;
                }
            }
        }
    }

    pub fn eval(&self, y: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.eval_into(y, &mut out);
        out
    }

    /// `E[φ(Y)]` for `Y` distributed as a single law component (unweighted).
    pub fn component_expectation(&self, c: &LawComponent) -> Result<Vec<f64>> {
        match self {
            FeatureMap::Histogram { edges } => {
                let mut out = Vec::with_capacity(edges.len() + 1);
                let mut prev = 0.0;
                for &e in edges {
                    let f = c.cdf(e);
                    out.push(f - prev);
                    prev = f;
                }
                out.push(1.0 - prev);
                Ok(out)
            }
            FeatureMap::Exponential { rates } => Ok(rates
                .iter()
                .map(|&s| match *c {
                    LawComponent::Atom { at, .. } => (-s * at).exp(),
                    LawComponent::Exponential { rate, .. } => rate / (rate + s),
                    LawComponent::Normal { mean, sd, .. } => {
                        (-s * mean + 0.5 * s * s * sd * sd).exp()
                    }
                })
                .collect()),
            FeatureMap::ClippedMoments { order, clip } => {
                let n = order + 1;
                if let LawComponent::Atom { at, .. } = *c {
                    return Ok(self.eval(at));
                }
                let density = |y: f64| -> f64 {
                    match *c {
                        LawComponent::Exponential { rate, .. } => {
                            if y < 0.0 {
                                0.0
                            } else {
                                rate * (-rate * y).exp()
                            }
                        }
                        LawComponent::Normal { mean, sd, .. } => {
                            let z = (y - mean) / sd;
                            (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
                        }
                        LawComponent::Atom { .. } => unreachable!(),
                    }
                };
                let below = c.cdf(-clip);
                let above = 1.0 - c.cdf(*clip);
                // break points at the scale of the law so the quadrature sees its mass
                let (centre, width, start) = match *c {
                    LawComponent::Exponential { rate, .. } => (0.0, 1.0 / rate, 0.0),
                    LawComponent::Normal { mean, sd, .. } => (mean, sd, -40.0),
                    LawComponent::Atom { .. } => unreachable!(),
                };
                let mut cuts: Vec<f64> = (0..=80)
                    .map(|j| centre + width * (start + j as f64))
                    .filter(|x| *x > -clip && *x < *clip)
                    .collect();
                cuts.insert(0, (centre + width * start).max(-clip));
                cuts.push((centre + width * (start + 80.0)).min(*clip));
                cuts.dedup();
                let mut out = Vec::with_capacity(n);
                for a in 0..n {
                    let g = |y: f64| y.powi(a as i32) * density(y);
                    let mut inner = 0.0;
                    for w in cuts.windows(2) {
                        if w[1] > w[0] {
                            inner += adaptive_simpson(&g, w[0], w[1])?;
                        }
                    }
                    out.push(below * (-clip).powi(a as i32) + above * clip.powi(a as i32) + inner);
                }
                Ok(out)
            }
        }
    }
}

/// `O_t(a, k) = E[φ_a(Y_t) | X_t = k]`, an `N × K` matrix.
pub fn feature_matrix(
    emissions: &Emissions,
    t: usize,
    features: &FeatureMap,
) -> Result<DMatrix<f64>> {
    let k = emissions.states();
    let n = features.len();
    let mut o = DMatrix::zeros(n, k);
    for s in 0..k {
        for c in emissions.law(s, t) {
            let e = features.component_expectation(&c)?;
            for a in 0..n {
                o[(a, s)] += c.weight() * e[a];
            }
        }
    }
    Ok(o)
}

fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Result<f64> {
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        m: f64,
        fm: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> Option<f64> {
        let (lm, flm, left) = simpson(f, a, fa, m, fm);
        let (rm, frm, right) = simpson(f, m, fm, b, fb);
        let diff = left + right - whole;
        if diff.abs() <= 15.0 * tol {
            return Some(left + right + diff / 15.0);
        }
        if depth == 0 {
            return None;
        }
        Some(
            recurse(f, a, fa, m, fm, lm, flm, left, tol / 2.0, depth - 1)?
                + recurse(f, m, fm, b, fb, rm, frm, right, tol / 2.0, depth - 1)?,
        )
    }
    // split once so that symmetric integrands cannot fool the first estimate
    let (fa, fb) = (f(a), f(b));
    let mid = 0.5 * (a + b);
    let fmid = f(mid);
    let (m1, fm1, w1) = simpson(f, a, fa, mid, fmid);
    let (m2, fm2, w2) = simpson(f, mid, fmid, b, fb);
    let left = recurse(
        f,
        a,
        fa,
        mid,
        fmid,
        m1,
        fm1,
        w1,
        QUAD_ABS_TOL,
        QUAD_MAX_DEPTH,
    );
    let right = recurse(
        f,
        mid,
        fmid,
        b,
        fb,
        m2,
        fm2,
        w2,
        QUAD_ABS_TOL,
        QUAD_MAX_DEPTH,
    );
    match (left, right) {
        (Some(l), Some(r)) => Ok(l + r),
        _ => Err(ShmmError::Numerical(format!(
            "quadrature on [{a}, {b}] did not reach tolerance {QUAD_ABS_TOL}"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emissions::LawComponent;

    #[test]
    fn histogram_bins_are_right_closed() {
        let f = FeatureMap::histogram(vec![0.0, 1.0]).unwrap();
        assert_eq!(f.eval(0.0), vec![1.0, 0.0, 0.0]);
        assert_eq!(f.eval(0.5), vec![0.0, 1.0, 0.0]);
        assert_eq!(f.eval(1.0), vec![0.0, 1.0, 0.0]);
        assert_eq!(f.eval(7.0), vec![0.0, 0.0, 1.0]);
        let atom = LawComponent::Atom {
            weight: 1.0,
            at: 0.0,
        };
        assert_eq!(f.component_expectation(&atom).unwrap(), vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn exponential_features_match_laplace_transforms() {
        let f = FeatureMap::exponential(vec![0.0, 0.5, 2.0]).unwrap();
        let e = LawComponent::Exponential {
            weight: 1.0,
            rate: 2.0,
        };
        let v = f.component_expectation(&e).unwrap();
        assert_eq!(v, vec![1.0, 0.8, 0.5]);
        let n = LawComponent::Normal {
            weight: 1.0,
            mean: 1.0,
            sd: 2.0,
        };
        let v = f.component_expectation(&n).unwrap();
        // E e^{-sY} = exp(-s + 2 s^2)
        assert!((v[1] - (-0.5f64 + 0.5).exp()).abs() < 1e-15);
    }

    #[test]
    fn clipped_moments_of_standard_normal() {
        let f = FeatureMap::clipped_moments(4, 40.0).unwrap();
        let n = LawComponent::Normal {
            weight: 1.0,
            mean: 0.0,
            sd: 1.0,
        };
        let v = f.component_expectation(&n).unwrap();
        let expected = [1.0, 0.0, 1.0, 0.0, 3.0];
        for (a, b) in v.iter().zip(expected) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn clipped_moments_of_exponential_with_clipping() {
        // E[min(Y, c)] = (1 - e^{-λc}) / λ
        let f = FeatureMap::clipped_moments(1, 2.0).unwrap();
        let e = LawComponent::Exponential {
            weight: 1.0,
            rate: 0.7,
        };
        let v = f.component_expectation(&e).unwrap();
        assert!((v[1] - (1.0 - (-1.4f64).exp()) / 0.7).abs() < 1e-10);
    }
}
