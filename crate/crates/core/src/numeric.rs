//! Small numerical helpers shared across modules.

use std::f64::consts::PI;

/// `log(Σ exp(x_i))`, returning `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let s: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    max + s.ln()
}

/// Pairwise variant for two terms.
#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Reduce a 1-based time to its phase in `1..=period`.
#[inline]
pub fn phase_of(t: usize, period: usize) -> usize {
    debug_assert!(period >= 1);
    (t + period - 1) % period + 1
}

/// Trigonometric regressors `(1, cos(2πt/T), sin(2πt/T), …, cos(2πdt/T), sin(2πdt/T))`.
///
/// `t` is reduced to its phase first, so the result is bitwise periodic.
pub fn trig_basis(t: usize, period: usize, degree: usize) -> Vec<f64> {
    let mut z = Vec::with_capacity(2 * degree + 1);
    z.push(1.0);
    let p = phase_of(t, period) as f64;
    for l in 1..=degree {
        let angle = 2.0 * PI * (l as f64) * p / period as f64;
        z.push(angle.cos());
        z.push(angle.sin());
    }
    z
}

/// Numerically stable softmax of `logits` into `out`.
pub fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = (z - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// All permutations of `0..n` in lexicographic order, identity first.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut current: Vec<usize> = (0..n).collect();
    let mut out = vec![current.clone()];
    if n < 2 {
        return out;
    }
    loop {
        // next lexicographic permutation
        let Some(i) = (0..n - 1).rev().find(|&i| current[i] < current[i + 1]) else {
            return out;
        };
        let j = (i + 1..n).rev().find(|&j| current[j] > current[i]).unwrap();
        current.swap(i, j);
        current[i + 1..].reverse();
        out.push(current.clone());
    }
}

/// Inverse-ECDF quantile of sorted data: the smallest `x_(i)` with `i/n >= p`.
pub fn quantile_sorted_inverse_ecdf(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let n = sorted.len();
    let rank = (p * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// Linear-interpolation (type 7) quantile of sorted data.
pub fn quantile_sorted_linear(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}
