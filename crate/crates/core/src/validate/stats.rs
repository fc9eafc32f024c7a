//! Per-day-of-year statistics and spell-length histograms.

use serde::{Deserialize, Serialize};

use crate::error::{Result, ShmmError};

/// Statistics of one day-of-year cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayStats {
    pub day: usize,
    pub count: usize,
    pub mean: f64,
    /// Unbiased sample variance.
    pub variance: f64,
    /// `m3 / m2^1.5` with biased central moments; `None` when `m2 = 0`.
    pub skewness: Option<f64>,
    /// `m4 / m2²` with biased central moments; `None` when `m2 = 0`.
    pub kurtosis: Option<f64>,
    /// Fraction of values above the dry threshold.
    pub wet_frequency: f64,
}

/// Statistics for each day of year `1..=period`, pooling the days within
/// `±window` (circularly) of each day.
pub fn daily_stats(
    values: &[f64],
    day_of_year: &[usize],
    period: usize,
    window: usize,
    threshold: f64,
) -> Result<Vec<DayStats>> {
    if values.len() != day_of_year.len() {
        return Err(ShmmError::InvalidArgument(
            "values and day-of-year index differ in length".into(),
        ));
    }
    let mut cells: Vec<Vec<f64>> = vec![Vec::new(); period];
    for (&v, &d) in values.iter().zip(day_of_year) {
        if d == 0 || d > period {
            return Err(ShmmError::InvalidArgument(format!(
                "day of year {d} outside 1..={period}"
            )));
        }
        cells[d - 1].push(v);
    }
    let w = window.min(period / 2) as isize;
    let mut short = Vec::new();
    let mut out = Vec::with_capacity(period);
    let mut pooled = Vec::new();
    for day in 0..period {
        pooled.clear();
        for off in -w..=w {
            let j = (day as isize + off).rem_euclid(period as isize) as usize;
            pooled.extend_from_slice(&cells[j]);
        }
        if pooled.len() < 2 {
            short.push(day + 1);
            continue;
        }
        out.push(cell_stats(day + 1, &pooled, threshold));
    }
    if !short.is_empty() {
        return Err(ShmmError::Data(format!(
            "fewer than 2 observations on day(s) of year {short:?}"
        )));
    }
    Ok(out)
}

fn cell_stats(day: usize, xs: &[f64], threshold: f64) -> DayStats {
    let n = xs.len() as f64;
    let wet = xs.iter().filter(|&&x| x > threshold).count() as f64 / n;
    if xs.iter().all(|&x| x == xs[0]) {
        return DayStats {
            day,
            count: xs.len(),
            mean: xs[0],
            variance: 0.0,
            skewness: None,
            kurtosis: None,
            wet_frequency: wet,
        };
    }
    let mean = xs.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &x in xs {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    let variance = m2 / (n - 1.0);
    let (m2, m3, m4) = (m2 / n, m3 / n, m4 / n);
    let (skewness, kurtosis) = if m2 > 0.0 {
        (Some(m3 / m2.powf(1.5)), Some(m4 / (m2 * m2)))
    } else {
        (None, None)
    };
    DayStats {
        day,
        count: xs.len(),
        mean,
        variance,
        skewness,
        kurtosis,
        wet_frequency: wet,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpellKind {
    /// Runs of values `≤ threshold`.
    Dry,
    /// Runs of values `> threshold`.
    Wet,
}

/// Counts of maximal runs by length: `counts[L - 1]` for `L ≤ max_len`, longer
/// runs in `overflow`. Runs touching either end are counted as they are.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpellHistogram {
    pub counts: Vec<u64>,
    pub overflow: u64,
}

impl SpellHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.overflow
    }

    /// Relative frequencies of lengths `1..=max_len` followed by the overflow.
    pub fn relative(&self) -> Vec<f64> {
        let total = self.total();
        self.counts
            .iter()
            .chain(std::iter::once(&self.overflow))
            .map(|&c| {
                if total == 0 {
                    0.0
                } else {
                    c as f64 / total as f64
                }
            })
            .collect()
    }
}

pub fn spell_distribution(
    values: &[f64],
    kind: SpellKind,
    threshold: f64,
    max_len: usize,
) -> SpellHistogram {
    let mut hist = SpellHistogram {
        counts: vec![0; max_len],
        overflow: 0,
    };
    let mut record = |len: usize| {
        if len == 0 {
            return;
        }
        if len <= max_len {
            hist.counts[len - 1] += 1;
        } else {
            hist.overflow += 1;
        }
    };
    let mut run = 0;
    for &v in values {
        let inside = match kind {
            SpellKind::Dry => v <= threshold,
            SpellKind::Wet => v > threshold,
        };
        if inside {
            run += 1;
        } else {
            record(run);
            run = 0;
        }
    }
    record(run);
    hist
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_enumerated_spells() {
        let v = [0.0, 1.0, 1.0, 0.0, 0.0, 0.0];
        let wet = spell_distribution(&v, SpellKind::Wet, 0.0, 5);
        assert_eq!(wet.counts, vec![0, 1, 0, 0, 0]);
        let dry = spell_distribution(&v, SpellKind::Dry, 0.0, 5);
        assert_eq!(dry.counts, vec![1, 0, 1, 0, 0]);
        let all = spell_distribution(&[2.0; 9], SpellKind::Wet, 0.0, 5);
        assert_eq!((all.counts.iter().sum::<u64>(), all.overflow), (0, 1));
        let all = spell_distribution(&[2.0; 9], SpellKind::Wet, 0.0, 9);
        assert_eq!(all.counts[8], 1);
    }

    #[test]
    fn constant_series() {
        let v = vec![0.3; 20];
        let d: Vec<usize> = (0..20).map(|i| i % 5 + 1).collect();
        let s = daily_stats(&v, &d, 5, 0, 0.0).unwrap();
        for c in &s {
            assert_eq!(c.mean, 0.3);
            assert_eq!(c.variance, 0.0);
            assert_eq!(c.wet_frequency, 1.0);
            assert!(c.skewness.is_none() && c.kurtosis.is_none());
        }
        let z = daily_stats(&[0.0; 20], &d, 5, 0, 0.0).unwrap();
        assert!(z.iter().all(|c| c.wet_frequency == 0.0));
    }

    #[test]
    fn matches_naive_formulas() {
        let xs = [1.0, 4.0, 0.0, 2.5, 7.0, 0.0];
        let s = &daily_stats(&xs, &[1; 6], 1, 0, 0.0).unwrap()[0];
        let n = 6.0;
        let mean = xs.iter().sum::<f64>() / n;
        let c = |p: i32| xs.iter().map(|x| (x - mean).powi(p)).sum::<f64>() / n;
        assert!((s.mean - mean).abs() < 1e-12);
        assert!((s.variance - c(2) * n / (n - 1.0)).abs() < 1e-12);
        assert!((s.skewness.unwrap() - c(3) / c(2).powf(1.5)).abs() < 1e-12);
        assert!((s.kurtosis.unwrap() - c(4) / c(2).powi(2)).abs() < 1e-12);
        assert!((s.wet_frequency - 4.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn window_pools_neighbouring_days() {
        let v = [1.0, 2.0, 3.0, 4.0];
        let d = [1, 2, 3, 4];
        assert!(daily_stats(&v, &d, 4, 0, 0.0).is_err());
        let s = daily_stats(&v, &d, 4, 1, 0.0).unwrap();
        // day 1 pools days 4, 1, 2
        assert!((s[0].mean - 7.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn short_days_are_listed() {
        match daily_stats(&[1.0, 2.0, 3.0], &[1, 1, 2], 3, 0, 0.0) {
            Err(ShmmError::Data(msg)) => assert!(msg.contains("[2, 3]"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
