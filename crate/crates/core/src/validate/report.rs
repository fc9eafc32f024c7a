//! Parametric-bootstrap validation report.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use super::stats::{daily_stats, spell_distribution, DayStats, SpellKind};
use crate::dataio::model_io::fingerprint;
use crate::dataio::DailySeries;
use crate::error::{Result, ShmmError};
use crate::inference::viterbi;
use crate::model::SeasonalHMM;
use crate::numeric::{quantile_sorted_inverse_ecdf, quantile_sorted_linear};
use crate::sim::simulate_batch;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportOptions {
    pub window: usize,
    pub threshold: f64,
    pub max_spell: usize,
    pub qq_grid: Vec<f64>,
    pub lower: f64,
    pub upper: f64,
}

impl Default for ReportOptions {
    fn default() -> Self {
        let mut qq_grid: Vec<f64> = (1..=99).map(|i| i as f64 / 100.0).collect();
        qq_grid.extend([0.995, 0.999]);
        Self {
            window: 0,
            threshold: 0.0,
            max_spell: 30,
            qq_grid,
            lower: 0.025,
            upper: 0.975,
        }
    }
}

/// One row of a banded table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandRow {
    pub key: f64,
    pub observed: Option<f64>,
    pub sim_mean: Option<f64>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

impl BandRow {
    pub fn covered(&self) -> Option<bool> {
        match (self.observed, self.lower, self.upper) {
            (Some(o), Some(l), Some(u)) => Some(l <= o && o <= u),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandTable {
    pub name: String,
    pub key_name: String,
    pub rows: Vec<BandRow>,
}

impl BandTable {
    /// Fraction of rows with an observed value inside its band.
    pub fn coverage(&self) -> Option<f64> {
        let flags: Vec<bool> = self.rows.iter().filter_map(BandRow::covered).collect();
        (!flags.is_empty())
            .then(|| flags.iter().filter(|&&c| c).count() as f64 / flags.len() as f64)
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{},observed,sim_mean,lower,upper\n", self.key_name);
        let f = |v: Option<f64>| v.map_or("NA".to_string(), |x| format!("{x}"));
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                r.key,
                f(r.observed),
                f(r.sim_mean),
                f(r.lower),
                f(r.upper)
            );
        }
        s
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub reps: usize,
    pub seed: u64,
    pub length: usize,
    pub model_fingerprint: String,
    pub options: ReportOptions,
    pub tables: Vec<BandTable>,
}

impl ValidationReport {
    pub fn table(&self, name: &str) -> Option<&BandTable> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn summary_json(&self) -> String {
        #[derive(Serialize)]
        struct Cov<'a> {
            table: &'a str,
            rows: usize,
            coverage: Option<f64>,
        }
        #[derive(Serialize)]
        struct Summary<'a> {
            reps: usize,
            seed: u64,
            length: usize,
            model_fingerprint: &'a str,
            options: &'a ReportOptions,
            coverage: Vec<Cov<'a>>,
        }
        let s = Summary {
            reps: self.reps,
            seed: self.seed,
            length: self.length,
            model_fingerprint: &self.model_fingerprint,
            options: &self.options,
            coverage: self
                .tables
                .iter()
                .map(|t| Cov {
                    table: &t.name,
                    rows: t.rows.len(),
                    coverage: t.coverage(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&s).expect("summary serializes")
    }

    /// One CSV per table plus `summary.json`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for t in &self.tables {
            fs::write(dir.join(format!("{}.csv", t.name)), t.to_csv())?;
        }
        let mut summary = self.summary_json();
        summary.push('\n');
        fs::write(dir.join("summary.json"), summary)?;
        Ok(())
    }
}

/// Statistics of one series, all as optional scalars in table order.
struct SeriesStats {
    daily: Vec<DayStats>,
    dry: Vec<f64>,
    wet: Vec<f64>,
    qq: Vec<f64>,
    annual_max: Vec<f64>,
    /// `state_freq[day * K + k]`.
    state_freq: Vec<f64>,
}

fn series_stats(
    values: &[f64],
    day_of_year: &[usize],
    states: &[usize],
    k: usize,
    period: usize,
    opts: &ReportOptions,
) -> Result<SeriesStats> {
    let daily = daily_stats(values, day_of_year, period, opts.window, opts.threshold)?;
    let dry = spell_distribution(values, SpellKind::Dry, opts.threshold, opts.max_spell).relative();
    let wet = spell_distribution(values, SpellKind::Wet, opts.threshold, opts.max_spell).relative();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let qq = opts
        .qq_grid
        .iter()
        .map(|&p| quantile_sorted_linear(&sorted, p))
        .collect();
    let mut annual_max: Vec<f64> = values
        .chunks_exact(period)
        .map(|year| year.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    annual_max.sort_by(f64::total_cmp);
    let mut state_freq = vec![0.0; period * k];
    let mut per_day = vec![0.0; period];
    for (&s, &d) in states.iter().zip(day_of_year) {
        state_freq[(d - 1) * k + s] += 1.0;
        per_day[d - 1] += 1.0;
    }
    for d in 0..period {
        if per_day[d] > 0.0 {
            for s in 0..k {
                state_freq[d * k + s] /= per_day[d];
            }
        }
    }
    Ok(SeriesStats {
        daily,
        dry,
        wet,
        qq,
        annual_max,
        state_freq,
    })
}

type Column = (
    String,
    String,
    Vec<f64>,
    fn(&SeriesStats) -> Vec<Option<f64>>,
);

/// Simulate `reps` series of the observed length, compute every statistic on
/// each, and band them by the `lower`/`upper` quantiles across replicates.
pub fn bootstrap_report(
    model: &SeasonalHMM,
    observed: &DailySeries,
    reps: usize,
    seed: u64,
    opts: &ReportOptions,
) -> Result<ValidationReport> {
    if reps == 0 {
        return Err(ShmmError::InvalidArgument("reps must be >= 1".into()));
    }
    let period = model.dims.period;
    if observed.period != period {
        return Err(ShmmError::InvalidArgument(format!(
            "observed series has period {} but the model has {period}",
            observed.period
        )));
    }
    let k = model.dims.states;
    let n = observed.len();
    let decoded = viterbi(model, &observed.values)?;
    let obs_stats = series_stats(
        &observed.values,
        &observed.day_of_year,
        &decoded,
        k,
        period,
        opts,
    )?;

    // The observed series is assumed to start at phase 1, as ingestion arranges.
    let sim_doy: Vec<usize> = (0..n).map(|i| i % period + 1).collect();
    let sims = simulate_batch(model, n, reps, seed);
    let sim_stats: Vec<SeriesStats> = sims
        .par_iter()
        .map(|tr| {
            let states = tr.states.as_deref().expect("simulation keeps states");
            series_stats(&tr.values, &sim_doy, states, k, period, opts)
        })
        .collect::<Result<_>>()?;

    let days: Vec<f64> = (1..=period).map(|d| d as f64).collect();
    let mut lengths: Vec<f64> = (1..=opts.max_spell).map(|l| l as f64).collect();
    lengths.push((opts.max_spell + 1) as f64);
    let ranks: Vec<f64> = (1..=obs_stats.annual_max.len()).map(|r| r as f64).collect();

    let columns: Vec<Column> = vec![
        ("daily_mean".into(), "day".into(), days.clone(), |s| {
            s.daily.iter().map(|d| Some(d.mean)).collect()
        }),
        ("daily_variance".into(), "day".into(), days.clone(), |s| {
            s.daily.iter().map(|d| Some(d.variance)).collect()
        }),
        ("daily_skewness".into(), "day".into(), days.clone(), |s| {
            s.daily.iter().map(|d| d.skewness).collect()
        }),
        ("daily_kurtosis".into(), "day".into(), days.clone(), |s| {
            s.daily.iter().map(|d| d.kurtosis).collect()
        }),
        (
            "daily_wet_frequency".into(),
            "day".into(),
            days.clone(),
            |s| s.daily.iter().map(|d| Some(d.wet_frequency)).collect(),
        ),
        ("dry_spells".into(), "length".into(), lengths.clone(), |s| {
            s.dry.iter().map(|&v| Some(v)).collect()
        }),
        ("wet_spells".into(), "length".into(), lengths, |s| {
            s.wet.iter().map(|&v| Some(v)).collect()
        }),
        (
            "qq".into(),
            "probability".into(),
            opts.qq_grid.clone(),
            |s| s.qq.iter().map(|&v| Some(v)).collect(),
        ),
        ("annual_maxima".into(), "rank".into(), ranks, |s| {
            s.annual_max.iter().map(|&v| Some(v)).collect()
        }),
    ];

    let mut tables: Vec<BandTable> = columns
        .into_iter()
        .map(|(name, key_name, keys, get)| {
            let obs = get(&obs_stats);
            let sims: Vec<Vec<Option<f64>>> = sim_stats.iter().map(get).collect();
            banded(name, key_name, &keys, &obs, &sims, opts)
        })
        .collect();

    for state in 0..k {
        let obs: Vec<Option<f64>> = (0..period)
            .map(|d| Some(obs_stats.state_freq[d * k + state]))
            .collect();
        let sims: Vec<Vec<Option<f64>>> = sim_stats
            .iter()
            .map(|s| {
                (0..period)
                    .map(|d| Some(s.state_freq[d * k + state]))
                    .collect()
            })
            .collect();
        tables.push(banded(
            format!("state_frequency_{}", state + 1),
            "day".into(),
            &days,
            &obs,
            &sims,
            opts,
        ));
    }

    Ok(ValidationReport {
        reps,
        seed,
        length: n,
        model_fingerprint: fingerprint(model),
        options: opts.clone(),
        tables,
    })
}

fn banded(
    name: String,
    key_name: String,
    keys: &[f64],
    observed: &[Option<f64>],
    sims: &[Vec<Option<f64>>],
    opts: &ReportOptions,
) -> BandTable {
    let rows = keys
        .iter()
        .enumerate()
        .map(|(i, &key)| {
            let mut xs: Vec<f64> = sims
                .iter()
                .filter_map(|s| s.get(i).copied().flatten())
                .collect();
            xs.sort_by(f64::total_cmp);
            let (sim_mean, lower, upper) = if xs.is_empty() {
                (None, None, None)
            } else {
                (
                    Some(xs.iter().sum::<f64>() / xs.len() as f64),
                    Some(quantile_sorted_inverse_ecdf(&xs, opts.lower)),
                    Some(quantile_sorted_inverse_ecdf(&xs, opts.upper)),
                )
            };
            BandRow {
                key,
                observed: observed.get(i).copied().flatten(),
                sim_mean,
                lower,
                upper,
            }
        })
        .collect();
    BandTable {
        name,
        key_name,
        rows,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emissions::{Emissions, ZeroInflatedExp};
    use crate::model::{ModelDims, PeriodicLogitTransition};
    use crate::sim::simulate;

    fn tiny() -> SeasonalHMM {
        let dims = ModelDims::new(2, 3, 0).unwrap();
        let tr = PeriodicLogitTransition::new(dims, vec![1.0, -1.0]).unwrap();
        let em = ZeroInflatedExp::new(
            3,
            vec![vec![0.8, 0.2], vec![0.2, 0.8]],
            vec![vec![1.0], vec![0.3]],
        )
        .unwrap();
        SeasonalHMM::new(tr, Emissions::ZeroInflatedExp(em), vec![0.5, 0.5]).unwrap()
    }

    #[test]
    fn two_replicates_give_min_max_bands() {
        let m = tiny();
        let obs = DailySeries::from_values(simulate(&m, 30, 1).values, 3);
        let r = bootstrap_report(&m, &obs, 2, 9, &ReportOptions::default()).unwrap();
        let sims = simulate_batch(&m, 30, 2, 9);
        let mean_day1 = |v: &[f64]| (0..10).map(|y| v[3 * y]).sum::<f64>() / 10.0;
        let a = mean_day1(&sims[0].values);
        let b = mean_day1(&sims[1].values);
        let row = &r.table("daily_mean").unwrap().rows[0];
        assert!((row.lower.unwrap() - a.min(b)).abs() < 1e-12);
        assert!((row.upper.unwrap() - a.max(b)).abs() < 1e-12);
    }

    #[test]
    fn deterministic_and_ordered_bands() {
        let m = tiny();
        let obs = DailySeries::from_values(simulate(&m, 300, 2).values, 3);
        let a = bootstrap_report(&m, &obs, 20, 4, &ReportOptions::default()).unwrap();
        let b = bootstrap_report(&m, &obs, 20, 4, &ReportOptions::default()).unwrap();
        assert_eq!(a.summary_json(), b.summary_json());
        for t in &a.tables {
            assert_eq!(t.to_csv(), b.table(&t.name).unwrap().to_csv());
            for r in &t.rows {
                if let (Some(l), Some(u)) = (r.lower, r.upper) {
                    assert!(l <= u);
                }
            }
        }
        assert!(a.table("wet_frequency").is_none());
        assert!(a.table("daily_wet_frequency").is_some());
    }
}
