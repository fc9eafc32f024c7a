//! Multi-start EM estimation.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::em::{em_iterate, InitialMode};
use super::smoothing::log_likelihood;
use super::transition::{maximize, TransitionCounts};
use crate::emissions::{
    EmissionModel, Emissions, ExpPeriodicScale, GaussianPeriodicMean, ZeroInflatedExp,
};
use crate::error::{Result, ShmmError};
use crate::model::{ModelDims, PeriodicLogitTransition, SeasonalHMM};
use crate::numeric::quantile_sorted_linear;
use crate::rng::{stream_rng, streams, StreamRng};

/// Emission family and its structural settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum FamilySpec {
    GaussianPeriodicMean {
        components: usize,
        degree: usize,
        variance_floor: f64,
    },
    ExpPeriodicScale {
        components: usize,
        degree: usize,
        scale_floor: f64,
    },
    /// `components` counts the point mass at zero.
    ZeroInflatedExp { components: usize },
}

impl FamilySpec {
    pub fn gaussian(components: usize, degree: usize) -> Self {
        FamilySpec::GaussianPeriodicMean {
            components,
            degree,
            variance_floor: 1e-6,
        }
    }

    pub fn exp_scale(components: usize, degree: usize) -> Self {
        FamilySpec::ExpPeriodicScale {
            components,
            degree,
            scale_floor: 1e-3,
        }
    }

    pub fn zero_inflated(components: usize) -> Self {
        FamilySpec::ZeroInflatedExp { components }
    }

    fn check(&self) -> Result<()> {
        let m = match *self {
            FamilySpec::GaussianPeriodicMean { components, .. }
            | FamilySpec::ExpPeriodicScale { components, .. } => components,
            FamilySpec::ZeroInflatedExp { components } => {
                if components < 2 {
                    return Err(ShmmError::InvalidArgument(
                        "the zero-inflated family needs at least 2 components (dry mass + 1 exponential)".into(),
                    ));
                }
                components
            }
        };
        if m == 0 {
            return Err(ShmmError::InvalidArgument(
                "component count must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Settings of [`fit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub n_starts: usize,
    pub short_run_iters: usize,
    pub short_run_len: usize,
    pub rel_tol: f64,
    pub max_iters: usize,
    pub seed: u64,
    /// Transition coefficients of random starts are uniform on this interval.
    pub beta_range: (f64, f64),
    pub initial_mode: InitialMode,
    /// Replace the random parameters of start 0 by ones estimated from a hard
    /// segmentation of the data by local level.
    pub segmented_start: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            n_starts: 30,
            short_run_iters: 50,
            short_run_len: 500,
            rel_tol: 1e-7,
            max_iters: 5000,
            seed: 0,
            beta_range: (-1.0, 1.0),
            initial_mode: InitialMode::Free,
            segmented_start: true,
        }
    }
}

impl FitConfig {
    fn check(&self) -> Result<()> {
        if self.n_starts == 0 {
            return Err(ShmmError::InvalidArgument("n_starts must be >= 1".into()));
        }
        if !(self.rel_tol > 0.0) {
            return Err(ShmmError::InvalidArgument("rel_tol must be > 0".into()));
        }
        if !(self.beta_range.0 < self.beta_range.1) {
            return Err(ShmmError::InvalidArgument(
                "beta_range must be an increasing interval".into(),
            ));
        }
        Ok(())
    }
}

/// Outcome of one short run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StartRecord {
    pub index: usize,
    /// Log-likelihood on the short segment after the short run; `None` when the
    /// start failed.
    pub loglik: Option<f64>,
    pub error: Option<String>,
    pub trace: Vec<f64>,
}

/// Per-start results and the long-run iteration trace.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub starts: Vec<StartRecord>,
    pub selected_start: Option<usize>,
    /// Log-likelihood before each long-run iteration, followed by the final value.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Iterations where some block of the M-step kept its previous parameters.
    pub flagged_iterations: Vec<usize>,
    pub warnings: Vec<String>,
}

impl FitDiagnostics {
    /// Plain-text report: per-start results, chosen start, iteration trace.
    pub fn report(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# starts");
        let _ = writeln!(s, "start\tloglik\tstatus");
        for st in &self.starts {
            let ll = st.loglik.map_or("NA".to_string(), |v| format!("{v:.10}"));
            let status = st.error.as_deref().unwrap_or("ok");
            let _ = writeln!(s, "{}\t{}\t{}", st.index, ll, status);
        }
        match self.selected_start {
            Some(i) => {
                let _ = writeln!(s, "# selected start: {i}");
            }
            None => {
                let _ = writeln!(s, "# selected start: none");
            }
        }
        let _ = writeln!(s, "# trace");
        let _ = writeln!(s, "iteration\tloglik\trel_diff");
        for (i, ll) in self.trace.iter().enumerate() {
            let rel = if i == 0 {
                "NA".to_string()
            } else {
                let prev = self.trace[i - 1];
                format!("{:.3e}", ((ll - prev) / prev).abs())
            };
            let _ = writeln!(s, "{i}\t{ll:.10}\t{rel}");
        }
        let _ = writeln!(s, "# converged: {}", self.converged);
        for w in &self.warnings {
            let _ = writeln!(s, "# warning: {w}");
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub model: SeasonalHMM,
    pub loglik: f64,
    pub diagnostics: FitDiagnostics,
}

/// Multi-start EM: `n_starts` short runs on the leading segment, then a long run
/// from the best start on the full data.
pub fn fit(
    obs: &[f64],
    dims: ModelDims,
    family: FamilySpec,
    cfg: &FitConfig,
) -> Result<FitOutcome> {
    cfg.check()?;
    family.check()?;
    if obs.is_empty() {
        return Err(ShmmError::InvalidArgument(
            "observation sequence is empty".into(),
        ));
    }
    if let Some(i) = obs.iter().position(|y| !y.is_finite()) {
        return Err(ShmmError::Domain {
            index: i,
            value: obs[i],
        });
    }
    let mut warnings = Vec::new();
    let heuristic = 10 * dims.states * dims.period;
    if obs.len() < heuristic {
        warnings.push(format!(
            "only {} observations for K = {} and T = {} (heuristic minimum {heuristic})",
            obs.len(),
            dims.states,
            dims.period
        ));
    }
    if !dims.beta_identifiable() {
        warnings.push(format!(
            "T = {} does not exceed 2d = {}; transition coefficients are not identifiable",
            dims.period,
            2 * dims.degree
        ));
    }

    let short = &obs[..cfg.short_run_len.clamp(1, obs.len())];
    let summary = DataSummary::new(obs);
    let runs: Vec<(StartRecord, Option<SeasonalHMM>)> = (0..cfg.n_starts)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(cfg.seed, streams::FIT_STARTS_BASE + i as u64);
            let segment = (cfg.segmented_start && i == 0).then_some(obs);
            short_run(i, dims, family, cfg, &summary, segment, short, &mut rng)
        })
        .collect();

    let mut order: Vec<usize> = (0..runs.len())
        .filter(|&i| runs[i].0.loglik.is_some())
        .collect();
    // highest log-likelihood first; ties keep the lower start index
    order.sort_by(|&a, &b| {
        let la = runs[a].0.loglik.unwrap();
        let lb = runs[b].0.loglik.unwrap();
        lb.total_cmp(&la).then(a.cmp(&b))
    });

    let mut diagnostics = FitDiagnostics {
        starts: runs.iter().map(|r| r.0.clone()).collect(),
        warnings,
        ..Default::default()
    };
    for &i in &order {
        let init = runs[i].1.clone().expect("successful start has a model");
        match refine(&init, obs, cfg) {
            Ok(mut out) => {
                diagnostics.selected_start = Some(i);
                diagnostics.trace = out.diagnostics.trace;
                diagnostics.iterations = out.diagnostics.iterations;
                diagnostics.converged = out.diagnostics.converged;
                diagnostics.flagged_iterations = out.diagnostics.flagged_iterations;
                diagnostics.warnings.append(&mut out.diagnostics.warnings);
                out.diagnostics = diagnostics;
                return Ok(out);
            }
            Err(e) => diagnostics
                .warnings
                .push(format!("long run from start {i} failed: {e}")),
        }
    }
    Err(ShmmError::Fit(format!(
        "no start produced a finite likelihood\n{}",
        diagnostics.report()
    )))
}

/// Long EM run from a given model until the relative log-likelihood change drops
/// below `cfg.rel_tol` or `cfg.max_iters` iterations have run.
pub fn refine(init: &SeasonalHMM, obs: &[f64], cfg: &FitConfig) -> Result<FitOutcome> {
    let (model, diagnostics) = run_em(
        init.clone(),
        obs,
        cfg.max_iters,
        Some(cfg.rel_tol),
        cfg.initial_mode,
    )?;
    let loglik = *diagnostics.trace.last().expect("trace is never empty");
    Ok(FitOutcome {
        model,
        loglik,
        diagnostics,
    })
}

fn run_em(
    mut model: SeasonalHMM,
    obs: &[f64],
    max_iters: usize,
    rel_tol: Option<f64>,
    mode: InitialMode,
) -> Result<(SeasonalHMM, FitDiagnostics)> {
    if mode == InitialMode::Stationary {
        model = model.with_stationary_pi()?;
    }
    let mut diag = FitDiagnostics::default();
    let mut prev: Option<f64> = None;
    for iter in 0..max_iters {
        let step = em_iterate(&model, obs, mode)?;
        diag.trace.push(step.loglik);
        if !step.flagged_states.is_empty() || step.transition_stalled {
            diag.flagged_iterations.push(iter);
        }
        if let (Some(p), Some(tol)) = (prev, rel_tol) {
            if ((step.loglik - p) / p).abs() < tol {
                diag.converged = true;
                diag.iterations = iter;
                return Ok((model, diag));
            }
        }
        prev = Some(step.loglik);
        model = step.model;
        diag.iterations = iter + 1;
    }
    let ll = log_likelihood(&model, obs)?;
    diag.trace.push(ll);
    if rel_tol.is_some() {
        diag.warnings.push(format!(
            "EM stopped after {max_iters} iterations without converging"
        ));
    }
    Ok((model, diag))
}

#[allow(clippy::too_many_arguments)]
fn short_run(
    index: usize,
    dims: ModelDims,
    family: FamilySpec,
    cfg: &FitConfig,
    summary: &DataSummary,
    segment: Option<&[f64]>,
    short: &[f64],
    rng: &mut StreamRng,
) -> (StartRecord, Option<SeasonalHMM>) {
    let mut attempt = || -> Result<(SeasonalHMM, Vec<f64>, f64)> {
        let mut init = random_start(dims, family, cfg, summary, rng)?;
        if let Some(obs) = segment {
            init = segmented_start(&init, obs)?;
        }
        let (model, diag) = run_em(init, short, cfg.short_run_iters, None, cfg.initial_mode)?;
        let ll = *diag.trace.last().expect("trace is never empty");
        if !ll.is_finite() {
            return Err(ShmmError::Fit("non-finite log-likelihood".into()));
        }
        Ok((model, diag.trace, ll))
    };
    match attempt() {
        Ok((model, trace, ll)) => (
            StartRecord {
                index,
                loglik: Some(ll),
                error: None,
                trace,
            },
            Some(model),
        ),
        Err(e) => (
            StartRecord {
                index,
                loglik: None,
                error: Some(e.to_string()),
                trace: Vec::new(),
            },
            None,
        ),
    }
}

/// Half-width of the window whose mean ranks observations for the segmented start.
const SEGMENT_HALF_WIDTH: usize = 3;

/// Label each observation by the rank of its local mean, cut into `K` equal
/// groups, and estimate all parameters from these hard labels. The emission
/// M-step starts from `base`, which fixes the family and its shape.
fn segmented_start(base: &SeasonalHMM, obs: &[f64]) -> Result<SeasonalHMM> {
    let dims = base.dims;
    let k = dims.states;
    let n = obs.len();
    let mut prefix = vec![0.0; n + 1];
    for (i, y) in obs.iter().enumerate() {
        prefix[i + 1] = prefix[i] + y;
    }
    let level: Vec<f64> = (0..n)
        .map(|i| {
            let a = i.saturating_sub(SEGMENT_HALF_WIDTH);
            let b = (i + SEGMENT_HALF_WIDTH + 1).min(n);
            (prefix[b] - prefix[a]) / (b - a) as f64
        })
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| level[a].total_cmp(&level[b]).then(a.cmp(&b)));
    let mut label = vec![0; n];
    for (rank, &i) in order.iter().enumerate() {
        label[i] = rank * k / n;
    }

    let mut weights = vec![0.0; n * k];
    for (i, &l) in label.iter().enumerate() {
        weights[i * k + l] = 1.0;
    }
    let mut emissions = base.emissions.clone();
    for _ in 0..SEGMENT_MIXTURE_ITERS {
        emissions = emissions.weighted_mstep(obs, &weights)?.params;
    }

    let mut counts = vec![0.0; dims.period * k * k];
    for i in 0..n.saturating_sub(1) {
        counts[(i % dims.period) * k * k + label[i] * k + label[i + 1]] += 1.0;
    }
    let counts = TransitionCounts::new(dims, counts);
    let transition = maximize(
        &PeriodicLogitTransition::zeros(dims),
        &counts,
        SEGMENT_NEWTON_ITERS,
    );

    let mut pi = vec![1.0; k];
    for &l in &label {
        pi[l] += 1.0;
    }
    let total: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|p| *p /= total);
    SeasonalHMM::new(transition, emissions, pi)
}

const SEGMENT_NEWTON_ITERS: usize = 50;
const SEGMENT_MIXTURE_ITERS: usize = 30;

struct DataSummary {
    sorted: Vec<f64>,
    positive: Vec<f64>,
    variance: f64,
}

impl DataSummary {
    fn new(obs: &[f64]) -> Self {
        let mut sorted = obs.to_vec();
        sorted.sort_by(f64::total_cmp);
        let positive: Vec<f64> = sorted.iter().copied().filter(|&y| y > 0.0).collect();
        let n = obs.len() as f64;
        let mean = obs.iter().sum::<f64>() / n;
        let variance = obs.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n;
        Self {
            sorted,
            positive,
            variance,
        }
    }

    fn positive_quantile(&self, u: f64) -> f64 {
        if self.positive.is_empty() {
            1.0
        } else {
            quantile_sorted_linear(&self.positive, u).max(1e-6)
        }
    }
}

fn uniform_simplex(m: usize, rng: &mut StreamRng) -> Vec<f64> {
    let draws: Vec<f64> = (0..m).map(|_| Exp1.sample(rng)).collect();
    let s: f64 = draws.iter().sum();
    draws.into_iter().map(|d| d / s).collect()
}

/// A uniform draw from the `state`-th of `k` equal slices of `(0, 1)`, so that
/// the states of a start spread over the range of the data.
fn stratum(state: usize, k: usize, rng: &mut StreamRng) -> f64 {
    (state as f64 + rng.random::<f64>()) / k as f64
}

fn random_start(
    dims: ModelDims,
    family: FamilySpec,
    cfg: &FitConfig,
    summary: &DataSummary,
    rng: &mut StreamRng,
) -> Result<SeasonalHMM> {
    let (lo, hi) = cfg.beta_range;
    let beta: Vec<f64> = (0..dims.beta_len())
        .map(|_| rng.random_range(lo..hi))
        .collect();
    let transition = PeriodicLogitTransition::new(dims, beta)?;
    let k = dims.states;
    let period = dims.period;
    let emissions = match family {
        FamilySpec::GaussianPeriodicMean {
            components,
            degree,
            variance_floor,
        } => {
            let sd = summary.variance.sqrt();
            let variance = summary.variance.max(variance_floor * 10.0).max(1e-12);
            let weights = (0..k).map(|_| uniform_simplex(components, rng)).collect();
            let means = (0..k)
                .map(|state| {
                    (0..components)
                        .map(|_| quantile_sorted_linear(&summary.sorted, stratum(state, k, rng)))
                        .collect()
                })
                .collect();
            let delta = (0..k)
                .map(|_| {
                    (0..2 * degree)
                        .map(|_| 0.5 * sd * rng.random_range(-1.0..1.0))
                        .collect()
                })
                .collect();
            let variances = vec![vec![variance; components]; k];
            Emissions::GaussianPeriodicMean(
                GaussianPeriodicMean::new(period, degree, weights, means, delta, variances)?
                    .with_variance_floor(variance_floor),
            )
        }
        FamilySpec::ExpPeriodicScale {
            components,
            degree,
            scale_floor,
        } => {
            let weights = (0..k).map(|_| uniform_simplex(components, rng)).collect();
            let rates = (0..k)
                .map(|state| {
                    let mut r: Vec<f64> = (0..components)
                        .map(|_| 1.0 / summary.positive_quantile(stratum(state, k, rng)))
                        .collect();
                    r.sort_by(f64::total_cmp);
                    r
                })
                .collect();
            // keeps |σ_k(t)| below one half
            let amp = if degree == 0 {
                0.0
            } else {
                0.25 / degree as f64
            };
            let delta = (0..k)
                .map(|_| {
                    (0..2 * degree)
                        .map(|_| amp * rng.random_range(-1.0..1.0))
                        .collect()
                })
                .collect();
            Emissions::ExpPeriodicScale(
                ExpPeriodicScale::new(period, degree, weights, rates, delta)?
                    .with_scale_floor(scale_floor),
            )
        }
        FamilySpec::ZeroInflatedExp { components } => {
            // drier states get lighter amounts
            let mut dry: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
            dry.sort_by(|a, b| b.total_cmp(a));
            let weights = dry
                .iter()
                .map(|&p0| {
                    let mut w = vec![p0];
                    w.extend(
                        uniform_simplex(components - 1, rng)
                            .into_iter()
                            .map(|x| x * (1.0 - p0)),
                    );
                    w
                })
                .collect();
            let rates = (0..k)
                .map(|state| {
                    let mut r: Vec<f64> = (0..components - 1)
                        .map(|_| 1.0 / summary.positive_quantile(stratum(state, k, rng)))
                        .collect();
                    r.sort_by(f64::total_cmp);
                    r
                })
                .collect();
            Emissions::ZeroInflatedExp(ZeroInflatedExp::new(period, weights, rates)?)
        }
    };
    let pi = uniform_simplex(k, rng);
    SeasonalHMM::new(transition, emissions, pi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emissions::EmissionModel;
    use crate::rng::stream_rng;
    use rand_distr::StandardNormal;

    #[test]
    fn single_state_constant_gaussian_recovers_sample_moments() {
        let mut rng = stream_rng(21, 0);
        let obs: Vec<f64> = (0..400)
            .map(|_| 3.0 + 2.0 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let dims = ModelDims::new(1, 5, 0).unwrap();
        let cfg = FitConfig {
            n_starts: 3,
            ..Default::default()
        };
        let out = fit(&obs, dims, FamilySpec::gaussian(1, 0), &cfg).unwrap();
        let n = obs.len() as f64;
        let mean = obs.iter().sum::<f64>() / n;
        let var = obs.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n;
        let Emissions::GaussianPeriodicMean(g) = &out.model.emissions else {
            panic!("family changed")
        };
        assert!((g.means[0][0] - mean).abs() < 1e-10);
        assert!((g.variances[0][0] - var).abs() < 1e-10);
    }

    #[test]
    fn fit_is_deterministic_and_trace_monotone() {
        let mut rng = stream_rng(22, 0);
        let truth = crate::inference::test_models::random_model(2, 4, &mut rng);
        let obs = crate::sim::simulate(&truth, 400, 9).values;
        let dims = ModelDims::new(2, 4, 1).unwrap();
        let cfg = FitConfig {
            n_starts: 4,
            short_run_iters: 10,
            short_run_len: 200,
            max_iters: 200,
            seed: 17,
            ..Default::default()
        };
        let a = fit(&obs, dims, FamilySpec::gaussian(1, 1), &cfg).unwrap();
        let b = fit(&obs, dims, FamilySpec::gaussian(1, 1), &cfg).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.diagnostics.trace, b.diagnostics.trace);
        for w in a.diagnostics.trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-9);
        }
        assert_eq!(a.model.emissions.states(), 2);
        assert!(a.diagnostics.report().contains("# selected start"));
    }

    #[test]
    fn segmented_start_orders_states_by_level() {
        // alternating blocks of 20 dry days and 20 days of heavy rain
        let mut rng = stream_rng(23, 0);
        let obs: Vec<f64> = (0..800)
            .map(|i| {
                if (i / 20) % 2 == 0 {
                    0.0
                } else {
                    5.0 * rng.sample::<f64, _>(rand_distr::Exp1)
                }
            })
            .collect();
        let dims = ModelDims::new(2, 4, 1).unwrap();
        let summary = DataSummary::new(&obs);
        let base = random_start(
            dims,
            FamilySpec::zero_inflated(2),
            &FitConfig::default(),
            &summary,
            &mut rng,
        )
        .unwrap();
        let start = segmented_start(&base, &obs).unwrap();
        let Emissions::ZeroInflatedExp(z) = &start.emissions else {
            panic!("family changed")
        };
        assert!(z.weights[0][0] > 0.9, "{:?}", z.weights);
        assert!(z.weights[1][0] < 0.1, "{:?}", z.weights);
        let q = start.transition.transition_matrix(1);
        assert!(q[(0, 0)] > 0.8 && q[(1, 1)] > 0.8);
    }

    #[test]
    fn rejects_bad_configuration() {
        let dims = ModelDims::new(2, 3, 0).unwrap();
        let cfg = FitConfig {
            n_starts: 0,
            ..Default::default()
        };
        assert!(fit(&[1.0, 2.0], dims, FamilySpec::gaussian(1, 0), &cfg).is_err());
        assert!(fit(
            &[1.0, 2.0],
            dims,
            FamilySpec::zero_inflated(1),
            &FitConfig::default()
        )
        .is_err());
    }
}
