//! Numerical checks of the identifiability and regularity conditions.

use serde::Serialize;

use crate::model::SeasonalHMM;
use crate::spectral::FeatureMap;

/// Per-phase findings.
#[derive(Debug, Clone, Serialize)]
pub struct PhaseCheck {
    pub t: usize,
    pub det: f64,
    /// `|det Q(t)| / σ_max(Q(t))^K`.
    pub relative_det: f64,
    pub singular: bool,
    /// Smallest singular value of `O_t` under the report's feature map.
    pub feature_sigma_min: Option<f64>,
}

/// Advisory report; nothing here changes the model.
#[derive(Debug, Clone, Serialize)]
pub struct AssumptionReport {
    pub tol: f64,
    pub phases: Vec<PhaseCheck>,
    /// Every entry of every `Q(t)` is positive under the logit parametrization.
    pub irreducible: bool,
    /// `min_{t,i,j} Q_ij(t)`.
    pub alpha: f64,
    /// `1 - |λ_2|` of `Q(1)⋯Q(T)`.
    pub spectral_gap: f64,
    pub beta_identifiable: bool,
    pub features: Option<FeatureMap>,
    pub warnings: Vec<String>,
}

/// Check the model with the default feature map (`2K` histogram bins at the
/// quantiles of the stationary observation law).
pub fn check_assumptions(model: &SeasonalHMM, tol: f64) -> AssumptionReport {
    let features = FeatureMap::histogram_from_model(model, 2 * model.dims.states).ok();
    check_assumptions_with(model, tol, features)
}

pub fn check_assumptions_with(
    model: &SeasonalHMM,
    tol: f64,
    features: Option<FeatureMap>,
) -> AssumptionReport {
    let k = model.dims.states;
    let mut warnings = Vec::new();
    let mut alpha = f64::INFINITY;
    let mut phases = Vec::with_capacity(model.dims.period);
    for t in 1..=model.dims.period {
        let q = model.transition.transition_matrix(t);
        alpha = alpha.min(q.min());
        let det = q.determinant();
        let smax = q.singular_values().max();
        let relative_det = det.abs() / smax.powi(k as i32);
        let singular = relative_det < tol;
        let feature_sigma_min = features.as_ref().and_then(|f| {
            if f.len() < k {
                return None;
            }
            model.emissions.linear_independence_check(t, f).ok()
        });
        phases.push(PhaseCheck {
            t,
            det,
            relative_det,
            singular,
            feature_sigma_min,
        });
    }
    let singular: Vec<usize> = phases.iter().filter(|p| p.singular).map(|p| p.t).collect();
    if !singular.is_empty() {
        warnings.push(format!(
            "Q(t) is numerically singular at {} of {} times (first t = {})",
            singular.len(),
            phases.len(),
            singular[0]
        ));
    }
    match &features {
        Some(f) if f.len() < k => warnings.push(format!(
            "feature map has {} features for {k} states; emission independence not checked",
            f.len()
        )),
        Some(_) => {
            if let Some(p) = phases
                .iter()
                .filter_map(|p| p.feature_sigma_min.map(|s| (p.t, s)))
                .find(|&(_, s)| s < tol)
            {
                warnings.push(format!(
                    "emission laws look linearly dependent at t = {} (smallest singular value {:.3e})",
                    p.0, p.1
                ));
            }
        }
        None => warnings.push("no feature map; emission independence not checked".into()),
    }
    let product = model.transition.period_product();
    let mut moduli: Vec<f64> = product
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .collect();
    moduli.sort_by(|a, b| b.total_cmp(a));
    let spectral_gap = 1.0 - moduli.get(1).copied().unwrap_or(0.0);
    if !model.dims.beta_identifiable() {
        warnings.push(format!(
            "T = {} does not exceed 2d = {}; transition coefficients are not identifiable",
            model.dims.period,
            2 * model.dims.degree
        ));
    }
    AssumptionReport {
        tol,
        phases,
        irreducible: alpha > 0.0,
        alpha,
        spectral_gap,
        beta_identifiable: model.dims.beta_identifiable(),
        features,
        warnings,
    }
}
