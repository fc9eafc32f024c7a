//! Label alignment between two models of the same shape.

use crate::emissions::EmissionModel;
use crate::model::SeasonalHMM;
use crate::numeric::permutations;

/// `perm[k]` is the fitted state matched to reference state `k`; apply it with
/// `fitted.permuted(&perm)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub perm: Vec<usize>,
    /// Summed Euclidean distance between matched emission parameter vectors.
    pub distance: f64,
}

/// Global permutation minimizing the summed distance between emission
/// parameters; ties keep the lexicographically first permutation.
pub fn align_states(fitted: &SeasonalHMM, reference: &SeasonalHMM) -> Alignment {
    let k = reference.dims.states;
    assert_eq!(
        fitted.dims.states, k,
        "models must have the same state count"
    );
    let fp: Vec<Vec<f64>> = (0..k)
        .map(|s| fitted.emissions.state_parameters(s))
        .collect();
    let rp: Vec<Vec<f64>> = (0..k)
        .map(|s| reference.emissions.state_parameters(s))
        .collect();
    let dist = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let mut best = Alignment {
        perm: (0..k).collect(),
        distance: f64::INFINITY,
    };
    for perm in permutations(k) {
        let d: f64 = (0..k).map(|s| dist(&fp[perm[s]], &rp[s])).sum();
        if d < best.distance {
            best = Alignment { perm, distance: d };
        }
    }
    best
}
