//! Ready-made models.

use rand::Rng;

use crate::emissions::{Emissions, GaussianPeriodicMean, ZeroInflatedExp};
use crate::error::Result;
use crate::model::{ModelDims, PeriodicLogitTransition, SeasonalHMM};

/// Two-state Gaussian model with a yearly period: transition rows
/// `(1, 0.7, 0.5)` and `(-1, -0.6, 0.7)`, means `-1 + 2.5 cos + 4 sin` and
/// `2 - 1.5 cos + 3.5 sin`, variances `1` and `0.25`, `π = (0.5, 0.5)`.
pub fn simulation_study() -> SeasonalHMM {
    let dims = ModelDims::new(2, 365, 1).expect("valid dims");
    let tr = PeriodicLogitTransition::from_nested(
        dims,
        &[vec![vec![1.0, 0.7, 0.5]], vec![vec![-1.0, -0.6, 0.7]]],
    )
    .expect("valid coefficients");
    let em = GaussianPeriodicMean::new(
        365,
        1,
        vec![vec![1.0], vec![1.0]],
        vec![vec![-1.0], vec![2.0]],
        vec![vec![2.5, 4.0], vec![-1.5, 3.5]],
        vec![vec![1.0], vec![0.25]],
    )
    .expect("valid emissions");
    SeasonalHMM::new(tr, Emissions::GaussianPeriodicMean(em), vec![0.5, 0.5]).expect("valid model")
}

/// Four-state daily precipitation model (mm): dry mass plus two exponential
/// components per state, `d = 2` transitions, stationary initial law.
pub fn precipitation() -> SeasonalHMM {
    let dims = ModelDims::new(4, 365, 2).expect("valid dims");
    // Persistent states; the dry state is most likely in summer.
    let beta: Vec<Vec<Vec<f64>>> = vec![
        vec![
            vec![2.2, 0.4, 0.2, 0.0, 0.0],
            vec![0.2, 0.0, 0.0, 0.0, 0.0],
            vec![-0.4, -0.3, 0.0, 0.0, 0.0],
        ],
        vec![
            vec![0.6, 0.3, 0.0, 0.0, 0.0],
            vec![1.6, 0.0, 0.2, 0.0, 0.0],
            vec![0.2, -0.2, 0.0, 0.0, 0.0],
        ],
        vec![
            vec![0.2, 0.3, 0.0, 0.0, 0.0],
            vec![0.6, 0.0, 0.0, 0.0, 0.0],
            vec![1.4, -0.3, 0.0, 0.1, 0.0],
        ],
        vec![
            vec![0.0, 0.4, 0.0, 0.0, 0.0],
            vec![0.2, 0.0, 0.0, 0.0, 0.0],
            vec![0.4, -0.2, 0.0, 0.0, 0.0],
        ],
    ];
    let tr = PeriodicLogitTransition::from_nested(dims, &beta).expect("valid coefficients");
    let em = ZeroInflatedExp::new(
        365,
        vec![
            vec![0.97, 0.02, 0.01],
            vec![0.55, 0.3, 0.15],
            vec![0.2, 0.5, 0.3],
            vec![0.1, 0.3, 0.6],
        ],
        vec![
            vec![0.4, 2.0],
            vec![0.2, 1.0],
            vec![0.12, 0.6],
            vec![0.06, 0.3],
        ],
    )
    .expect("valid emissions");
    precip_with(tr, em).expect("valid model")
}

/// Random Gaussian-emission model with persistent states (`d = 1` for both
/// transitions and mean offsets) and stationary initial law.
pub fn random_gaussian<R: Rng + ?Sized>(
    k: usize,
    period: usize,
    rng: &mut R,
) -> Result<SeasonalHMM> {
    let dims = ModelDims::new(k, period, 1)?;
    let c = dims.coefficients();
    let mut beta: Vec<f64> = (0..dims.beta_len())
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    for i in 0..k {
        for j in 0..k - 1 {
            let boost = if i == j {
                2.0
            } else if i == k - 1 {
                -2.0
            } else {
                0.0
            };
            beta[(i * (k - 1) + j) * c] += boost;
        }
    }
    let tr = PeriodicLogitTransition::new(dims, beta)?;
    let em = GaussianPeriodicMean::new(
        period,
        1,
        vec![vec![1.0]; k],
        (0..k).map(|_| vec![rng.random_range(-3.0..3.0)]).collect(),
        (0..k)
            .map(|_| vec![rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)])
            .collect(),
        (0..k).map(|_| vec![rng.random_range(0.1..1.0)]).collect(),
    )?;
    SeasonalHMM::new(
        tr,
        Emissions::GaussianPeriodicMean(em),
        vec![1.0 / k as f64; k],
    )?
    .with_stationary_pi()
}

fn precip_with(tr: PeriodicLogitTransition, em: ZeroInflatedExp) -> Result<SeasonalHMM> {
    SeasonalHMM::new(tr, Emissions::ZeroInflatedExp(em), vec![0.25; 4])?.with_stationary_pi()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_valid() {
        let s = simulation_study();
        assert_eq!(s.dims, ModelDims::new(2, 365, 1).unwrap());
        let p = precipitation();
        assert_eq!(p.dims.states, 4);
        let sum: f64 = p.pi.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }
}
