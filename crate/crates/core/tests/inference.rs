use rand::Rng;

use shmm::rng::stream_rng;
use shmm::{
    forward_backward, log_likelihood, simulate, viterbi, EmissionModel, Emissions,
    GaussianPeriodicMean, ModelDims, PeriodicLogitTransition, SeasonalHMM, ZeroInflatedExp,
};

/// Two-state homogeneous model with unit-period transitions.
fn textbook_model() -> SeasonalHMM {
    let dims = ModelDims::new(2, 1, 0).unwrap();
    let tr = PeriodicLogitTransition::new(dims, vec![0.8, -0.5]).unwrap();
    let em = GaussianPeriodicMean::new(
        1,
        0,
        vec![vec![1.0]; 2],
        vec![vec![0.0], vec![3.0]],
        vec![vec![], vec![]],
        vec![vec![1.0], vec![0.5]],
    )
    .unwrap();
    SeasonalHMM::new(tr, Emissions::GaussianPeriodicMean(em), vec![0.6, 0.4]).unwrap()
}

#[test]
fn unit_period_matches_textbook_forward() {
    // independent forward recursion in linear space, evaluated in Python
    let ll = log_likelihood(&textbook_model(), &[0.1, 2.9, 0.5, 1.7]).unwrap();
    assert!((ll - (-7.489641573589289)).abs() < 1e-12, "{ll}");
}

fn random_model<R: Rng>(k: usize, period: usize, zero_inflated: bool, rng: &mut R) -> SeasonalHMM {
    let dims = ModelDims::new(k, period, 1).unwrap();
    let beta = (0..dims.beta_len())
        .map(|_| rng.random_range(-1.5..1.5))
        .collect();
    let tr = PeriodicLogitTransition::new(dims, beta).unwrap();
    let em = if zero_inflated {
        let w = |rng: &mut R| {
            let v: Vec<f64> = (0..3).map(|_| rng.random_range(0.1..1.0)).collect();
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect::<Vec<_>>()
        };
        Emissions::ZeroInflatedExp(
            ZeroInflatedExp::new(
                period,
                (0..k).map(|_| w(rng)).collect(),
                (0..k)
                    .map(|_| {
                        let a = rng.random_range(0.2..1.0);
                        vec![a, a + rng.random_range(0.5..2.0)]
                    })
                    .collect(),
            )
            .unwrap(),
        )
    } else {
        Emissions::GaussianPeriodicMean(
            GaussianPeriodicMean::new(
                period,
                1,
                vec![vec![1.0]; k],
                (0..k).map(|_| vec![rng.random_range(-2.0..2.0)]).collect(),
                (0..k)
                    .map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
                    .collect(),
                (0..k).map(|_| vec![rng.random_range(0.3..2.0)]).collect(),
            )
            .unwrap(),
        )
    };
    let mut pi: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..1.0)).collect();
    let s: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|p| *p /= s);
    SeasonalHMM::new(tr, em, pi).unwrap()
}

/// Most probable path by enumeration; the first maximizer in lexicographic order.
fn best_path(model: &SeasonalHMM, obs: &[f64]) -> Vec<usize> {
    let k = model.dims.states;
    let n = obs.len();
    let mut best = (f64::NEG_INFINITY, vec![]);
    for code in 0..k.pow(n as u32) {
        let path: Vec<usize> = (0..n)
            .map(|i| code / k.pow((n - 1 - i) as u32) % k)
            .collect();
        let mut lp =
            model.pi[path[0]].ln() + model.emissions.log_density(path[0], 1, obs[0]).unwrap();
        for i in 1..n {
            lp += model.transition.transition_matrix(i)[(path[i - 1], path[i])].ln()
                + model.emissions.log_density(path[i], i + 1, obs[i]).unwrap();
        }
        if lp > best.0 {
            best = (lp, path);
        }
    }
    best.1
}

#[test]
fn viterbi_matches_enumeration() {
    let mut rng = stream_rng(11, 0);
    for case in 0..40 {
        let model = random_model(2 + case % 2, 1 + case % 4, case % 3 == 0, &mut rng);
        let obs = simulate(&model, 7, case as u64).values;
        assert_eq!(
            viterbi(&model, &obs).unwrap(),
            best_path(&model, &obs),
            "case {case}"
        );
    }
}

#[test]
fn posteriors_are_distributions_on_long_series() {
    let mut rng = stream_rng(12, 0);
    let model = random_model(3, 30, true, &mut rng);
    let obs = simulate(&model, 5000, 1).values;
    let s = forward_backward(&model, &obs).unwrap();
    assert!(s.loglik.is_finite());
    for i in 0..obs.len() {
        let total: f64 = (0..3).map(|k| s.marginal(i, k)).sum();
        assert!((total - 1.0).abs() < 1e-9);
    }
    assert!((s.loglik - log_likelihood(&model, &obs).unwrap()).abs() < 1e-8);
}
