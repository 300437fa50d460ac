use proptest::prelude::*;
use proptest::test_runner::{Config, RngSeed};
use rand::{Rng, RngCore};
use rand_distr::{Distribution, Exp};
use restore_core::model::{regen_rate_discrete, DiscreteModel};
use restore_core::oracle::{check_invariance, full_generator, random_model, stationary_vector};
use restore_core::sampler::{run_jump_restore, RunLimit};
use restore_core::streams::stream;

proptest! {
    #![proptest_config(Config { cases: 200, rng_seed: RngSeed::Fixed(42), ..Config::default() })]

    #[test]
    fn random_models_are_invariant(n in 2usize..=8, seed in any::<u64>()) {
        let model = random_model(n, &mut stream(seed, 0));
        prop_assert!(check_invariance(&model).unwrap() <= 1e-10);
        let v = stationary_vector(&full_generator(&model).unwrap()).unwrap();
        for (a, b) in v.iter().zip(model.pi()) {
            prop_assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
        }
    }
}

fn two_state() -> DiscreteModel {
    // κ = (1, 3), so κ̲ = 1
    DiscreteModel::new(vec![vec![-2.0, 2.0], vec![1.0, -1.0]], vec![0.5, 0.5], vec![0.5, 0.5], 2.0).unwrap()
}

#[test]
fn tour_lengths_are_uncorrelated() {
    let model = two_state();
    let traj = run_jump_restore(&model, Some(0), RunLimit::tours(10_001), &mut stream(11, 0)).unwrap();
    let tau = &traj.tour_lengths()[1..];
    let n = tau.len() as f64;
    let mean = tau.iter().sum::<f64>() / n;
    let var = tau.iter().map(|t| (t - mean).powi(2)).sum::<f64>();
    let cov: f64 = tau.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum();
    let rho = cov / var;
    assert!(rho.abs() < 4.0 / n.sqrt(), "lag-1 autocorrelation {rho}");
}

/// Runs two chains from different states until they meet. Each chain has
/// its own local moves and excess regenerations `κ − κ̲`; a shared
/// `κ̲`-clock regenerates both to one common draw.
fn meeting_time(model: &DiscreteModel, floor: f64, horizon: f64, rng: &mut dyn RngCore) -> f64 {
    let rate = |x: usize| model.holding_rate(x) + regen_rate_discrete(model, x).unwrap() - floor;
    let mut state = [0usize, 1usize];
    let mut t = 0.0;
    while t < horizon {
        let rates = [rate(state[0]), rate(state[1]), floor];
        let total: f64 = rates.iter().sum();
        t += Exp::new(total).unwrap().sample(rng);
        let u = rng.random::<f64>() * total;
        if u >= rates[0] + rates[1] {
            // shared clock: both regenerate to the same μ-draw
            return t;
        }
        let c = if u < rates[0] { 0 } else { 1 };
        let x = state[c];
        let move_rate = model.holding_rate(x);
        state[c] = if rng.random::<f64>() * rate(x) < move_rate {
            1 - x
        } else {
            // excess regeneration
            if rng.random::<f64>() < model.mu()[0] {
                0
            } else {
                1
            }
        };
        if state[0] == state[1] {
            return t;
        }
    }
    f64::INFINITY
}

#[test]
fn coupled_chains_meet_geometrically_fast() {
    let model = two_state();
    let floor = (0..2).map(|x| regen_rate_discrete(&model, x).unwrap()).fold(f64::INFINITY, f64::min);
    assert!((floor - 1.0).abs() < 1e-12);
    let n = 20_000;
    let mut rng = stream(12, 0);
    let times: Vec<f64> = (0..n).map(|_| meeting_time(&model, floor, 50.0, &mut rng)).collect();
    for t in [0.1, 0.25, 0.5, 1.0, 2.0, 4.0] {
        let p = times.iter().filter(|&&m| m <= t).count() as f64 / n as f64;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        let lower = 1.0 - (-floor * t).exp();
        assert!(p >= lower - 3.0 * se, "t = {t}: met {p} < {lower}");
    }
}
