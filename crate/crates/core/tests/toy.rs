use hamsde::analytic_toy::{run_exact_chain, ToyMode, ToyParams};
use hamsde::chain::{ChainConfig, Init};
use hamsde::potentials::ToyData;

fn cfg(seed: u64) -> ChainConfig {
    ChainConfig {
        n_samples: 500,
        burn_in: 10,
        thinning: 3,
        init: Init::Prior,
        seed,
        stream: 2,
    }
}

#[test]
fn equal_observations_make_minibatching_harmless() {
    let data = ToyData {
        x1: 1.5,
        x2: 1.5,
        sigma_x2: 2.0,
        sigma_theta2: 0.5,
    };
    let p = ToyParams::new(data, 2.0).unwrap();
    let full = run_exact_chain(&p, 0.4, ToyMode::Full, &cfg(3)).unwrap();
    let mini = run_exact_chain(&p, 0.4, ToyMode::MiniBatch, &cfg(3)).unwrap();
    for (a, b) in full.states.iter().zip(&mini.states) {
        assert!((a.theta[0] - b.theta[0]).abs() < 1e-12);
        assert!((a.r[0] - b.r[0]).abs() < 1e-12);
    }
}

#[test]
fn minibatch_chain_is_wider_than_the_posterior() {
    let p = ToyParams::reference();
    let c = ChainConfig {
        n_samples: 20_000,
        thinning: 3,
        ..cfg(1)
    };
    let mini = run_exact_chain(&p, 0.4, ToyMode::MiniBatch, &c).unwrap();
    let x: Vec<f64> = mini.states.iter().map(|s| s.theta[0]).collect();
    let m = x.iter().sum::<f64>() / x.len() as f64;
    let v = x.iter().map(|t| (t - m).powi(2)).sum::<f64>() / x.len() as f64;
    // Random centres add variance; the mean stays at the posterior mean.
    assert!(v > 1.2 * p.sigma_l2(), "variance {v}");
    assert!((m - p.x_bar()).abs() < 0.05, "mean {m}");
}
