//! Monte Carlo checks of the simulation design.

use hiernest::simulate::{draw_coefficients, draw_covariate_params, draw_truth, simulate_train_test, write_dataset_csv, SimConfig};

#[test]
fn covariate_sd_has_gamma_mean() {
    let config = SimConfig { p: 30, mdc_count: 10, drgs_per_mdc: 40, ..Default::default() };
    let mut rng = config.rng(7);
    let mut draws = Vec::new();
    while draws.len() < 100_000 {
        for per_drg in draw_covariate_params(&config, &mut rng) {
            draws.extend(per_drg.iter().map(|c| c.sd));
        }
    }
    let n = draws.len() as f64;
    let mean = draws.iter().sum::<f64>() / n;
    let sd = (draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!((mean - 1.0).abs() < 3.0 * sd / n.sqrt(), "mean {mean}");
}

#[test]
fn bernoulli_probabilities_stay_in_bounds() {
    let config = SimConfig { p: 30, mdc_count: 10, drgs_per_mdc: 40, dispersion: 3.0, ..Default::default() };
    let mut rng = config.rng(8);
    for per_drg in draw_covariate_params(&config, &mut rng) {
        assert!(per_drg.iter().all(|c| c.prob > 0.0 && c.prob < 1.0 && c.rate >= 1.0));
    }
}

#[test]
fn dense_effects_when_gamma_is_one() {
    let config = SimConfig { sparsity_logit: 40.0, shrink: 1.0, ..Default::default() };
    let (tree, gates) = draw_coefficients(&config, &mut config.rng(3));
    assert!(gates.iter().flatten().all(|&g| g));
    for j in 1..=config.p {
        let block = tree.block(j).unwrap();
        assert!(block.iter().all(|v| *v != 0.0 && v.abs() < 1.0));
    }
}

#[test]
fn gating_on_many_draws() {
    for seed in 0..20 {
        let config = SimConfig { sparsity_logit: -0.5, seed, ..Default::default() };
        let (tree, gates) = draw_coefficients(&config, &mut config.rng(0));
        for j in 1..=config.p {
            for d in 0..config.n_drg() {
                let m = d / config.drgs_per_mdc;
                if tree.delta(j, d) != 0.0 {
                    assert!(gates[j - 1][m]);
                }
                if !gates[j - 1][m] {
                    assert_eq!(tree.eta(j, m), 0.0);
                }
            }
        }
    }
}

#[test]
fn intercept_only_rate_over_many_draws() {
    let config = SimConfig { p: 3, mdc_count: 1, drgs_per_mdc: 1, n_per_drg: 100_000, ..Default::default() };
    let mut truth = draw_truth(&config).unwrap();
    truth.coefficients.clear();
    truth.intercepts = vec![(0.17f64 / 0.83).ln()];
    let (train, _) = simulate_train_test(&truth, 1).unwrap();
    let rate = train.y.iter().sum::<f64>() / train.n() as f64;
    let se = (0.17 * 0.83 / train.n() as f64).sqrt();
    assert!((rate - 0.17).abs() < 4.0 * se, "rate {rate}");
}

#[test]
fn same_seed_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let config = SimConfig { p: 6, n_per_drg: 20, seed: 11, ..Default::default() };
    let mut bytes = Vec::new();
    for k in 0..2 {
        let truth = draw_truth(&config).unwrap();
        let (train, test) = simulate_train_test(&truth, 10).unwrap();
        let (a, b) = (dir.path().join(format!("train{k}.csv")), dir.path().join(format!("test{k}.csv")));
        write_dataset_csv(&train, &a).unwrap();
        write_dataset_csv(&test, &b).unwrap();
        bytes.push((std::fs::read(a).unwrap(), std::fs::read(b).unwrap()));
    }
    assert_eq!(bytes[0], bytes[1]);
}

#[test]
fn calibrated_event_rates_per_drg() {
    let config = SimConfig { n_per_drg: 2000, seed: 5, ..Default::default() };
    let truth = draw_truth(&config).unwrap();
    let (train, _) = simulate_train_test(&truth, 1).unwrap();
    let n = config.n_per_drg;
    let inside = (0..config.n_drg())
        .filter(|&d| {
            let rate = train.y[d * n..(d + 1) * n].iter().sum::<f64>() / n as f64;
            (0.10..=0.25).contains(&rate)
        })
        .count();
    assert!(inside as f64 >= 0.9 * config.n_drg() as f64, "{inside} of {}", config.n_drg());
}
