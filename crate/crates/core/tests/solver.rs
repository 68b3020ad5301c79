//! Path solver checks against an unscreened reference and the KKT oracle.

mod common;

use common::*;
use hiernest::solver::{fit_path, kkt_check, lambda_path, objective_value, Penalty};
use hiernest::{CoefficientTree, PenaltyKind, PenaltyWeights, SolverConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn oglasso_matches_reference_on_small_instance() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let inst = random_instance(&mut rng, 200, 3, 2, 2);
    let config = SolverConfig::default();
    let kind = PenaltyKind::OgLasso { alpha1: 0.5, alpha2: 1.0 };
    let lambdas = lambda_path(&inst.design, &inst.y, kind, None, 8, 0.02, &config).unwrap();
    let path = fit_path(&inst.design, &inst.y, kind, None, &lambdas, &config, None).unwrap();
    let layout = inst.design.block_layout();
    let reference = RefPenalty::Group { alpha1: 0.5, alpha2: 1.0, layout: &layout };
    let penalty = Penalty::new(&inst.design, kind, None, true);
    for (r, &lambda) in lambdas.iter().enumerate() {
        let sol = reference_solve(&inst.design, &inst.y, &reference, lambda, &vec![0.0; inst.design.n_cols()], 1e-10);
        let tree = CoefficientTree::from_flat(&sol, 3, 2, 4).unwrap();
        let want = objective_value(&inst.design, &inst.y, &tree, &penalty, lambda).unwrap();
        let got = path.diagnostics[r].objective;
        assert!((got - want).abs() < 1e-4, "lambda {r}: {got} vs {want}");
    }
}

#[test]
fn unit_weight_lasso_matches_soft_threshold_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let inst = random_instance(&mut rng, 200, 4, 2, 2);
    let config = SolverConfig::default();
    let weights = PenaltyWeights::unit(&inst.spec);
    let lambdas = lambda_path(&inst.design, &inst.y, PenaltyKind::Lasso, Some(&weights), 6, 0.05, &config).unwrap();
    let path = fit_path(&inst.design, &inst.y, PenaltyKind::Lasso, Some(&weights), &lambdas, &config, None).unwrap();
    let reference = RefPenalty::Lasso { weights: vec![1.0; inst.design.block_width()] };
    for (r, &lambda) in lambdas.iter().enumerate() {
        let sol = reference_solve(&inst.design, &inst.y, &reference, lambda, &vec![0.0; inst.design.n_cols()], 1e-10);
        // nested columns are collinear, so compare fits rather than coefficients
        let fitted = inst.design.matvec(&path.solutions[r].to_flat());
        let want = inst.design.matvec(&sol);
        let diff = fitted.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-3, "lambda {r}: linear predictor diff {diff}");
        let penalty = Penalty::new(&inst.design, PenaltyKind::Lasso, Some(&weights), true);
        let tree = CoefficientTree::from_flat(&sol, 4, 2, 4).unwrap();
        let ref_obj = objective_value(&inst.design, &inst.y, &tree, &penalty, lambda).unwrap();
        assert!((path.diagnostics[r].objective - ref_obj).abs() < 1e-4);
    }
}

#[test]
fn kkt_check_flags_zeroed_active_block() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let inst = random_instance(&mut rng, 200, 4, 2, 2);
    let config = SolverConfig::default();
    let kind = PenaltyKind::OgLasso { alpha1: 1.0, alpha2: 1.0 };
    let lambdas = lambda_path(&inst.design, &inst.y, kind, None, 10, 0.05, &config).unwrap();
    let path = fit_path(&inst.design, &inst.y, kind, None, &lambdas, &config, None).unwrap();
    let penalty = Penalty::new(&inst.design, kind, None, true);
    let last = path.solutions.last().unwrap();
    let lambda = *lambdas.last().unwrap();
    assert!(kkt_check(&inst.design, &inst.y, last, &penalty, lambda, &config).unwrap().is_empty());
    let j = (1..4).find(|&j| !last.is_zero(j)).expect("an active predictor");
    let mut broken = last.clone();
    broken.clear_block(j);
    let violations = kkt_check(&inst.design, &inst.y, &broken, &penalty, lambda, &config).unwrap();
    assert!(violations.contains(&j), "{violations:?}");
}

#[test]
fn warm_and_cold_starts_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let inst = random_instance(&mut rng, 200, 5, 2, 2);
    let config = SolverConfig::default();
    for kind in [PenaltyKind::OgLasso { alpha1: 0.25, alpha2: 2.0 }, PenaltyKind::Lasso] {
        let lambdas = lambda_path(&inst.design, &inst.y, kind, None, 12, 0.02, &config).unwrap();
        let path = fit_path(&inst.design, &inst.y, kind, None, &lambdas, &config, None).unwrap();
        for r in [3, 7, 11] {
            let cold = fit_path(&inst.design, &inst.y, kind, None, &lambdas[r..=r], &config, None).unwrap();
            let (a, b) = (path.diagnostics[r].objective, cold.diagnostics[0].objective);
            assert!((a - b).abs() < 1e-6, "{} lambda {r}: {a} vs {b}", kind.name());
        }
    }
}

#[test]
fn discarded_predictors_pass_exact_kkt() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let config = SolverConfig::default();
    let mut discarded = 0;
    for _ in 0..5 {
        let inst = random_instance(&mut rng, 150, 8, 2, 2);
        let kind = PenaltyKind::OgLasso { alpha1: 1.0, alpha2: 0.5 };
        let lambdas = lambda_path(&inst.design, &inst.y, kind, None, 15, 0.05, &config).unwrap();
        let path = fit_path(&inst.design, &inst.y, kind, None, &lambdas, &config, None).unwrap();
        let penalty = Penalty::new(&inst.design, kind, None, true);
        for (r, diag) in path.diagnostics.iter().enumerate() {
            let violations = kkt_check(&inst.design, &inst.y, &path.solutions[r], &penalty, lambdas[r], &config).unwrap();
            discarded += diag.discarded.len();
            assert!(diag.discarded.iter().all(|j| !violations.contains(j)));
            assert!(diag.converged);
        }
    }
    assert!(discarded > 0);
}
