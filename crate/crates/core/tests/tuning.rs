//! Cross-validation: fold assignment, selection and leakage.

use hiernest::model::Method;
use hiernest::simulate::{draw_truth, simulate_train_test, SimConfig};
use hiernest::tuning::*;
use hiernest::{HierDataset, HierarchySpec, SolverConfig};
use ndarray::{concatenate, Axis};
use proptest::prelude::*;

fn small_data(seed: u64, n_per_drg: usize) -> (HierDataset, HierarchySpec) {
    let config = SimConfig { p: 6, mdc_count: 2, drgs_per_mdc: 2, n_per_drg, shrink: 0.5, seed, ..Default::default() };
    let truth = draw_truth(&config).unwrap();
    let (train, _) = simulate_train_test(&truth, 1).unwrap();
    (train, truth.spec().unwrap())
}

fn quick_cv(folds: usize) -> CvConfig {
    CvConfig { folds, n_lambda: 8, lambda_ratio: 0.05, seed: 3, ..Default::default() }
}

#[test]
fn folds_partition_rows() {
    let (data, _) = small_data(1, 60);
    let folds = assign_folds(&data.y, &data.drg, 5, 9).unwrap();
    assert_eq!(folds.len(), data.n());
    let mut sizes = [0usize; 5];
    folds.iter().for_each(|&f| sizes[f] += 1);
    assert_eq!(sizes.iter().sum::<usize>(), data.n());
    assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 4, "{sizes:?}");
}

#[test]
fn duplicated_halves_give_symmetric_fold_fits() {
    let (half, spec) = small_data(2, 40);
    let data = HierDataset::new(
        [half.y.clone(), half.y.clone()].concat(),
        concatenate(Axis(0), &[half.x.view(), half.x.view()]).unwrap(),
        [half.drg.clone(), half.drg.clone()].concat(),
        half.feature_names.clone(),
    )
    .unwrap();
    let n = half.n();
    let folds: Vec<usize> = (0..2 * n).map(|i| usize::from(i >= n)).collect();
    let solver = SolverConfig::default();
    let method = Method::Oglasso { alpha1: 1.0, alpha2: 1.0 };
    let positions = [1.0, 0.5, 0.2, 0.1];
    let (p0, path0) = fit_fold(&data, &spec, method, &folds, 0, &positions, &solver).unwrap();
    let (p1, path1) = fit_fold(&data, &spec, method, &folds, 1, &positions, &solver).unwrap();
    for (a, b) in path0.solutions.iter().zip(&path1.solutions) {
        let sa = p0.score(a, &half.x, &half.drg).unwrap();
        let sb = p1.score(b, &half.x, &half.drg).unwrap();
        assert_eq!(sa, sb);
    }
}

#[test]
fn fixed_seed_reproduces_cv() {
    let (data, spec) = small_data(3, 40);
    let cells = [Method::Oglasso { alpha1: 1.0, alpha2: 0.5 }, Method::PooledLasso];
    let a = cross_validate(&data, &spec, &cells, &quick_cv(3)).unwrap();
    let b = cross_validate(&data, &spec, &cells, &quick_cv(3)).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn held_out_rows_do_not_reach_their_fold() {
    let (data, spec) = small_data(4, 40);
    let folds = assign_folds(&data.y, &data.drg, 4, 1).unwrap();
    let held = folds.iter().position(|&f| f == 2).unwrap();
    let mut perturbed = data.clone();
    perturbed.y[held] = 1.0 - perturbed.y[held];
    for j in 1..perturbed.p() {
        perturbed.x[[held, j]] += 50.0;
    }
    let solver = SolverConfig::default();
    let method = Method::Oglasso { alpha1: 0.5, alpha2: 1.0 };
    let positions = [1.0, 0.3, 0.1];
    let (pa, a) = fit_fold(&data, &spec, method, &folds, 2, &positions, &solver).unwrap();
    let (pb, b) = fit_fold(&perturbed, &spec, method, &folds, 2, &positions, &solver).unwrap();
    assert_eq!(pa.stats, pb.stats);
    assert_eq!(a.lambdas, b.lambdas);
    for (x, y) in a.solutions.iter().zip(&b.solutions) {
        assert_eq!(x.to_flat(), y.to_flat());
    }
}

fn synthetic(cells: &[(Method, Vec<(f64, f64, f64)>)], metric: CvMetric, one_se: bool) -> CvResult {
    let cells = cells
        .iter()
        .map(|(method, scores)| CellResult {
            method: *method,
            lambda_max: scores[0].0,
            scores: scores
                .iter()
                .map(|&(lambda, a, se)| LambdaScore {
                    lambda,
                    pooled_auroc: a,
                    fold_mean_auroc: 1.0 - a,
                    drg_mean_auroc: a,
                    se,
                    fold_aurocs: vec![],
                    converged: true,
                })
                .collect(),
        })
        .collect();
    let placeholder = Selection { cell: 0, lambda_index: 0, lambda: 0.0, alpha1: 0.0, alpha2: 0.0, score: 0.0 };
    CvResult { folds: vec![], k: 2, seed: 0, metric, one_se, cells, selected: placeholder }
}

/// Exhaustive scan: highest score; ties to larger lambda, then smaller
/// alpha1, then smaller alpha2.
fn brute_force(result: &CvResult) -> (usize, usize) {
    let mut all = Vec::new();
    for (c, cell) in result.cells.iter().enumerate() {
        for r in 0..cell.scores.len() {
            all.push((c, r));
        }
    }
    let key = |&(c, r): &(usize, usize)| {
        let (a1, a2) = result.cells[c].method.alphas();
        (result.score(c, r), result.cells[c].scores[r].lambda, -a1, -a2)
    };
    let top = all.iter().map(key).fold(f64::MIN, |m, k| m.max(k.0));
    let pool: Vec<(usize, usize)> = if result.one_se {
        let best = *all.iter().filter(|x| key(x).0 == top).max_by(|a, b| key(a).partial_cmp(&key(b)).unwrap()).unwrap();
        let bar = top - result.cells[best.0].scores[best.1].se;
        all.iter().copied().filter(|x| key(x).0 >= bar).collect()
    } else {
        all.iter().copied().filter(|x| key(x).0 == top).collect()
    };
    *pool
        .iter()
        .max_by(|a, b| {
            let (ka, kb) = (key(a), key(b));
            (ka.1, ka.2, ka.3).partial_cmp(&(kb.1, kb.2, kb.3)).unwrap()
        })
        .unwrap()
}

proptest! {
    #[test]
    fn select_best_matches_exhaustive_scan(
        grid in prop::collection::vec((0usize..3, 0usize..3, prop::collection::vec((0u8..4, 1u8..4), 1..6)), 1..5),
        fold_mean in any::<bool>(),
        one_se in any::<bool>(),
    ) {
        let alphas = [0.25, 0.5, 1.0];
        let mut seen = std::collections::BTreeSet::new();
        let cells: Vec<(Method, Vec<(f64, f64, f64)>)> = grid
            .iter()
            .filter(|(i, k, _)| seen.insert((*i, *k)))
            .map(|(i, k, scores)| {
                let method = Method::Oglasso { alpha1: alphas[*i], alpha2: alphas[*k] };
                let mut lambda = 1.0;
                let rows = scores
                    .iter()
                    .map(|&(s, se)| {
                        lambda *= 0.5;
                        (lambda, 0.5 + s as f64 / 8.0, se as f64 / 16.0)
                    })
                    .collect();
                (method, rows)
            })
            .collect();
        let metric = if fold_mean { CvMetric::FoldMean } else { CvMetric::Pooled };
        let result = synthetic(&cells, metric, one_se);
        let s = select_best(&result);
        prop_assert_eq!((s.cell, s.lambda_index), brute_force(&result));
    }
}
