//! Model artifacts, the command-line tool and the experiment driver.

use std::path::Path;
use std::process::Command;

use hiernest::config::KeyValues;
use hiernest::experiment::{run_experiment, ExperimentConfig};
use hiernest::model::{fit_model, Method, ModelArtifact};
use hiernest::simulate::{draw_truth, simulate_train_test, SimConfig};
use hiernest::{Level, SolverConfig};

fn hiernest(args: &[&str], dir: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_hiernest")).args(args).current_dir(dir).output().unwrap()
}

fn ok(out: std::process::Output) {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn small_model() -> (ModelArtifact, hiernest::HierDataset) {
    let config = SimConfig { p: 6, mdc_count: 2, drgs_per_mdc: 2, n_per_drg: 60, shrink: 0.5, seed: 8, ..Default::default() };
    let truth = draw_truth(&config).unwrap();
    let (train, test) = simulate_train_test(&truth, 30).unwrap();
    let spec = truth.spec().unwrap();
    let method = Method::Oglasso { alpha1: 0.5, alpha2: 0.5 };
    let problem = hiernest::model::Problem::new(&train, &spec, method).unwrap();
    let lmax = problem.lambda_max(&SolverConfig::default()).unwrap();
    let (model, _) = fit_model(&train, &spec, method, 0.05 * lmax, &SolverConfig::default()).unwrap();
    (model, test)
}

#[test]
fn drg_without_own_effects_matches_mdc_fallback() {
    let (mut model, test) = small_model();
    let target = test.drg[0].clone();
    model.coefficients.retain(|c| !(c.level == Level::Drg && c.group == target));
    let rows: Vec<usize> = (0..test.n()).filter(|&i| test.drg[i] == target).collect();
    let sub = test.select_rows(&rows);
    let mdc = model.spec().unwrap().mdc_ids()[0].clone();
    let own = model.predict(&sub.x, &sub.drg, None).unwrap();
    let unknown: Vec<String> = vec!["NEW".into(); sub.n()];
    let fallback = model.predict(&sub.x, &unknown, Some(&vec![mdc; sub.n()])).unwrap();
    for (a, b) in own.iter().zip(&fallback) {
        assert_eq!(a.level, Level::Drg);
        assert_eq!(b.level, Level::Mdc);
        assert_eq!(a.probability, b.probability);
    }
}

#[test]
fn saved_model_predicts_identically() {
    let (model, test) = small_model();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    model.save(&path).unwrap();
    let loaded = ModelArtifact::load(&path).unwrap();
    let a = model.predict(&test.x, &test.drg, None).unwrap();
    let b = loaded.predict(&test.x, &test.drg, None).unwrap();
    assert_eq!(a, b);
}

#[test]
fn command_line_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("sim.conf"),
        "p = 6\nmdc_count = 2\ndrgs_per_mdc = 2\nn_per_drg = 50\nn_test_per_drg = 40\nshrink = 0.5\nseed = 3\n",
    )
    .unwrap();
    ok(hiernest(&["simulate", "--config", "sim.conf", "--out", "sim"], d));
    for f in ["train.csv", "test.csv", "hierarchy.csv", "truth.json"] {
        assert!(d.join("sim").join(f).exists(), "{f}");
    }
    ok(hiernest(
        &["fit", "--data", "sim/train.csv", "--hierarchy", "sim/hierarchy.csv", "--lambda-fraction", "0.1", "--out", "model.json"],
        d,
    ));
    ok(hiernest(
        &["fit", "--data", "sim/train.csv", "--hierarchy", "sim/hierarchy.csv", "--penalty", "pooled-lasso", "--folds", "3", "--n-lambda", "10", "--out", "pooled.json"],
        d,
    ));
    ok(hiernest(&["predict", "--model", "model.json", "--data", "sim/test.csv", "--out", "preds.csv"], d));
    let preds = std::fs::read_to_string(d.join("preds.csv")).unwrap();
    assert_eq!(preds.lines().count(), 1 + 4 * 40);
    assert!(preds.starts_with("row,drg,mdc,level,linear_predictor,probability,y"));
    ok(hiernest(&["evaluate", "--preds", "preds.csv", "--out", "metrics.json"], d));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("metrics.json")).unwrap()).unwrap();
    let mean = report["mean_auroc"].as_f64().unwrap();
    assert!(mean > 0.5 && mean <= 1.0);
    std::fs::write(d.join("grid.conf"), "penalty = oglasso\nalpha1 = 0.5, 1\nalpha2 = 1\nn_lambda = 6\n").unwrap();
    ok(hiernest(
        &["cv", "--data", "sim/train.csv", "--hierarchy", "sim/hierarchy.csv", "--grid", "grid.conf", "--folds", "3", "--out", "cv.json"],
        d,
    ));
    assert!(d.join("cv.csv").exists());
}

#[test]
fn non_binary_outcome_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("h.csv"), "drg,mdc\nA,M\nB,M\n").unwrap();
    let mut rows = String::from("y,drg,x1\n");
    for i in 0..20 {
        rows += &format!("{},{},{}\n", if i == 3 { 2 } else { i % 2 }, if i < 10 { "A" } else { "B" }, i);
    }
    std::fs::write(d.join("data.csv"), rows).unwrap();
    let out = hiernest(&["fit", "--data", "data.csv", "--hierarchy", "h.csv", "--lambda", "0.1", "--out", "m.json"], d);
    assert_eq!(out.status.code(), Some(2));
    let out = hiernest(&["fit", "--data", "data.csv", "--hierarchy", "missing.csv", "--lambda", "0.1", "--out", "m.json"], d);
    assert_eq!(out.status.code(), Some(2));
}

fn experiment_config(extra: &str) -> ExperimentConfig {
    let text = format!(
        "seed = 5\np = 6\nmdc_count = 2\ndrgs_per_mdc = 2\nn_per_drg = 50\nn_test_per_drg = 150\nfolds = 3\nn_lambda = 10\nlambda_ratio = 0.02\nalpha1 = 1\nalpha2 = 1\n{extra}"
    );
    ExperimentConfig::from_key_values(&KeyValues::parse(&text).unwrap()).unwrap()
}

#[test]
fn one_cell_one_replicate_gives_one_row_per_method() {
    let config = experiment_config("replicates = 1\n");
    let report = run_experiment(&config, |_, _| {}).unwrap();
    let methods: Vec<&str> = report.results.iter().map(|r| r.method.as_str()).collect();
    assert_eq!(methods, ["oglasso", "lasso", "pooled_lasso"]);
    let dir = tempfile::tempdir().unwrap();
    report.write(dir.path()).unwrap();
    let results = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
    assert_eq!(results.lines().count(), 4);
}

#[test]
fn pooled_lasso_keeps_up_without_subgroup_effects() {
    let config = experiment_config("replicates = 20\nsparsity_logit = -12\nmethods = oglasso, pooled_lasso\n");
    let report = run_experiment(&config, |_, _| {}).unwrap();
    let mean = |m: &str| report.summary.iter().find(|s| s.method == m && s.metric == "mean_auroc").unwrap().clone();
    let (og, pooled) = (mean("oglasso"), mean("pooled_lasso"));
    let overlap = (og.mean - pooled.mean).abs() <= 2.0 * (og.se + pooled.se);
    assert!(overlap, "oglasso {} +- {}, pooled {} +- {}", og.mean, og.se, pooled.mean, pooled.se);
}
