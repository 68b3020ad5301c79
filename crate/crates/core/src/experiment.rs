//! Simulation study: for each scenario and replicate, simulate training and
//! test data, tune each arm by cross-validation, refit on the full training set
//! and score per-DRG AUROC and AUPRC on the test set.
//!
//! Config keys (all optional):
//!
//! | key | default | meaning |
//! |---|---|---|
//! | `seed` | 1 | base seed |
//! | `p`, `mdc_count`, `drgs_per_mdc` | 60, 10, 4 | simulation shape |
//! | `dispersion`, `target_event_rate` | 1, 0.17 | simulation settings |
//! | `n_per_drg` | 30 | training rows per DRG (list) |
//! | `shrink` | 1 | MDC effect multiplier (list) |
//! | `sparsity_logit` | 0 | `logit(gamma)` (list) |
//! | `replicates` | 20 | replicates per scenario |
//! | `n_test_per_drg` | 500 | test rows per DRG |
//! | `methods` | `oglasso, lasso, pooled_lasso` | arms |
//! | `alpha1`, `alpha2` | 0.25, 0.5, 1, 2 | mix grid (crossed) for `oglasso` |
//! | `folds` | 10 | cross-validation folds |
//! | `n_lambda`, `lambda_ratio` | 100, 0.01 | lambda path |
//! | `coef_tol`, `obj_tol`, `max_sweeps` | solver defaults | solver stopping |
//! | `cv_metric` | `pooled` | `pooled`, `fold_mean` or `drg_mean` |
//! | `one_se` | false | one-standard-error selection |
//!
//! Outputs are `results.csv` (one row per scenario, replicate and arm),
//! `summary.csv` (means and standard errors per scenario and arm),
//! `comparison.csv` (paired differences against `pooled_lasso`) and
//! `figure.csv` (long format: shrink, sparsity_logit, n_per_drg, method,
//! metric, mean, se).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::KeyValues;
use crate::design::Level;
use crate::error::{Error, Result};
use crate::metrics::subgroup_report;
use crate::model::{FitSummary, Method, Problem};
use crate::simulate::{draw_truth, simulate_train_test, SimConfig};
use crate::solver::SolverConfig;
use crate::tuning::{cross_validate, CvConfig};

pub const BASELINE: &str = "pooled_lasso";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Oglasso,
    Lasso,
    PooledLasso,
}

impl Arm {
    pub fn name(&self) -> &'static str {
        match self {
            Arm::Oglasso => "oglasso",
            Arm::Lasso => "lasso",
            Arm::PooledLasso => "pooled_lasso",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "oglasso" => Ok(Arm::Oglasso),
            "lasso" => Ok(Arm::Lasso),
            "pooled_lasso" => Ok(Arm::PooledLasso),
            _ => Err(Error::InvalidConfig(format!("unknown method `{s}`"))),
        }
    }

    fn cells(&self, grid: &[(f64, f64)]) -> Vec<Method> {
        match self {
            Arm::Oglasso => grid.iter().map(|&(alpha1, alpha2)| Method::Oglasso { alpha1, alpha2 }).collect(),
            Arm::Lasso => vec![Method::Lasso],
            Arm::PooledLasso => vec![Method::PooledLasso],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Scenario-independent simulation settings; `n_per_drg`, `shrink`,
    /// `sparsity_logit` and `seed` are overridden per run.
    pub sim: SimConfig,
    pub n_per_drg: Vec<usize>,
    pub shrink: Vec<f64>,
    pub sparsity_logit: Vec<f64>,
    pub replicates: usize,
    pub n_test_per_drg: usize,
    pub arms: Vec<Arm>,
    pub alpha_grid: Vec<(f64, f64)>,
    pub cv: CvConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            sim: SimConfig::default(),
            n_per_drg: vec![30],
            shrink: vec![1.0],
            sparsity_logit: vec![0.0],
            replicates: 20,
            n_test_per_drg: 500,
            arms: vec![Arm::Oglasso, Arm::Lasso, Arm::PooledLasso],
            alpha_grid: crate::tuning::default_alpha_grid(),
            cv: CvConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        let d = Self::default();
        let sim = SimConfig {
            p: kv.get("p", d.sim.p)?,
            mdc_count: kv.get("mdc_count", d.sim.mdc_count)?,
            drgs_per_mdc: kv.get("drgs_per_mdc", d.sim.drgs_per_mdc)?,
            dispersion: kv.get("dispersion", d.sim.dispersion)?,
            target_event_rate: kv.get("target_event_rate", d.sim.target_event_rate)?,
            seed: kv.get("seed", d.sim.seed)?,
            ..d.sim
        };
        let names: Vec<String> = kv.get_list("methods", d.arms.iter().map(|a| a.name().to_string()).collect())?;
        let arms = names.iter().map(|s| Arm::parse(s)).collect::<Result<Vec<_>>>()?;
        let a1: Vec<f64> = kv.get_list("alpha1", vec![0.25, 0.5, 1.0, 2.0])?;
        let a2: Vec<f64> = kv.get_list("alpha2", vec![0.25, 0.5, 1.0, 2.0])?;
        let solver_default = SolverConfig::default();
        let solver = SolverConfig {
            coef_tol: kv.get("coef_tol", solver_default.coef_tol)?,
            obj_tol: kv.get("obj_tol", solver_default.obj_tol)?,
            max_sweeps: kv.get("max_sweeps", solver_default.max_sweeps)?,
            ..solver_default
        };
        let cv = CvConfig {
            folds: kv.get("folds", d.cv.folds)?,
            seed: sim.seed,
            n_lambda: kv.get("n_lambda", d.cv.n_lambda)?,
            lambda_ratio: kv.get("lambda_ratio", d.cv.lambda_ratio)?,
            metric: kv.get("cv_metric", d.cv.metric)?,
            one_se: kv.get("one_se", false)?,
            solver,
        };
        let config = Self {
            sim,
            n_per_drg: kv.get_list("n_per_drg", d.n_per_drg)?,
            shrink: kv.get_list("shrink", d.shrink)?,
            sparsity_logit: kv.get_list("sparsity_logit", d.sparsity_logit)?,
            replicates: kv.get("replicates", d.replicates)?,
            n_test_per_drg: kv.get("n_test_per_drg", d.n_test_per_drg)?,
            arms,
            alpha_grid: a1.iter().flat_map(|&x| a2.iter().map(move |&y| (x, y))).collect(),
            cv,
        };
        kv.finish()?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_per_drg.is_empty() || self.shrink.is_empty() || self.sparsity_logit.is_empty() {
            return Err(Error::InvalidConfig("scenario lists must be nonempty".into()));
        }
        if self.replicates == 0 || self.n_test_per_drg == 0 || self.arms.is_empty() {
            return Err(Error::InvalidConfig("replicates, n_test_per_drg and methods must be nonempty".into()));
        }
        if self.arms.contains(&Arm::Oglasso) && self.alpha_grid.is_empty() {
            return Err(Error::InvalidConfig("empty alpha grid".into()));
        }
        for s in self.scenarios() {
            self.sim_config(&s, 0).validate()?;
        }
        Ok(())
    }

    /// Scenario grid in `n_per_drg`, `shrink`, `sparsity_logit` order.
    pub fn scenarios(&self) -> Vec<Scenario> {
        let mut out = Vec::new();
        for &n_per_drg in &self.n_per_drg {
            for &shrink in &self.shrink {
                for &sparsity_logit in &self.sparsity_logit {
                    out.push(Scenario {
                        index: out.len(),
                        n_per_drg,
                        shrink,
                        sparsity_logit,
                    });
                }
            }
        }
        out
    }

    pub fn sim_config(&self, scenario: &Scenario, replicate: usize) -> SimConfig {
        SimConfig {
            n_per_drg: scenario.n_per_drg,
            shrink: scenario.shrink,
            sparsity_logit: scenario.sparsity_logit,
            seed: replicate_seed(self.sim.seed, scenario.index, replicate),
            ..self.sim.clone()
        }
    }
}

fn replicate_seed(base: u64, scenario: usize, replicate: usize) -> u64 {
    base.wrapping_mul(1_000_003).wrapping_add((scenario as u64) << 32).wrapping_add(replicate as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub index: usize,
    pub n_per_drg: usize,
    pub shrink: f64,
    pub sparsity_logit: f64,
}

/// One arm on one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub scenario: Scenario,
    pub replicate: usize,
    pub seed: u64,
    pub method: String,
    pub alpha1: f64,
    pub alpha2: f64,
    pub lambda: f64,
    pub lambda_index: usize,
    pub cv_auroc: f64,
    pub mean_auroc: f64,
    pub worst_auroc: f64,
    pub mean_auprc: f64,
    pub worst_auprc: f64,
    pub skipped_groups: usize,
    pub fit: FitSummary,
    pub cv_converged: bool,
}

/// Runs every arm on one simulated replicate.
pub fn run_replicate(config: &ExperimentConfig, scenario: &Scenario, replicate: usize) -> Result<Vec<ArmResult>> {
    let sim = config.sim_config(scenario, replicate);
    let truth = draw_truth(&sim)?;
    let spec = truth.spec()?;
    let (train, test) = simulate_train_test(&truth, config.n_test_per_drg)?;
    let cv = CvConfig {
        seed: sim.seed,
        ..config.cv.clone()
    };
    let mut out = Vec::with_capacity(config.arms.len());
    for arm in &config.arms {
        let cells = arm.cells(&config.alpha_grid);
        let result = cross_validate(&train, &spec, &cells, &cv)?;
        let sel = result.selected;
        let cell = &result.cells[sel.cell];
        let problem = Problem::new(&train, &spec, cell.method)?;
        // the path is only needed down to the selected lambda
        let lambdas: Vec<f64> = cell.scores[..=sel.lambda_index].iter().map(|s| s.lambda).collect();
        let path = problem.fit(&lambdas, &cv.solver)?;
        let tree = &path.solutions[sel.lambda_index];
        let scores = problem.score(tree, &test.x, &test.drg)?;
        let report = subgroup_report(&scores, &test.y, &test.drg, Level::Drg)?;
        out.push(ArmResult {
            scenario: *scenario,
            replicate,
            seed: sim.seed,
            method: arm.name().to_string(),
            alpha1: sel.alpha1,
            alpha2: sel.alpha2,
            lambda: sel.lambda,
            lambda_index: sel.lambda_index,
            cv_auroc: sel.score,
            mean_auroc: report.mean_auroc,
            worst_auroc: report.worst_auroc,
            mean_auprc: report.mean_auprc,
            worst_auprc: report.worst_auprc,
            skipped_groups: report.skipped().count(),
            fit: FitSummary::new(&path.diagnostics[sel.lambda_index], tree),
            cv_converged: cell.scores.iter().all(|s| s.converged),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scenario: Scenario,
    pub method: String,
    pub metric: String,
    pub replicates: usize,
    pub mean: f64,
    pub se: f64,
}

/// Paired comparison of an arm against the baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub scenario: Scenario,
    pub method: String,
    pub metric: String,
    pub replicates: usize,
    pub mean_diff: f64,
    pub se_diff: f64,
    /// Replicates where the arm is at least as good as the baseline.
    pub wins: usize,
}

impl ComparisonRow {
    pub fn interval(&self) -> (f64, f64) {
        (self.mean_diff - 2.0 * self.se_diff, self.mean_diff + 2.0 * self.se_diff)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub results: Vec<ArmResult>,
    pub summary: Vec<SummaryRow>,
    pub comparisons: Vec<ComparisonRow>,
}

const METRICS: [&str; 4] = ["mean_auroc", "worst_auroc", "mean_auprc", "worst_auprc"];

fn metric(r: &ArmResult, name: &str) -> f64 {
    match name {
        "mean_auroc" => r.mean_auroc,
        "worst_auroc" => r.worst_auroc,
        "mean_auprc" => r.mean_auprc,
        _ => r.worst_auprc,
    }
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

impl ExperimentReport {
    pub fn new(config: &ExperimentConfig, results: Vec<ArmResult>) -> Self {
        let mut summary = Vec::new();
        let mut comparisons = Vec::new();
        for scenario in config.scenarios() {
            let of = |arm: &str| -> Vec<&ArmResult> {
                results.iter().filter(|r| r.scenario.index == scenario.index && r.method == arm).collect()
            };
            let baseline = of(BASELINE);
            for arm in &config.arms {
                let rows = of(arm.name());
                for m in METRICS {
                    let values: Vec<f64> = rows.iter().map(|r| metric(r, m)).collect();
                    let (mean, se) = mean_se(&values);
                    summary.push(SummaryRow {
                        scenario,
                        method: arm.name().into(),
                        metric: m.into(),
                        replicates: values.len(),
                        mean,
                        se,
                    });
                    if *arm == Arm::PooledLasso || baseline.is_empty() {
                        continue;
                    }
                    let diffs: Vec<f64> = rows.iter().zip(&baseline).map(|(a, b)| metric(a, m) - metric(b, m)).collect();
                    let (mean_diff, se_diff) = mean_se(&diffs);
                    comparisons.push(ComparisonRow {
                        scenario,
                        method: arm.name().into(),
                        metric: m.into(),
                        replicates: diffs.len(),
                        mean_diff,
                        se_diff,
                        wins: diffs.iter().filter(|&&d| d >= 0.0).count(),
                    });
                }
            }
        }
        Self {
            results,
            summary,
            comparisons,
        }
    }

    pub fn comparison(&self, scenario: usize, method: &str, metric: &str) -> Option<&ComparisonRow> {
        self.comparisons
            .iter()
            .find(|c| c.scenario.index == scenario && c.method == method && c.metric == metric)
    }

    /// Writes `results.csv`, `summary.csv`, `comparison.csv` and `figure.csv`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join("results.csv"))?;
        w.write_record([
            "scenario", "n_per_drg", "shrink", "sparsity_logit", "replicate", "seed", "method", "alpha1", "alpha2", "lambda", "lambda_index",
            "cv_auroc", "mean_auroc", "worst_auroc", "mean_auprc", "worst_auprc", "skipped_groups", "nonzero_overall", "nonzero_mdc",
            "nonzero_drg", "sweeps", "converged",
        ])?;
        for r in &self.results {
            let s = &r.scenario;
            w.write_record([
                s.index.to_string(),
                s.n_per_drg.to_string(),
                s.shrink.to_string(),
                s.sparsity_logit.to_string(),
                r.replicate.to_string(),
                r.seed.to_string(),
                r.method.clone(),
                r.alpha1.to_string(),
                r.alpha2.to_string(),
                r.lambda.to_string(),
                r.lambda_index.to_string(),
                r.cv_auroc.to_string(),
                r.mean_auroc.to_string(),
                r.worst_auroc.to_string(),
                r.mean_auprc.to_string(),
                r.worst_auprc.to_string(),
                r.skipped_groups.to_string(),
                r.fit.nonzero_overall.to_string(),
                r.fit.nonzero_mdc.to_string(),
                r.fit.nonzero_drg.to_string(),
                r.fit.sweeps.to_string(),
                (r.fit.converged && r.cv_converged).to_string(),
            ])?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("summary.csv"))?;
        let mut fig = csv::Writer::from_path(dir.join("figure.csv"))?;
        w.write_record(["scenario", "n_per_drg", "shrink", "sparsity_logit", "method", "metric", "replicates", "mean", "se"])?;
        fig.write_record(["shrink", "sparsity_logit", "n_per_drg", "method", "metric", "mean", "se"])?;
        for r in &self.summary {
            let s = &r.scenario;
            w.write_record([
                s.index.to_string(),
                s.n_per_drg.to_string(),
                s.shrink.to_string(),
                s.sparsity_logit.to_string(),
                r.method.clone(),
                r.metric.clone(),
                r.replicates.to_string(),
                r.mean.to_string(),
                r.se.to_string(),
            ])?;
            fig.write_record([
                s.shrink.to_string(),
                s.sparsity_logit.to_string(),
                s.n_per_drg.to_string(),
                r.method.clone(),
                r.metric.clone(),
                r.mean.to_string(),
                r.se.to_string(),
            ])?;
        }
        w.flush()?;
        fig.flush()?;

        let mut w = csv::Writer::from_path(dir.join("comparison.csv"))?;
        w.write_record([
            "scenario", "n_per_drg", "shrink", "sparsity_logit", "method", "baseline", "metric", "replicates", "mean_diff", "se_diff", "lower_2se",
            "upper_2se", "wins",
        ])?;
        for c in &self.comparisons {
            let s = &c.scenario;
            let (lo, hi) = c.interval();
            w.write_record([
                s.index.to_string(),
                s.n_per_drg.to_string(),
                s.shrink.to_string(),
                s.sparsity_logit.to_string(),
                c.method.clone(),
                BASELINE.to_string(),
                c.metric.clone(),
                c.replicates.to_string(),
                c.mean_diff.to_string(),
                c.se_diff.to_string(),
                lo.to_string(),
                hi.to_string(),
                c.wins.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs every scenario and replicate; `progress` is called after each replicate.
pub fn run_experiment(config: &ExperimentConfig, mut progress: impl FnMut(&Scenario, usize)) -> Result<ExperimentReport> {
    config.validate()?;
    let mut results = Vec::new();
    for scenario in config.scenarios() {
        for rep in 0..config.replicates {
            results.extend(run_replicate(config, &scenario, rep)?);
            progress(&scenario, rep);
        }
    }
    Ok(ExperimentReport::new(config, results))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_parsing() {
        let kv = KeyValues::parse("seed = 3\nn_per_drg = 30, 50\nalpha1 = 0.5\nalpha2 = 0.5, 1\nmethods = oglasso, pooled_lasso\nfolds = 5").unwrap();
        let c = ExperimentConfig::from_key_values(&kv).unwrap();
        assert_eq!(c.scenarios().len(), 2);
        assert_eq!(c.alpha_grid, vec![(0.5, 0.5), (0.5, 1.0)]);
        assert_eq!(c.arms, vec![Arm::Oglasso, Arm::PooledLasso]);
        assert_eq!(c.cv.folds, 5);
        assert!(ExperimentConfig::from_key_values(&KeyValues::parse("methods = ridge").unwrap()).is_err());
        assert!(ExperimentConfig::from_key_values(&KeyValues::parse("folds_ = 3").unwrap()).is_err());
    }

    #[test]
    fn replicate_seeds_differ() {
        assert_ne!(replicate_seed(1, 0, 1), replicate_seed(1, 0, 2));
        assert_ne!(replicate_seed(1, 0, 0), replicate_seed(1, 1, 0));
    }
}
