//! k-fold cross-validation over the lambda path and a grid of penalty mixes.
//!
//! Folds are stratified by outcome within DRG: rows are grouped into
//! (outcome, DRG) cells, each cell is shuffled, and the concatenated cells are
//! dealt to folds in turn. Cells smaller than `k` spread over distinct folds,
//! and since cells are ordered by outcome first the per-fold class counts differ
//! by at most one.
//!
//! Every fold is standardized and recounted on its own training rows and gets
//! its own `lambda_max`; fold paths use the same relative positions
//! `lambda_r / lambda_max` as the full-data path, and the selected index is
//! reported at the full-data lambda.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::{HierDataset, HierarchySpec};
use crate::design::Level;
use crate::metrics::{auroc, subgroup_report};
use crate::model::{Method, Problem};
use crate::solver::{FitPath, SolverConfig};

/// The default mix grid, `{0.25, 0.5, 1, 2}` squared.
pub fn default_alpha_grid() -> Vec<(f64, f64)> {
    let values = [0.25, 0.5, 1.0, 2.0];
    values
        .iter()
        .flat_map(|&a1| values.iter().map(move |&a2| (a1, a2)))
        .collect()
}

/// Out-of-fold score used for selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CvMetric {
    /// AUROC of the out-of-fold scores of all rows.
    Pooled,
    /// Mean of the per-fold AUROCs.
    FoldMean,
    /// Mean over DRGs of the AUROC of their out-of-fold scores.
    DrgMean,
}

impl std::str::FromStr for CvMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pooled" => Ok(CvMetric::Pooled),
            "fold_mean" => Ok(CvMetric::FoldMean),
            "drg_mean" => Ok(CvMetric::DrgMean),
            _ => Err(Error::InvalidConfig(format!("unknown selection metric `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvConfig {
    pub folds: usize,
    pub seed: u64,
    pub n_lambda: usize,
    pub lambda_ratio: f64,
    pub metric: CvMetric,
    /// Largest lambda within one standard error of the best score.
    pub one_se: bool,
    pub solver: SolverConfig,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            folds: 10,
            seed: 1,
            n_lambda: 100,
            lambda_ratio: 0.01,
            metric: CvMetric::Pooled,
            one_se: false,
            solver: SolverConfig::default(),
        }
    }
}

/// Fold index of every row.
pub fn assign_folds(y: &[f64], drg: &[String], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 folds, got {k}")));
    }
    if y.len() != drg.len() {
        return Err(Error::LabelMismatch { labels: drg.len(), rows: y.len() });
    }
    let positives = y.iter().filter(|&&v| v == 1.0).count();
    let negatives = y.len() - positives;
    if positives.min(negatives) < k {
        let (class, count) = if positives < negatives { (1, positives) } else { (0, negatives) };
        return Err(Error::InfeasibleFolds { folds: k, class, count });
    }
    let mut order: Vec<usize> = (0..y.len()).collect();
    order.sort_by(|&a, &b| y[a].total_cmp(&y[b]).then_with(|| drg[a].cmp(&drg[b])).then(a.cmp(&b)));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut start = 0;
    while start < order.len() {
        let (ya, da) = (y[order[start]], &drg[order[start]]);
        let mut end = start;
        while end < order.len() && y[order[end]] == ya && drg[order[end]] == *da {
            end += 1;
        }
        order[start..end].shuffle(&mut rng);
        start = end;
    }
    let mut folds = vec![0; y.len()];
    for (pos, &i) in order.iter().enumerate() {
        folds[i] = pos % k;
    }
    Ok(folds)
}

/// Fits `method` on every row outside `fold`, on the lambdas
/// `positions[r] * lambda_max(training rows)`.
pub fn fit_fold(
    data: &HierDataset,
    spec: &HierarchySpec,
    method: Method,
    folds: &[usize],
    fold: usize,
    positions: &[f64],
    solver: &SolverConfig,
) -> Result<(Problem, FitPath)> {
    let train: Vec<usize> = (0..data.n()).filter(|&i| folds[i] != fold).collect();
    let problem = Problem::new(&data.select_rows(&train), spec, method)?;
    let lmax = problem.lambda_max(solver)?;
    let lambdas: Vec<f64> = positions.iter().map(|r| r * lmax).collect();
    let path = problem.fit(&lambdas, solver)?;
    Ok((problem, path))
}

/// Scores of one (cell, lambda).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaScore {
    pub lambda: f64,
    pub pooled_auroc: f64,
    pub fold_mean_auroc: f64,
    /// Mean over DRGs with both classes; NaN when there are none.
    pub drg_mean_auroc: f64,
    /// Standard error of the per-fold AUROCs.
    pub se: f64,
    pub fold_aurocs: Vec<Option<f64>>,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub method: Method,
    pub lambda_max: f64,
    pub scores: Vec<LambdaScore>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub cell: usize,
    pub lambda_index: usize,
    pub lambda: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub folds: Vec<usize>,
    pub k: usize,
    pub seed: u64,
    pub metric: CvMetric,
    pub one_se: bool,
    pub cells: Vec<CellResult>,
    pub selected: Selection,
}

impl CvResult {
    /// Selection score of a (cell, lambda).
    pub fn score(&self, cell: usize, r: usize) -> f64 {
        let s = &self.cells[cell].scores[r];
        match self.metric {
            CvMetric::Pooled => s.pooled_auroc,
            CvMetric::FoldMean => s.fold_mean_auroc,
            CvMetric::DrgMean => s.drg_mean_auroc,
        }
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "cell", "method", "alpha1", "alpha2", "lambda_index", "lambda", "pooled_auroc", "fold_mean_auroc", "drg_mean_auroc", "se", "converged", "selected",
        ])?;
        for (c, cell) in self.cells.iter().enumerate() {
            let (a1, a2) = cell.method.alphas();
            for (r, s) in cell.scores.iter().enumerate() {
                let selected = c == self.selected.cell && r == self.selected.lambda_index;
                w.write_record([
                    c.to_string(),
                    cell.method.name().to_string(),
                    a1.to_string(),
                    a2.to_string(),
                    r.to_string(),
                    s.lambda.to_string(),
                    s.pooled_auroc.to_string(),
                    s.fold_mean_auroc.to_string(),
                    s.drg_mean_auroc.to_string(),
                    s.se.to_string(),
                    s.converged.to_string(),
                    selected.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(&mut f, self)?;
        writeln!(f)?;
        Ok(())
    }
}

/// Argmax of the selection score; ties go to the larger lambda, then the
/// smaller `alpha1`, then the smaller `alpha2`. With `one_se` set, the best
/// score minus its standard error is the bar and the same order picks among
/// the cells that clear it.
pub fn select_best(result: &CvResult) -> Selection {
    let mut candidates = Vec::new();
    for (c, cell) in result.cells.iter().enumerate() {
        for r in 0..cell.scores.len() {
            candidates.push((c, r));
        }
    }
    assert!(!candidates.is_empty(), "empty grid");
    let better = |a: (usize, usize), b: (usize, usize), by_score: bool| -> bool {
        let (sa, sb) = (result.score(a.0, a.1), result.score(b.0, b.1));
        if by_score && sa != sb {
            return sa > sb;
        }
        let (la, lb) = (result.cells[a.0].scores[a.1].lambda, result.cells[b.0].scores[b.1].lambda);
        if la != lb {
            return la > lb;
        }
        let (a1, a2) = result.cells[a.0].method.alphas();
        let (b1, b2) = result.cells[b.0].method.alphas();
        if a1 != b1 {
            return a1 < b1;
        }
        a2 < b2
    };
    let pick = |pool: &[(usize, usize)], by_score: bool| {
        pool.iter().copied().fold(pool[0], |best, x| if better(x, best, by_score) { x } else { best })
    };
    let mut best = pick(&candidates, true);
    if result.one_se {
        let bar = result.score(best.0, best.1) - result.cells[best.0].scores[best.1].se;
        let pool: Vec<(usize, usize)> = candidates.into_iter().filter(|&(c, r)| result.score(c, r) >= bar).collect();
        best = pick(&pool, false);
    }
    let (alpha1, alpha2) = result.cells[best.0].method.alphas();
    Selection {
        cell: best.0,
        lambda_index: best.1,
        lambda: result.cells[best.0].scores[best.1].lambda,
        alpha1,
        alpha2,
        score: result.score(best.0, best.1),
    }
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Cross-validates every method in `cells` over a shared fold assignment.
pub fn cross_validate(data: &HierDataset, spec: &HierarchySpec, cells: &[Method], config: &CvConfig) -> Result<CvResult> {
    if cells.is_empty() {
        return Err(Error::InvalidConfig("empty tuning grid".into()));
    }
    let k = config.folds;
    let folds = assign_folds(&data.y, &data.drg, k, config.seed)?;
    let full: Vec<(f64, Vec<f64>)> = cells
        .par_iter()
        .map(|&method| {
            let problem = Problem::new(data, spec, method)?;
            let lambdas = problem.lambda_path(config.n_lambda, config.lambda_ratio, &config.solver)?;
            Ok((lambdas[0], lambdas))
        })
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, usize)> = (0..cells.len()).flat_map(|c| (0..k).map(move |f| (c, f))).collect();
    // out-of-fold linear predictors: [job][lambda][held-out row]
    let fold_scores: Vec<(Vec<Vec<f64>>, Vec<bool>)> = jobs
        .par_iter()
        .map(|&(c, f)| {
            let (lmax, lambdas) = &full[c];
            let positions: Vec<f64> = lambdas.iter().map(|l| l / lmax).collect();
            let (problem, path) = fit_fold(data, spec, cells[c], &folds, f, &positions, &config.solver)?;
            let test: Vec<usize> = (0..data.n()).filter(|&i| folds[i] == f).collect();
            let held = data.select_rows(&test);
            let scores = path
                .solutions
                .iter()
                .map(|tree| problem.score(tree, &held.x, &held.drg))
                .collect::<Result<_>>()?;
            Ok((scores, path.diagnostics.iter().map(|d| d.converged).collect()))
        })
        .collect::<Result<_>>()?;

    let test_rows: Vec<Vec<usize>> = (0..k).map(|f| (0..data.n()).filter(|&i| folds[i] == f).collect()).collect();
    let mut results = Vec::with_capacity(cells.len());
    for (c, &method) in cells.iter().enumerate() {
        let (lmax, lambdas) = &full[c];
        let mut scores = Vec::with_capacity(lambdas.len());
        for (r, &lambda) in lambdas.iter().enumerate() {
            let mut pooled = vec![0.0; data.n()];
            let mut per_fold = Vec::with_capacity(k);
            let mut converged = true;
            for f in 0..k {
                let (s, conv) = &fold_scores[c * k + f];
                converged &= conv[r];
                for (&i, &v) in test_rows[f].iter().zip(&s[r]) {
                    pooled[i] = v;
                }
                let labels: Vec<f64> = test_rows[f].iter().map(|&i| data.y[i]).collect();
                per_fold.push(auroc(&s[r], &labels).ok());
            }
            let valid: Vec<f64> = per_fold.iter().flatten().copied().collect();
            let (fold_mean_auroc, se) = if valid.is_empty() { (f64::NAN, f64::NAN) } else { mean_se(&valid) };
            let drg_mean_auroc = subgroup_report(&pooled, &data.y, &data.drg, Level::Drg).map_or(f64::NAN, |r| r.mean_auroc);
            scores.push(LambdaScore {
                lambda,
                pooled_auroc: auroc(&pooled, &data.y)?,
                fold_mean_auroc,
                drg_mean_auroc,
                se,
                fold_aurocs: per_fold,
                converged,
            });
        }
        results.push(CellResult {
            method,
            lambda_max: *lmax,
            scores,
        });
    }
    let mut result = CvResult {
        folds,
        k,
        seed: config.seed,
        metric: config.metric,
        one_se: config.one_se,
        cells: results,
        selected: Selection {
            cell: 0,
            lambda_index: 0,
            lambda: 0.0,
            alpha1: 0.0,
            alpha2: 0.0,
            score: 0.0,
        },
    };
    result.selected = select_best(&result);
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(n: usize) -> (Vec<f64>, Vec<String>) {
        let y = (0..n).map(|i| (i % 3 == 0) as u8 as f64).collect();
        let drg = (0..n).map(|i| format!("D{}", i % 4)).collect();
        (y, drg)
    }

    #[test]
    fn folds_partition_evenly() {
        let (y, drg) = labels(100);
        let folds = assign_folds(&y, &drg, 10, 3).unwrap();
        let mut sizes = [0; 10];
        for &f in &folds {
            sizes[f] += 1;
        }
        assert_eq!(sizes, [10; 10]);
        assert_eq!(folds, assign_folds(&y, &drg, 10, 3).unwrap());
    }

    #[test]
    fn folds_balance_classes() {
        let (y, drg) = labels(90);
        let folds = assign_folds(&y, &drg, 5, 9).unwrap();
        for f in 0..5 {
            let pos = (0..90).filter(|&i| folds[i] == f && y[i] == 1.0).count();
            assert_eq!(pos, 6);
        }
    }

    #[test]
    fn infeasible_folds() {
        let (mut y, drg) = labels(30);
        y.iter_mut().for_each(|v| *v = 0.0);
        y[0] = 1.0;
        assert!(matches!(assign_folds(&y, &drg, 2, 1), Err(Error::InfeasibleFolds { .. })));
        assert!(assign_folds(&y, &drg, 1, 1).is_err());
    }

    fn synthetic(scores: &[&[f64]], methods: &[Method], lambdas: &[&[f64]]) -> CvResult {
        let cells = methods
            .iter()
            .zip(scores.iter().zip(lambdas))
            .map(|(&method, (s, l))| CellResult {
                method,
                lambda_max: l[0],
                scores: s
                    .iter()
                    .zip(l.iter())
                    .map(|(&a, &lambda)| LambdaScore {
                        lambda,
                        pooled_auroc: a,
                        fold_mean_auroc: a,
                        drg_mean_auroc: a,
                        se: 0.05,
                        fold_aurocs: vec![],
                        converged: true,
                    })
                    .collect(),
            })
            .collect();
        CvResult {
            folds: vec![],
            k: 2,
            seed: 0,
            metric: CvMetric::Pooled,
            one_se: false,
            cells,
            selected: Selection {
                cell: 0,
                lambda_index: 0,
                lambda: 0.0,
                alpha1: 0.0,
                alpha2: 0.0,
                score: 0.0,
            },
        }
    }

    #[test]
    fn tie_rules() {
        let og = |a1, a2| Method::Oglasso { alpha1: a1, alpha2: a2 };
        let r = synthetic(&[&[0.7, 0.7]], &[og(1.0, 1.0)], &[&[1.0, 0.5]]);
        assert_eq!(select_best(&r).lambda_index, 0);
        let r = synthetic(&[&[0.7], &[0.7]], &[og(1.0, 0.5), og(0.5, 2.0)], &[&[1.0], &[1.0]]);
        assert_eq!(select_best(&r).cell, 1);
        let r = synthetic(&[&[0.7], &[0.7]], &[og(0.5, 1.0), og(0.5, 0.25)], &[&[1.0], &[1.0]]);
        assert_eq!(select_best(&r).cell, 1);
        let mut r = synthetic(&[&[0.70, 0.72, 0.74]], &[og(1.0, 1.0)], &[&[1.0, 0.5, 0.25]]);
        assert_eq!(select_best(&r).lambda_index, 2);
        r.one_se = true;
        assert_eq!(select_best(&r).lambda_index, 0);
    }
}
