use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use hiernest::config::KeyValues;
use hiernest::data::{load_csv_dataset, RawTable};
use hiernest::design::Level;
use hiernest::experiment::{run_experiment, ExperimentConfig};
use hiernest::metrics::subgroup_report;
use hiernest::model::{fit_model, Method, ModelArtifact, Problem};
use hiernest::simulate::{draw_truth, simulate_train_test, write_dataset_csv, SimConfig};
use hiernest::tuning::{cross_validate, CvConfig, CvMetric};
use hiernest::{Error, SolverConfig};

#[derive(Parser)]
#[command(name = "hiernest", version, about = "Hierarchical nested subgroup logistic regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PenaltyArg {
    Oglasso,
    Lasso,
    PooledLasso,
}

#[derive(Clone, Copy, ValueEnum)]
enum GroupArg {
    Drg,
    Mdc,
}

#[derive(clap::Args, Clone)]
struct SolverArgs {
    /// Coefficient-change stopping tolerance.
    #[arg(long, default_value_t = 1e-7)]
    coef_tol: f64,
    /// Relative objective-change stopping tolerance.
    #[arg(long, default_value_t = 1e-10)]
    obj_tol: f64,
    #[arg(long, default_value_t = 10_000)]
    max_sweeps: usize,
    /// Exit with status 3 when any fit fails to converge.
    #[arg(long)]
    strict: bool,
}

impl SolverArgs {
    fn config(&self) -> SolverConfig {
        SolverConfig {
            coef_tol: self.coef_tol,
            obj_tol: self.obj_tol,
            max_sweeps: self.max_sweeps,
            ..SolverConfig::default()
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate training and test data from a key = value config.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit one model and write it as JSON.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        hierarchy: PathBuf,
        #[arg(long, value_enum, default_value = "oglasso")]
        penalty: PenaltyArg,
        /// Penalty level; without it (or --lambda-fraction) lambda is chosen by cross-validation.
        #[arg(long)]
        lambda: Option<f64>,
        /// Penalty level as a fraction of lambda_max.
        #[arg(long, conflicts_with = "lambda")]
        lambda_fraction: Option<f64>,
        #[arg(long, default_value_t = 1.0)]
        alpha1: f64,
        #[arg(long, default_value_t = 1.0)]
        alpha2: f64,
        #[arg(long, default_value_t = 10)]
        folds: usize,
        #[arg(long, default_value_t = 100)]
        n_lambda: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cross-validate over the lambda path and a grid of penalty mixes.
    Cv {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        hierarchy: PathBuf,
        /// key = value file: penalty, alpha1, alpha2, n_lambda, lambda_ratio, metric, one_se.
        #[arg(long)]
        grid: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        folds: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[command(flatten)]
        solver: SolverArgs,
        /// JSON result; the grid table goes next to it with a .csv extension.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a CSV with a fitted model.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-group AUROC and AUPRC of a predictions CSV.
    Evaluate {
        #[arg(long)]
        preds: PathBuf,
        #[arg(long, default_value = "y")]
        labels_col: String,
        #[arg(long, value_enum, default_value = "drg")]
        group_col: GroupArg,
        #[arg(long, default_value = "probability")]
        score_col: String,
        /// Report file; `.json` writes the JSON summary, anything else CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the simulation study from a key = value config.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        strict: bool,
    },
}

enum Failure {
    Error(Error),
    NotConverged,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Error(e.into())
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Error(e.into())
    }
}

type Outcome = std::result::Result<(), Failure>;

fn check_converged(converged: bool, strict: bool, what: &str) -> Outcome {
    if converged {
        return Ok(());
    }
    eprintln!("warning: {what} did not converge");
    if strict {
        Err(Failure::NotConverged)
    } else {
        Ok(())
    }
}

fn method(penalty: PenaltyArg, alpha1: f64, alpha2: f64) -> Method {
    match penalty {
        PenaltyArg::Oglasso => Method::Oglasso { alpha1, alpha2 },
        PenaltyArg::Lasso => Method::Lasso,
        PenaltyArg::PooledLasso => Method::PooledLasso,
    }
}

fn simulate(config: &Path, out: &Path) -> Outcome {
    let kv = KeyValues::read(config)?;
    let d = SimConfig::default();
    let sim = SimConfig {
        p: kv.get("p", d.p)?,
        mdc_count: kv.get("mdc_count", d.mdc_count)?,
        drgs_per_mdc: kv.get("drgs_per_mdc", d.drgs_per_mdc)?,
        n_per_drg: kv.get("n_per_drg", d.n_per_drg)?,
        dispersion: kv.get("dispersion", d.dispersion)?,
        sparsity_logit: kv.get("sparsity_logit", d.sparsity_logit)?,
        shrink: kv.get("shrink", d.shrink)?,
        target_event_rate: kv.get("target_event_rate", d.target_event_rate)?,
        seed: kv.get("seed", d.seed)?,
    };
    let n_test: usize = kv.get("n_test_per_drg", 500)?;
    kv.finish()?;
    let truth = draw_truth(&sim)?;
    let (train, test) = simulate_train_test(&truth, n_test.max(1))?;
    std::fs::create_dir_all(out)?;
    write_dataset_csv(&train, out.join("train.csv"))?;
    if n_test > 0 {
        write_dataset_csv(&test, out.join("test.csv"))?;
    }
    truth.spec()?.write_pairs_csv(out.join("hierarchy.csv"))?;
    truth.write_json(out.join("truth.json"))?;
    eprintln!("wrote {} training rows to {}", train.n(), out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn fit(
    data: &Path,
    hierarchy: &Path,
    m: Method,
    lambda: Option<f64>,
    lambda_fraction: Option<f64>,
    folds: usize,
    n_lambda: usize,
    seed: u64,
    solver: &SolverArgs,
    out: &Path,
) -> Outcome {
    let loaded = load_csv_dataset(data, hierarchy)?;
    for d in &loaded.report.small_groups {
        eprintln!("warning: DRG `{d}` has few rows");
    }
    let config = solver.config();
    let lambda = match (lambda, lambda_fraction) {
        (Some(l), _) => l,
        (None, Some(f)) => f * Problem::new(&loaded.dataset, &loaded.spec, m)?.lambda_max(&config)?,
        (None, None) => {
            let cv = CvConfig {
                folds,
                seed,
                n_lambda,
                solver: config.clone(),
                ..CvConfig::default()
            };
            let result = cross_validate(&loaded.dataset, &loaded.spec, &[m], &cv)?;
            eprintln!(
                "cross-validation selected lambda {} (index {}, AUROC {:.4})",
                result.selected.lambda, result.selected.lambda_index, result.selected.score
            );
            result.selected.lambda
        }
    };
    let (mut model, path) = fit_model(&loaded.dataset, &loaded.spec, m, lambda, &config)?;
    model.preprocessor = Some(loaded.preprocessor);
    model.provenance.seed = Some(seed);
    model.save(out)?;
    let d = &model.diagnostics;
    eprintln!(
        "lambda {lambda}: {} overall, {} MDC, {} DRG nonzero effects",
        d.nonzero_overall, d.nonzero_mdc, d.nonzero_drg
    );
    check_converged(path.converged(), solver.strict, "fit")
}

fn cv(data: &Path, hierarchy: &Path, grid: Option<&Path>, folds: usize, seed: u64, solver: &SolverArgs, out: &Path) -> Outcome {
    let loaded = load_csv_dataset(data, hierarchy)?;
    let kv = match grid {
        Some(p) => KeyValues::read(p)?,
        None => KeyValues::default(),
    };
    let d = CvConfig::default();
    let penalty: String = kv.get("penalty", "oglasso".to_string())?;
    let a1: Vec<f64> = kv.get_list("alpha1", vec![0.25, 0.5, 1.0, 2.0])?;
    let a2: Vec<f64> = kv.get_list("alpha2", vec![0.25, 0.5, 1.0, 2.0])?;
    let cells: Vec<Method> = match penalty.as_str() {
        "oglasso" => a1
            .iter()
            .flat_map(|&alpha1| a2.iter().map(move |&alpha2| Method::Oglasso { alpha1, alpha2 }))
            .collect(),
        "lasso" => vec![Method::Lasso],
        "pooled_lasso" => vec![Method::PooledLasso],
        other => return Err(Error::InvalidConfig(format!("unknown penalty `{other}`")).into()),
    };
    let config = CvConfig {
        folds,
        seed,
        n_lambda: kv.get("n_lambda", d.n_lambda)?,
        lambda_ratio: kv.get("lambda_ratio", d.lambda_ratio)?,
        metric: kv.get("metric", CvMetric::Pooled)?,
        one_se: kv.get("one_se", false)?,
        solver: solver.config(),
    };
    kv.finish()?;
    let result = cross_validate(&loaded.dataset, &loaded.spec, &cells, &config)?;
    result.write_json(out)?;
    result.write_csv(out.with_extension("csv"))?;
    let s = result.selected;
    println!("selected lambda={} alpha1={} alpha2={} auroc={:.6}", s.lambda, s.alpha1, s.alpha2, s.score);
    let converged = result.cells.iter().all(|c| c.scores.iter().all(|s| s.converged));
    check_converged(converged, solver.strict, "cross-validation")
}

fn predict(model_path: &Path, data: &Path, out: &Path) -> Outcome {
    let model = ModelArtifact::load(model_path)?;
    let table = RawTable::read(data)?;
    let drg: Vec<String> = table.column("drg")?.iter().map(|s| s.trim().to_string()).collect();
    let mdc: Option<Vec<String>> = table.column("mdc").ok().map(|c| c.iter().map(|s| s.trim().to_string()).collect());
    let preds = match &model.preprocessor {
        Some(pre) => model.predict(&pre.transform(&table)?, &drg, mdc.as_deref())?,
        None => {
            let names: Vec<String> = table.header.clone();
            let mut x = ndarray::Array2::zeros((table.rows.len(), names.len()));
            for (i, row) in table.rows.iter().enumerate() {
                for (k, cell) in row.iter().enumerate() {
                    x[[i, k]] = cell.trim().parse().unwrap_or(f64::NAN);
                }
            }
            model.predict_named(&x, &names, &drg, mdc.as_deref())?
        }
    };
    let spec = model.spec()?;
    let y = table.column("y").ok();
    let mut w = csv::Writer::from_path(out)?;
    let mut header = vec!["row", "drg", "mdc", "level", "linear_predictor", "probability"];
    if y.is_some() {
        header.push("y");
    }
    w.write_record(&header)?;
    for (i, p) in preds.iter().enumerate() {
        let parent = match spec.drg_index(&drg[i]) {
            Some(d) => spec.mdc_ids()[spec.parent(d)].clone(),
            None => mdc.as_ref().map(|m| m[i].clone()).unwrap_or_default(),
        };
        let mut rec = vec![
            i.to_string(),
            drg[i].clone(),
            parent,
            p.level.as_str().to_string(),
            p.linear_predictor.to_string(),
            p.probability.to_string(),
        ];
        if let Some(y) = &y {
            rec.push(y[i].trim().to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    let fallback = preds.iter().filter(|p| p.level != Level::Drg).count();
    eprintln!("scored {} rows ({fallback} at a fallback level)", preds.len());
    Ok(())
}

fn evaluate(preds: &Path, labels_col: &str, group: GroupArg, score_col: &str, out: &Path) -> Outcome {
    let table = RawTable::read(preds)?;
    let labels = hiernest::data::parse_outcome(&table.column(labels_col)?)?;
    let scores: Vec<f64> = table
        .column(score_col)?
        .iter()
        .map(|c| c.trim().parse().map_err(|_| Error::MalformedCsv(format!("score `{c}`"))))
        .collect::<hiernest::Result<_>>()?;
    let (col, level) = match group {
        GroupArg::Drg => ("drg", Level::Drg),
        GroupArg::Mdc => ("mdc", Level::Mdc),
    };
    let groups = table.column(col)?;
    let report = subgroup_report(&scores, &labels, &groups, level)?;
    if out.extension().is_some_and(|e| e == "json") {
        report.write_json(out)?;
    } else {
        report.write_csv(out)?;
    }
    println!(
        "groups={} skipped={} mean_auroc={:.6} worst_auroc={:.6} mean_auprc={:.6} worst_auprc={:.6}",
        report.evaluated().count(),
        report.skipped().count(),
        report.mean_auroc,
        report.worst_auroc,
        report.mean_auprc,
        report.worst_auprc
    );
    Ok(())
}

fn experiment(config: &Path, out: &Path, strict: bool) -> Outcome {
    let kv = KeyValues::read(config)?;
    let config = ExperimentConfig::from_key_values(&kv)?;
    let total = config.scenarios().len() * config.replicates;
    let mut done = 0;
    let report = run_experiment(&config, |s, rep| {
        done += 1;
        eprintln!("[{done}/{total}] scenario {} replicate {rep}", s.index);
    })?;
    report.write(out)?;
    let converged = report.results.iter().all(|r| r.fit.converged && r.cv_converged);
    check_converged(converged, strict, "experiment fits")
}

fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::Simulate { config, out } => simulate(&config, &out),
        Command::Fit {
            data,
            hierarchy,
            penalty,
            lambda,
            lambda_fraction,
            alpha1,
            alpha2,
            folds,
            n_lambda,
            seed,
            solver,
            out,
        } => fit(&data, &hierarchy, method(penalty, alpha1, alpha2), lambda, lambda_fraction, folds, n_lambda, seed, &solver, &out),
        Command::Cv {
            data,
            hierarchy,
            grid,
            folds,
            seed,
            solver,
            out,
        } => cv(&data, &hierarchy, grid.as_deref(), folds, seed, &solver, &out),
        Command::Predict { model, data, out } => predict(&model, &data, &out),
        Command::Evaluate {
            preds,
            labels_col,
            group_col,
            score_col,
            out,
        } => evaluate(&preds, &labels_col, group_col, &score_col, &out),
        Command::Experiment { config, out, strict } => experiment(&config, &out, strict),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::NotConverged) => ExitCode::from(3),
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
