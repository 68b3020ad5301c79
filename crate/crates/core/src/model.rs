//! Fitting pipeline, scoring with level fallback, and the JSON model artifact.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::Preprocessor;
use crate::design::{apply_standardization, standardize, ColumnStats, HierDesign, Level, PenaltyWeights};
use crate::error::{Error, Result};
use crate::hierarchy::{HierDataset, HierarchySpec};
use crate::objective::sigmoid;
use crate::solver::{self, CoefficientTree, FitPath, LambdaDiagnostics, PenaltyKind, SolverConfig};

pub const FORMAT_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Model family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Method {
    /// Nested group lasso on the hierarchical decomposition.
    Oglasso { alpha1: f64, alpha2: f64 },
    /// Sample-size weighted lasso on the hierarchical decomposition.
    Lasso,
    /// Lasso on the raw covariates only (one group holding every row).
    PooledLasso,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Oglasso { .. } => "oglasso",
            Method::Lasso => "lasso",
            Method::PooledLasso => "pooled_lasso",
        }
    }

    pub fn penalty(&self) -> PenaltyKind {
        match *self {
            Method::Oglasso { alpha1, alpha2 } => PenaltyKind::OgLasso { alpha1, alpha2 },
            Method::Lasso | Method::PooledLasso => PenaltyKind::Lasso,
        }
    }

    pub fn alphas(&self) -> (f64, f64) {
        self.penalty().alphas()
    }
}

/// Standardized training data on the design of one method.
#[derive(Debug, Clone)]
pub struct Problem {
    pub method: Method,
    pub spec: HierarchySpec,
    pub stats: Vec<ColumnStats>,
    pub design: HierDesign,
    pub y: Vec<f64>,
    pub weights: Option<PenaltyWeights>,
}

impl Problem {
    /// Standardizes `data` on its own rows and builds the design; counts (and
    /// the lasso weights) come from `data`'s labels only.
    pub fn new(data: &HierDataset, spec: &HierarchySpec, method: Method) -> Result<Self> {
        let (xs, stats) = standardize(&data.x);
        let (spec, row_drg) = match method {
            Method::PooledLasso => (HierarchySpec::pooled(data.n()), vec![0; data.n()]),
            _ => {
                let idx = spec.indices_of(&data.drg)?;
                (spec.recount(&idx), idx)
            }
        };
        let design = HierDesign::from_indices(&xs, row_drg, &spec);
        let weights = match method {
            Method::Oglasso { .. } => None,
            Method::Lasso => Some(crate::design::penalty_weights(&spec)),
            Method::PooledLasso => Some(PenaltyWeights {
                k_mdc: vec![f64::INFINITY],
                k_drg: vec![f64::INFINITY],
            }),
        };
        Ok(Self {
            method,
            spec,
            stats,
            design,
            y: data.y.clone(),
            weights,
        })
    }

    pub fn lambda_max(&self, config: &SolverConfig) -> Result<f64> {
        solver::lambda_max(&self.design, &self.y, self.method.penalty(), self.weights.as_ref(), config)
    }

    /// `n_lambda` values from `lambda_max` down to `ratio * lambda_max`.
    pub fn lambda_path(&self, n_lambda: usize, ratio: f64, config: &SolverConfig) -> Result<Vec<f64>> {
        solver::lambda_path(&self.design, &self.y, self.method.penalty(), self.weights.as_ref(), n_lambda, ratio, config)
    }

    pub fn fit(&self, lambdas: &[f64], config: &SolverConfig) -> Result<FitPath> {
        solver::fit_path(&self.design, &self.y, self.method.penalty(), self.weights.as_ref(), lambdas, config, None)
    }

    /// Linear predictors of raw rows (`x` unstandardized, same columns as training).
    pub fn score(&self, tree: &CoefficientTree, x: &Array2<f64>, drg: &[String]) -> Result<Vec<f64>> {
        let xs = apply_standardization(x, &self.stats);
        let rows = self.resolve(drg, None)?;
        Ok(linear_predictors(tree, &xs, &rows))
    }

    fn resolve(&self, drg: &[String], mdc: Option<&[String]>) -> Result<Vec<RowGroup>> {
        match self.method {
            Method::PooledLasso => Ok(vec![RowGroup::Drg { drg: 0, mdc: 0 }; drg.len()]),
            _ => Ok(resolve_groups(&self.spec, drg, mdc)),
        }
    }
}

/// Level at which a row is scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowGroup {
    Drg { drg: usize, mdc: usize },
    Mdc { mdc: usize },
    Overall,
}

impl RowGroup {
    pub fn level(&self) -> Level {
        match self {
            RowGroup::Drg { .. } => Level::Drg,
            RowGroup::Mdc { .. } => Level::Mdc,
            RowGroup::Overall => Level::Overall,
        }
    }
}

/// Known DRGs score at the DRG level; unknown DRGs fall back to their MDC when
/// `mdc` names a known one, otherwise to the overall effects.
pub fn resolve_groups(spec: &HierarchySpec, drg: &[String], mdc: Option<&[String]>) -> Vec<RowGroup> {
    drg.iter()
        .enumerate()
        .map(|(i, label)| match spec.drg_index(label.trim()) {
            Some(d) => RowGroup::Drg { drg: d, mdc: spec.parent(d) },
            None => match mdc.and_then(|m| spec.mdc_index(m[i].trim())) {
                Some(m) => RowGroup::Mdc { mdc: m },
                None => RowGroup::Overall,
            },
        })
        .collect()
}

/// `x_i^T (mu + eta^{M} + delta_d)` with the levels each row resolves to.
pub fn linear_predictors(tree: &CoefficientTree, xs: &Array2<f64>, rows: &[RowGroup]) -> Vec<f64> {
    let active = tree.active_predictors();
    rows.iter()
        .enumerate()
        .map(|(i, g)| {
            active
                .iter()
                .map(|&j| {
                    let beta = match *g {
                        RowGroup::Drg { drg, mdc } => tree.beta(j, drg, mdc),
                        RowGroup::Mdc { mdc } => tree.mu(j) + tree.eta(j, mdc),
                        RowGroup::Overall => tree.mu(j),
                    };
                    xs[[i, j]] * beta
                })
                .sum()
        })
        .collect()
}

/// Decreasing lambdas ending exactly at `target`, spaced like a 100-point path
/// down to `0.01 * lambda_max`.
pub fn path_to(lambda_max: f64, target: f64) -> Result<Vec<f64>> {
    if !(target > 0.0) {
        return Err(Error::InvalidConfig(format!("lambda must be positive, got {target}")));
    }
    if target >= lambda_max {
        return Ok(vec![target]);
    }
    let steps = ((lambda_max / target).ln() / 100f64.ln() * 99.0).ceil().max(1.0) as usize;
    let mut path = solver::geometric_path(lambda_max, steps + 1, target / lambda_max)?;
    *path.last_mut().expect("nonempty") = target;
    Ok(path)
}

/// Fit summary stored with a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub sweeps: usize,
    pub converged: bool,
    pub objective: f64,
    pub active_predictors: usize,
    pub kkt_violations_repaired: usize,
    pub strong_rule_failures: usize,
    pub nonzero_overall: usize,
    pub nonzero_mdc: usize,
    pub nonzero_drg: usize,
}

impl FitSummary {
    pub fn new(diag: &LambdaDiagnostics, tree: &CoefficientTree) -> Self {
        let entries = tree.entries();
        let count = |l: Level| entries.iter().filter(|e| e.level == l).count();
        Self {
            sweeps: diag.sweeps,
            converged: diag.converged,
            objective: diag.objective,
            active_predictors: diag.active_set_size,
            kkt_violations_repaired: diag.kkt_violations_repaired,
            strong_rule_failures: diag.strong_rule_failures.len(),
            nonzero_overall: count(Level::Overall),
            nonzero_mdc: count(Level::Mdc),
            nonzero_drg: count(Level::Drg),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefRecord {
    pub predictor: String,
    pub level: Level,
    /// MDC or DRG identifier; empty for overall effects.
    pub group: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchyRecord {
    pub pairs: Vec<(String, String)>,
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: Option<u64>,
    pub data_fingerprint: String,
    pub tool_version: String,
}

/// Serialized fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub format_version: u32,
    pub method: Method,
    pub lambda: f64,
    pub hierarchy: HierarchyRecord,
    /// Training features, intercept first.
    pub features: Vec<String>,
    pub standardization: Vec<ColumnStats>,
    pub standardization_convention: String,
    pub preprocessor: Option<Preprocessor>,
    pub coefficients: Vec<CoefRecord>,
    pub diagnostics: FitSummary,
    pub provenance: Provenance,
}

/// One scored row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub probability: f64,
    pub linear_predictor: f64,
    pub level: Level,
}

/// SHA-256 over feature names, outcomes, labels and covariate bits.
pub fn fingerprint(data: &HierDataset) -> String {
    let mut h = Sha256::new();
    for name in &data.feature_names {
        h.update(name.as_bytes());
        h.update([0u8]);
    }
    for (v, d) in data.y.iter().zip(&data.drg) {
        h.update(v.to_le_bytes());
        h.update(d.as_bytes());
        h.update([0u8]);
    }
    for v in data.x.iter() {
        h.update(v.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

impl ModelArtifact {
    pub fn new(problem: &Problem, data: &HierDataset, tree: &CoefficientTree, lambda: f64, diag: &LambdaDiagnostics) -> Self {
        let spec = &problem.spec;
        let coefficients = tree
            .entries()
            .into_iter()
            .map(|e| CoefRecord {
                predictor: data.feature_names[e.predictor].clone(),
                level: e.level,
                group: match e.level {
                    Level::Overall => String::new(),
                    Level::Mdc => spec.mdc_ids()[e.group].clone(),
                    Level::Drg => spec.drg_ids()[e.group].clone(),
                },
                value: e.value,
            })
            .collect();
        Self {
            format_version: FORMAT_VERSION,
            method: problem.method,
            lambda,
            hierarchy: HierarchyRecord {
                pairs: spec.pairs(),
                counts: spec.counts().to_vec(),
            },
            features: data.feature_names.clone(),
            standardization: problem.stats.clone(),
            standardization_convention: "population".into(),
            preprocessor: None,
            coefficients,
            diagnostics: FitSummary::new(diag, tree),
            provenance: Provenance {
                seed: None,
                data_fingerprint: fingerprint(data),
                tool_version: TOOL_VERSION.into(),
            },
        }
    }

    pub fn spec(&self) -> Result<HierarchySpec> {
        let counts = self
            .hierarchy
            .pairs
            .iter()
            .zip(&self.hierarchy.counts)
            .map(|((d, _), &c)| (d.clone(), c))
            .collect();
        HierarchySpec::with_counts(&self.hierarchy.pairs, &counts)
    }

    /// Rebuilds the coefficient tree, checking every entry against the
    /// embedded hierarchy and features.
    pub fn tree(&self) -> Result<(HierarchySpec, CoefficientTree)> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::InvalidModel(format!("unsupported format version {}", self.format_version)));
        }
        if self.hierarchy.counts.len() != self.hierarchy.pairs.len() || self.standardization.len() != self.features.len() {
            return Err(Error::InvalidModel("hierarchy or standardization length mismatch".into()));
        }
        let spec = self.spec().map_err(|e| Error::InvalidModel(e.to_string()))?;
        let mut tree = CoefficientTree::zeros(self.features.len(), spec.n_mdc(), spec.n_drg());
        for c in &self.coefficients {
            let j = self
                .features
                .iter()
                .position(|f| *f == c.predictor)
                .ok_or_else(|| Error::InvalidModel(format!("unknown predictor `{}`", c.predictor)))?;
            let group = match c.level {
                Level::Overall if c.group.is_empty() => Some(0),
                Level::Overall => None,
                Level::Mdc => spec.mdc_index(&c.group),
                Level::Drg => spec.drg_index(&c.group),
            }
            .ok_or_else(|| Error::InvalidModel(format!("unknown {} group `{}`", c.level.as_str(), c.group)))?;
            tree.set(j, c.level, group, c.value);
        }
        Ok((spec, tree))
    }

    /// Scores rows whose columns follow `self.features` (raw scale).
    pub fn predict(&self, x: &Array2<f64>, drg: &[String], mdc: Option<&[String]>) -> Result<Vec<Prediction>> {
        if x.ncols() != self.features.len() {
            return Err(Error::DimensionMismatch(format!("{} columns, model has {}", x.ncols(), self.features.len())));
        }
        if drg.len() != x.nrows() || mdc.is_some_and(|m| m.len() != x.nrows()) {
            return Err(Error::LabelMismatch { labels: drg.len(), rows: x.nrows() });
        }
        let (spec, tree) = self.tree()?;
        let rows = resolve_groups(&spec, drg, mdc);
        let xs = apply_standardization(x, &self.standardization);
        Ok(linear_predictors(&tree, &xs, &rows)
            .into_iter()
            .zip(&rows)
            .map(|(eta, g)| Prediction {
                probability: sigmoid(eta),
                linear_predictor: eta,
                level: g.level(),
            })
            .collect())
    }

    /// Scores rows with named columns; the intercept column may be omitted.
    pub fn predict_named(&self, x: &Array2<f64>, names: &[String], drg: &[String], mdc: Option<&[String]>) -> Result<Vec<Prediction>> {
        let mut cols = Array2::zeros((x.nrows(), self.features.len()));
        for (k, f) in self.features.iter().enumerate() {
            match names.iter().position(|n| n == f) {
                Some(src) => cols.column_mut(k).assign(&x.column(src)),
                None if f == crate::hierarchy::INTERCEPT => cols.column_mut(k).fill(1.0),
                None => return Err(Error::MissingCovariate(f.clone())),
            }
        }
        self.predict(&cols, drg, mdc)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(text)?;
        model.tree()?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Fits `method` on `data` and returns the model at `lambda` (warm-started
/// along a path from `lambda_max`) together with that path.
pub fn fit_model(data: &HierDataset, spec: &HierarchySpec, method: Method, lambda: f64, config: &SolverConfig) -> Result<(ModelArtifact, FitPath)> {
    let problem = Problem::new(data, spec, method)?;
    let lmax = problem.lambda_max(config)?;
    let path = problem.fit(&path_to(lmax, lambda)?, config)?;
    let last = path.len() - 1;
    let model = ModelArtifact::new(&problem, data, &path.solutions[last], lambda, &path.diagnostics[last]);
    Ok((model, path))
}
