//! Synthetic hierarchical data: heterogeneous covariates per DRG and
//! hierarchically gated true coefficients.
//!
//! Predictor `j` in DRG `d` follows one of three families, assigned in equal
//! thirds: `Normal(mu_d, sigma_d)`, `Bernoulli(p_d)` or `Poisson(lambda_d)`, each
//! parameter drawn independently per `(j, d)`. Coefficients are
//!
//! ```text
//! mu_j ~ U(-1, 1)
//! eta_j^M   = u * a_j^M * shrink           u ~ U(-1, 1), a ~ Bernoulli(gamma)
//! delta_d,j = v * a_j^M(d) * b_d,j         v ~ U(-1, 1), b ~ Bernoulli(gamma)
//! ```
//!
//! so a DRG effect exists only when its MDC effect does. A per-DRG intercept is
//! calibrated so the expected event rate in each DRG matches the target.

use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, Gamma, Normal, Poisson, Uniform};
use serde::{Deserialize, Serialize};

use crate::design::Level;
use crate::error::{Error, Result};
use crate::hierarchy::{HierDataset, HierarchySpec, INTERCEPT};
use crate::objective::sigmoid;
use crate::solver::{CoefEntry, CoefficientTree};

const CALIBRATION_PROBES: usize = 10_000;
const CALIBRATION_BRACKET: f64 = 200.0;
const P_BOUNDS: (f64, f64) = (0.01, 0.99);

/// Simulation settings. Spreads (`dispersion / 2`, `dispersion / 10`) are
/// standard deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Number of covariates, excluding the intercept; divisible by 3.
    pub p: usize,
    pub mdc_count: usize,
    pub drgs_per_mdc: usize,
    pub n_per_drg: usize,
    /// Heterogeneity of the covariate distributions across DRGs.
    pub dispersion: f64,
    /// `logit(gamma)`, where `gamma` is the probability a subgroup effect exists.
    pub sparsity_logit: f64,
    /// Multiplier on the MDC-level effects.
    pub shrink: f64,
    pub target_event_rate: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            p: 60,
            mdc_count: 10,
            drgs_per_mdc: 4,
            n_per_drg: 100,
            dispersion: 1.0,
            sparsity_logit: 0.0,
            shrink: 1.0,
            target_event_rate: 0.17,
            seed: 1,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.p == 0 || self.p % 3 != 0 {
            return fail("p must be a positive multiple of 3");
        }
        if self.mdc_count == 0 || self.drgs_per_mdc == 0 || self.n_per_drg == 0 {
            return fail("mdc_count, drgs_per_mdc and n_per_drg must be positive");
        }
        if !(self.dispersion > 0.0) || !self.sparsity_logit.is_finite() || !(self.shrink >= 0.0) {
            return fail("dispersion must be positive, sparsity_logit finite, shrink nonnegative");
        }
        if !(self.target_event_rate > 0.0 && self.target_event_rate < 1.0) {
            return fail("target_event_rate must be in (0, 1)");
        }
        Ok(())
    }

    /// `gamma = expit(sparsity_logit)`.
    pub fn gamma(&self) -> f64 {
        sigmoid(self.sparsity_logit)
    }

    pub fn n_drg(&self) -> usize {
        self.mdc_count * self.drgs_per_mdc
    }

    /// Independent random stream `stream` under this config's seed.
    pub fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }

    /// `(drg, mdc)` pairs with zero-padded identifiers (`D001`, `M01`, ...).
    pub fn hierarchy_pairs(&self) -> Vec<(String, String)> {
        let dw = digits(self.n_drg()).max(3);
        let mw = digits(self.mdc_count).max(2);
        (0..self.n_drg())
            .map(|d| {
                (
                    format!("D{:0dw$}", d + 1),
                    format!("M{:0mw$}", d / self.drgs_per_mdc + 1),
                )
            })
            .collect()
    }

    pub fn covariate_names(&self) -> Vec<String> {
        (1..=self.p).map(|j| format!("x{j}")).collect()
    }
}

fn digits(n: usize) -> usize {
    n.to_string().len()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Normal,
    Bernoulli,
    Poisson,
}

/// Family of covariate `j` (0-based, intercept excluded).
pub fn family_of(j: usize, p: usize) -> Family {
    let third = p / 3;
    if j < third {
        Family::Normal
    } else if j < 2 * third {
        Family::Bernoulli
    } else {
        Family::Poisson
    }
}

/// Distribution parameters of one covariate in one DRG; only the fields of its
/// family are used.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovariateParams {
    pub family: Family,
    pub mean: f64,
    pub sd: f64,
    pub prob: f64,
    pub rate: f64,
}

enum Sampler {
    Normal(f64, f64),
    Bernoulli(f64),
    Poisson(Poisson<f64>),
}

impl Sampler {
    fn new(c: &CovariateParams) -> Self {
        match c.family {
            Family::Normal => Sampler::Normal(c.mean, c.sd),
            Family::Bernoulli => Sampler::Bernoulli(c.prob),
            Family::Poisson => Sampler::Poisson(Poisson::new(c.rate).expect("positive rate")),
        }
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        match self {
            Sampler::Normal(mean, sd) => mean + sd * rng.sample::<f64, _>(rand_distr::StandardNormal),
            Sampler::Bernoulli(p) => {
                if rng.gen::<f64>() < *p {
                    1.0
                } else {
                    0.0
                }
            }
            Sampler::Poisson(dist) => dist.sample(rng),
        }
    }
}

/// Samplers for DRG `d`, one per covariate.
fn samplers(truth: &SimTruth, d: usize) -> Vec<Sampler> {
    truth.covariates.iter().map(|per_drg| Sampler::new(&per_drg[d])).collect()
}

/// Ground truth of one simulated population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTruth {
    pub config: SimConfig,
    pub hierarchy: Vec<(String, String)>,
    /// `covariates[j][d]` for covariate `j` (intercept excluded) and DRG `d`.
    pub covariates: Vec<Vec<CovariateParams>>,
    /// Nonzero coefficients over predictors `0..=p`; predictor 0 (the intercept) is empty.
    pub coefficients: Vec<CoefEntry>,
    /// MDC gates `a_j^M`, indexed `[j][m]` (intercept excluded).
    pub mdc_gates: Vec<Vec<bool>>,
    /// Calibrated intercept per DRG.
    pub intercepts: Vec<f64>,
}

impl SimTruth {
    pub fn tree(&self) -> CoefficientTree {
        let c = &self.config;
        let mut tree = CoefficientTree::zeros(c.p + 1, c.mdc_count, c.n_drg());
        for e in &self.coefficients {
            tree.set(e.predictor, e.level, e.group, e.value);
        }
        tree
    }

    pub fn spec(&self) -> Result<HierarchySpec> {
        let empty: [String; 0] = [];
        HierarchySpec::build(&self.hierarchy, &empty)
    }

    /// Linear predictor of a raw covariate row (intercept excluded) in DRG `d`.
    pub fn linear_predictor(&self, tree: &CoefficientTree, row: &[f64], d: usize) -> f64 {
        let m = d / self.config.drgs_per_mdc;
        self.intercepts[d] + row.iter().enumerate().map(|(j, x)| x * tree.beta(j + 1, d, m)).sum::<f64>()
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(f), self)?;
        Ok(())
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
    }
}

/// Draws `(mu_d, sigma_d, p_d, lambda_d)` for every covariate and DRG.
pub fn draw_covariate_params(config: &SimConfig, rng: &mut impl Rng) -> Vec<Vec<CovariateParams>> {
    let disp = config.dispersion;
    let mean_dist = Normal::new(0.0, disp / 2.0).expect("finite sd");
    let sd_dist = Gamma::new(1.0, disp).expect("positive scale");
    let prob_dist = Normal::new(0.5, disp / 10.0).expect("finite sd");
    let rate_dist = Normal::new(3.0, disp / 10.0).expect("finite sd");
    (0..config.p)
        .map(|j| {
            let family = family_of(j, config.p);
            (0..config.n_drg())
                .map(|_| {
                    let mut prob = prob_dist.sample(rng);
                    while !(P_BOUNDS.0..=P_BOUNDS.1).contains(&prob) {
                        prob = prob_dist.sample(rng);
                    }
                    CovariateParams {
                        family,
                        mean: mean_dist.sample(rng),
                        sd: sd_dist.sample(rng),
                        prob,
                        rate: (rate_dist.sample(rng) + 0.5).floor().max(1.0),
                    }
                })
                .collect()
        })
        .collect()
}

/// Draws the true coefficient tree (intercept block empty) and the MDC gates.
pub fn draw_coefficients(config: &SimConfig, rng: &mut impl Rng) -> (CoefficientTree, Vec<Vec<bool>>) {
    let unif = Uniform::new(-1.0, 1.0);
    let gate = Bernoulli::new(config.gamma()).expect("gamma in [0, 1]");
    let n_drg = config.n_drg();
    let mut tree = CoefficientTree::zeros(config.p + 1, config.mdc_count, n_drg);
    let mut gates = Vec::with_capacity(config.p);
    for j in 1..=config.p {
        let mut block = vec![0.0; tree.block_width()];
        block[0] = unif.sample(rng);
        let a: Vec<bool> = (0..config.mdc_count).map(|_| gate.sample(rng)).collect();
        for m in 0..config.mdc_count {
            let u = unif.sample(rng);
            block[1 + m] = if a[m] { u * config.shrink } else { 0.0 };
        }
        for d in 0..n_drg {
            let v = unif.sample(rng);
            let b = gate.sample(rng);
            block[1 + config.mdc_count + d] = if a[d / config.drgs_per_mdc] && b { v } else { 0.0 };
        }
        tree.set_block(j, block);
        gates.push(a);
    }
    (tree, gates)
}

/// Intercept `c` with `mean_i expit(c + lp_i) = target`, by bisection on `[-200, 200]`.
fn calibrate_intercept(lp: &[f64], target: f64) -> Option<f64> {
    let rate = |c: f64| lp.iter().map(|&e| sigmoid(c + e)).sum::<f64>() / lp.len() as f64;
    let (mut lo, mut hi) = (-CALIBRATION_BRACKET, CALIBRATION_BRACKET);
    if rate(lo) > target || rate(hi) < target {
        return None;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if rate(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-10 {
            break;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Complete truth for `config`: covariate parameters, coefficients and
/// calibrated intercepts, all from random stream 0.
pub fn draw_truth(config: &SimConfig) -> Result<SimTruth> {
    config.validate()?;
    let mut rng = config.rng(0);
    let covariates = draw_covariate_params(config, &mut rng);
    let (tree, mdc_gates) = draw_coefficients(config, &mut rng);
    let mut truth = SimTruth {
        config: config.clone(),
        hierarchy: config.hierarchy_pairs(),
        covariates,
        coefficients: tree.entries(),
        mdc_gates,
        intercepts: vec![0.0; config.n_drg()],
    };
    let mut row = vec![0.0; config.p];
    for d in 0..config.n_drg() {
        let draw = samplers(&truth, d);
        let lp: Vec<f64> = (0..CALIBRATION_PROBES)
            .map(|_| {
                for (x, s) in row.iter_mut().zip(&draw) {
                    *x = s.sample(&mut rng);
                }
                truth.linear_predictor(&tree, &row, d)
            })
            .collect();
        truth.intercepts[d] = calibrate_intercept(&lp, config.target_event_rate)
            .ok_or_else(|| Error::CalibrationFailed(truth.hierarchy[d].0.clone()))?;
    }
    Ok(truth)
}

/// `n_per_drg` rows per DRG (in DRG order) with an intercept column first.
pub fn generate_dataset(truth: &SimTruth, n_per_drg: usize, rng: &mut impl Rng) -> Result<HierDataset> {
    let c = &truth.config;
    let tree = truth.tree();
    let n = n_per_drg * c.n_drg();
    let mut x = Array2::zeros((n, c.p + 1));
    let mut y = Vec::with_capacity(n);
    let mut drg = Vec::with_capacity(n);
    let mut row = vec![0.0; c.p];
    for d in 0..c.n_drg() {
        let draw = samplers(truth, d);
        for r in 0..n_per_drg {
            let i = d * n_per_drg + r;
            for (v, s) in row.iter_mut().zip(&draw) {
                *v = s.sample(rng);
            }
            let prob = sigmoid(truth.linear_predictor(&tree, &row, d));
            x[[i, 0]] = 1.0;
            for (j, &v) in row.iter().enumerate() {
                x[[i, j + 1]] = v;
            }
            y.push(if rng.gen::<f64>() < prob { 1.0 } else { 0.0 });
            drg.push(truth.hierarchy[d].0.clone());
        }
    }
    let names = std::iter::once(INTERCEPT.to_string()).chain(c.covariate_names()).collect();
    HierDataset::new(y, x, drg, names)
}

/// Training set (stream 1, `n_per_drg` rows per DRG) and test set (stream 2).
pub fn simulate_train_test(truth: &SimTruth, n_test_per_drg: usize) -> Result<(HierDataset, HierDataset)> {
    let c = &truth.config;
    let train = generate_dataset(truth, c.n_per_drg, &mut c.rng(1))?;
    let test = generate_dataset(truth, n_test_per_drg, &mut c.rng(2))?;
    Ok((train, test))
}

/// Writes `y,drg,<covariates>` (the intercept column is left out).
pub fn write_dataset_csv(data: &HierDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let skip = usize::from(data.feature_names.first().map(String::as_str) == Some(INTERCEPT));
    let mut header = vec!["y".to_string(), "drg".to_string()];
    header.extend(data.feature_names[skip..].iter().cloned());
    w.write_record(&header)?;
    for i in 0..data.n() {
        let mut rec = vec![format!("{}", data.y[i]), data.drg[i].clone()];
        rec.extend((skip..data.p()).map(|j| format!("{}", data.x[[i, j]])));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-level counts of nonzero true effects.
pub fn effect_counts(truth: &SimTruth) -> [usize; 3] {
    let mut counts = [0; 3];
    for e in &truth.coefficients {
        counts[match e.level {
            Level::Overall => 0,
            Level::Mdc => 1,
            Level::Drg => 2,
        }] += 1;
    }
    counts
}
