//! Logistic negative log-likelihood, block gradients and majorization steps.

use crate::design::HierDesign;
use crate::error::{Error, Result};
use crate::solver::CoefficientTree;

/// Upper bound on the logistic curvature `p (1 - p)`.
pub const CURVATURE_BOUND: f64 = 0.25;

const POWER_TOL: f64 = 1e-6;
const POWER_MAX_ITER: usize = 500;

/// `log(1 + exp(e))` without overflow.
#[inline]
pub fn softplus(e: f64) -> f64 {
    e.max(0.0) + (-e.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid(e: f64) -> f64 {
    if e >= 0.0 {
        1.0 / (1.0 + (-e).exp())
    } else {
        let z = e.exp();
        z / (1.0 + z)
    }
}

/// One observation's contribution `log(1 + exp(e)) - y e`.
#[inline]
pub fn nll_term(e: f64, y: f64) -> f64 {
    y * softplus(-e) + (1.0 - y) * softplus(e)
}

/// `sum_i [log(1 + exp(eta_i)) - y_i eta_i]`.
pub fn nll_from_eta(eta: &[f64], y: &[f64]) -> f64 {
    eta.iter().zip(y).map(|(&e, &v)| nll_term(e, v)).sum()
}

/// Negative log-likelihood of flat coefficients `beta` on `X_H`.
pub fn nll(design: &HierDesign, beta: &[f64], y: &[f64]) -> Result<f64> {
    if beta.len() != design.n_cols() || y.len() != design.n_rows() {
        return Err(Error::DimensionMismatch(format!(
            "beta {} (expected {}), y {} (expected {})",
            beta.len(),
            design.n_cols(),
            y.len(),
            design.n_rows()
        )));
    }
    Ok(nll_from_eta(&design.matvec(beta), y))
}

/// Linear predictor and fitted probability caches for one coefficient state.
#[derive(Debug, Clone)]
pub struct ObjectiveState {
    pub eta: Vec<f64>,
    pub prob: Vec<f64>,
    nll: Option<f64>,
    generation: u64,
}

impl ObjectiveState {
    pub fn new(design: &HierDesign, coefs: &CoefficientTree, y: &[f64]) -> Result<Self> {
        if y.len() != design.n_rows() || coefs.p() != design.p() || coefs.block_width() != design.block_width() {
            return Err(Error::DimensionMismatch("coefficients, design and response disagree".into()));
        }
        let eta = design.matvec(&coefs.to_flat());
        let prob = eta.iter().map(|&e| sigmoid(e)).collect();
        let nll = Some(nll_from_eta(&eta, y));
        Ok(Self {
            eta,
            prob,
            nll,
            generation: coefs.generation(),
        })
    }

    /// Full recompute from the coefficients.
    pub fn refresh(&mut self, design: &HierDesign, coefs: &CoefficientTree, y: &[f64]) {
        self.eta = design.matvec(&coefs.to_flat());
        for (p, &e) in self.prob.iter_mut().zip(&self.eta) {
            *p = sigmoid(e);
        }
        self.nll = Some(nll_from_eta(&self.eta, y));
        self.generation = coefs.generation();
    }

    /// Incremental update after block `j` of `coefs` changed by `delta`. Only rows
    /// with a nonzero entry in predictor `j` are touched.
    pub fn apply_block_delta(&mut self, design: &HierDesign, j: usize, delta: &[f64], coefs: &CoefficientTree) {
        design.block_matvec_add(j, delta, &mut self.eta);
        let (rows, _) = design.column(design.block_range(j).start);
        for &i in rows {
            self.prob[i] = sigmoid(self.eta[i]);
        }
        self.nll = None;
        self.generation = coefs.generation();
    }

    /// Negative log-likelihood at the cached linear predictor.
    pub fn nll(&mut self, y: &[f64]) -> f64 {
        *self.nll.get_or_insert_with(|| nll_from_eta(&self.eta, y))
    }

    /// Marks the cache as matching `coefs` (for updates that do not move `eta`).
    pub fn sync_generation(&mut self, coefs: &CoefficientTree) {
        self.generation = coefs.generation();
    }

    pub fn is_current(&self, coefs: &CoefficientTree) -> bool {
        self.generation == coefs.generation()
    }

    /// Working residual `prob - y`.
    pub fn residual(&self, y: &[f64]) -> Vec<f64> {
        self.prob.iter().zip(y).map(|(p, v)| p - v).collect()
    }
}

/// Gradient of the negative log-likelihood over predictor `j`'s block:
/// `-X^(j)^T (y - prob)`.
pub fn grad_block(coefs: &CoefficientTree, state: &ObjectiveState, design: &HierDesign, y: &[f64], j: usize) -> Result<Vec<f64>> {
    if !state.is_current(coefs) {
        return Err(Error::StaleCache);
    }
    if j >= design.p() || y.len() != design.n_rows() {
        return Err(Error::DimensionMismatch(format!("predictor {j} of {}", design.p())));
    }
    Ok(design.block_tmatvec(j, &state.residual(y)))
}

/// Largest eigenvalue of a symmetric positive semidefinite operator by power
/// iteration (relative tolerance 1e-6, at most 500 iterations).
pub fn power_max_eigenvalue(dim: usize, mut apply: impl FnMut(&[f64], &mut [f64])) -> f64 {
    let mut v: Vec<f64> = (0..dim).map(|k| 1.0 + 0.01 * (k % 7) as f64).collect();
    let mut gv = vec![0.0; dim];
    let mut estimate = 0.0;
    for _ in 0..POWER_MAX_ITER {
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        v.iter_mut().for_each(|a| *a /= norm);
        apply(&v, &mut gv);
        let next: f64 = v.iter().zip(&gv).map(|(a, b)| a * b).sum();
        std::mem::swap(&mut v, &mut gv);
        if (next - estimate).abs() <= POWER_TOL * next.abs() {
            return next;
        }
        estimate = next;
    }
    estimate
}

/// Largest eigenvalue of `X^(j)^T X^(j)`.
pub fn block_max_eigenvalue(design: &HierDesign, j: usize) -> f64 {
    let gram = design.block_gram(j);
    power_max_eigenvalue(design.block_width(), |v, out| gram.apply(v, out))
}

/// `1 / (0.25 * lambda_max)`, or `+inf` when the block is all zero.
pub fn step_from_eigenvalue(lmax: f64) -> f64 {
    if lmax <= 0.0 {
        f64::INFINITY
    } else {
        1.0 / (CURVATURE_BOUND * lmax)
    }
}

/// Majorization step `t = 1 / (0.25 * lambda_max(X^(j)^T X^(j)))`; `+inf` for an
/// all-zero block.
pub fn step_size(design: &HierDesign, j: usize) -> f64 {
    step_from_eigenvalue(block_max_eigenvalue(design, j))
}
