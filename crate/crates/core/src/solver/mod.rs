//! Regularization-path solvers for the weighted lasso and the nested group lasso.
//!
//! Both penalties share one path engine ([`path`]): warm starts along a
//! decreasing `lambda` sequence, a sequential strong rule that pre-screens
//! predictor blocks, an active set cycled with groupwise majorization-minimization
//! updates, and exact KKT sweeps that backstop the screening.
//!
//! A block update minimizes the quadratic majorizer
//! `g^T d + 1/2 d^T (0.25 X^(j)^T X^(j)) d + penalty(theta + d)` of the
//! negative log-likelihood. The block Gram matrix only depends on per-DRG
//! column norms, so the majorizer is minimized with cheap inner iterations
//! (proximal steps of size `t_j` for the group penalty, coordinate descent for
//! the lasso) and only one pass over the data per block update.

mod coef;
mod path;

pub use coef::{CoefEntry, CoefficientTree};
pub use path::{fit_path, kkt_check, lambda_max, lambda_path, screen_strong, geometric_path, objective_value};

use serde::{Deserialize, Serialize};

use crate::design::{BlockGram, HierDesign, PenaltyWeights};
use crate::error::Result;
use crate::objective::CURVATURE_BOUND;
use crate::prox::{hier_penalty, hier_prox_in_place, soft_threshold_scalar, BlockLayout, HierPenaltyParams};

/// Which penalty to fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PenaltyKind {
    /// Nested group lasso with MDC-group weight `alpha1` and l1 weight `alpha2`.
    OgLasso { alpha1: f64, alpha2: f64 },
    /// Sample-size weighted lasso.
    Lasso,
}

impl PenaltyKind {
    pub fn name(&self) -> &'static str {
        match self {
            PenaltyKind::OgLasso { .. } => "oglasso",
            PenaltyKind::Lasso => "lasso",
        }
    }

    pub fn alphas(&self) -> (f64, f64) {
        match *self {
            PenaltyKind::OgLasso { alpha1, alpha2 } => (alpha1, alpha2),
            PenaltyKind::Lasso => (0.0, 0.0),
        }
    }
}

/// Solver tolerances and limits.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Sweep cap per lambda.
    pub max_sweeps: usize,
    /// Largest coefficient change in a sweep below which a sweep counts as converged.
    pub coef_tol: f64,
    /// Relative objective change below which a sweep counts as converged.
    pub obj_tol: f64,
    /// Prox-gradient residual tolerance for active blocks in the KKT audit.
    pub kkt_tol: f64,
    /// Full recompute of the linear predictor every this many sweeps.
    pub refresh_every: usize,
    pub inner_max_iter: usize,
    /// Inner iterations stop when the largest change falls below `inner_tol`
    /// (relative to the coefficient scale) or below `inner_rel_tol` times the
    /// first inner change.
    pub inner_tol: f64,
    pub inner_rel_tol: f64,
    /// Apply the sequential strong rule between lambdas.
    pub screening: bool,
    /// Predictor 0 is the intercept: its overall coefficient is unpenalized.
    pub intercept: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_sweeps: 10_000,
            coef_tol: 1e-7,
            obj_tol: 1e-10,
            kkt_tol: 1e-6,
            refresh_every: 50,
            inner_max_iter: 2_000,
            inner_tol: 1e-12,
            inner_rel_tol: 1e-2,
            screening: true,
            intercept: true,
        }
    }
}

/// Diagnostics recorded for one lambda.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LambdaDiagnostics {
    pub lambda: f64,
    pub sweeps: usize,
    pub converged: bool,
    pub objective: f64,
    /// Objective after every sweep (nonincreasing up to rounding).
    pub objective_trace: Vec<f64>,
    pub strong_set_size: usize,
    pub active_set_size: usize,
    /// Predictors left out of the strong set by the sequential rule.
    pub discarded: Vec<usize>,
    /// Discarded predictors later found violating the exact KKT condition.
    pub strong_rule_failures: Vec<usize>,
    /// KKT violations found by sweeps over the strong set and its complement.
    pub kkt_violations_repaired: usize,
    /// Violations left after the final audit (empty when converged).
    pub final_kkt_violations: Vec<usize>,
}

/// Solutions along a decreasing lambda sequence.
#[derive(Debug, Clone)]
pub struct FitPath {
    pub kind: PenaltyKind,
    pub lambdas: Vec<f64>,
    pub solutions: Vec<CoefficientTree>,
    pub diagnostics: Vec<LambdaDiagnostics>,
}

impl FitPath {
    pub fn converged(&self) -> bool {
        self.diagnostics.iter().all(|d| d.converged)
    }

    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }
}

/// Nested group lasso path (`alpha1`, `alpha2` fixed).
pub fn fit_path_oglasso(
    design: &HierDesign,
    y: &[f64],
    lambdas: &[f64],
    alpha1: f64,
    alpha2: f64,
    config: &SolverConfig,
) -> Result<FitPath> {
    fit_path(design, y, PenaltyKind::OgLasso { alpha1, alpha2 }, None, lambdas, config, None)
}

/// Weighted lasso path with per-coefficient thresholds `lambda * K`.
pub fn fit_path_lasso(
    design: &HierDesign,
    y: &[f64],
    weights: &PenaltyWeights,
    lambdas: &[f64],
    config: &SolverConfig,
) -> Result<FitPath> {
    fit_path(design, y, PenaltyKind::Lasso, Some(weights), lambdas, config, None)
}

/// Per-block view of a penalty.
#[derive(Debug, Clone)]
pub struct Penalty {
    kind: PenaltyKind,
    layout: BlockLayout,
    intercept_layout: BlockLayout,
    weights: Vec<f64>,
    intercept_weights: Vec<f64>,
    intercept: bool,
}

impl Penalty {
    /// `weights` defaults to the sample-size weights of the design's hierarchy.
    pub fn new(design: &HierDesign, kind: PenaltyKind, weights: Option<&PenaltyWeights>, intercept: bool) -> Self {
        let layout = design.block_layout();
        let weights = weights
            .cloned()
            .unwrap_or_else(|| crate::design::penalty_weights(design.hierarchy()))
            .block_weights();
        let mut intercept_weights = weights.clone();
        intercept_weights[0] = 0.0;
        Self {
            kind,
            intercept_layout: layout.with_free_mu(),
            layout,
            weights,
            intercept_weights,
            intercept,
        }
    }

    pub fn kind(&self) -> PenaltyKind {
        self.kind
    }

    /// True for the intercept block, whose overall coefficient is unpenalized.
    pub fn is_free(&self, j: usize) -> bool {
        self.intercept && j == 0
    }

    fn layout(&self, j: usize) -> &BlockLayout {
        if self.is_free(j) {
            &self.intercept_layout
        } else {
            &self.layout
        }
    }

    fn weights(&self, j: usize) -> &[f64] {
        if self.is_free(j) {
            &self.intercept_weights
        } else {
            &self.weights
        }
    }

    /// Penalty of one block divided by lambda.
    pub fn value(&self, j: usize, theta: &[f64]) -> f64 {
        match self.kind {
            PenaltyKind::OgLasso { alpha1, alpha2 } => hier_penalty(theta, alpha1, alpha2, self.layout(j)),
            PenaltyKind::Lasso => theta
                .iter()
                .zip(self.weights(j))
                .filter(|(v, _)| **v != 0.0)
                .map(|(v, w)| v.abs() * w)
                .sum(),
        }
    }

    /// Proximal map of `t * lambda * penalty` in place.
    pub fn prox(&self, j: usize, z: &mut [f64], t: f64, lambda: f64) {
        match self.kind {
            PenaltyKind::OgLasso { alpha1, alpha2 } => {
                hier_prox_in_place(z, t, HierPenaltyParams { lambda, alpha1, alpha2 }, self.layout(j))
            }
            PenaltyKind::Lasso => {
                for (v, w) in z.iter_mut().zip(self.weights(j)) {
                    *v = soft_threshold_scalar(*v, t * lambda * w);
                }
            }
        }
    }

    /// Whether `theta_j = 0` (penalized coordinates) satisfies the optimality
    /// condition given the block gradient: one proximal step from zero stays zero.
    pub fn zero_optimal(&self, j: usize, grad: &[f64], lambda: f64) -> bool {
        let mut z: Vec<f64> = grad.iter().map(|g| -g).collect();
        self.prox(j, &mut z, 1.0, lambda);
        let skip = if self.is_free(j) { Some(0) } else { None };
        z.iter().enumerate().all(|(k, &v)| Some(k) == skip || v == 0.0)
    }

    /// Strong-rule score, compared against `lambda` (or `2 lambda_r - lambda_{r-1}`).
    ///
    /// For the group penalty this is `|S(grad, lambda alpha1 theta~ + lambda alpha2 1_{-1})|_2`
    /// with `theta~` the per-MDC normalized absolute coefficients (zero for zero
    /// blocks); for the lasso it is `max_k |grad_k| / K_k`.
    pub fn strong_score(&self, j: usize, grad: &[f64], theta: Option<&[f64]>, lambda: f64) -> f64 {
        match self.kind {
            PenaltyKind::OgLasso { alpha1, alpha2 } => {
                let layout = self.layout(j);
                let mut thresholds = vec![0.0; grad.len()];
                for block in &layout.mdc_blocks {
                    let norm = theta.map_or(0.0, |t| block.iter().map(|&i| t[i] * t[i]).sum::<f64>().sqrt());
                    for &i in block {
                        let tilde = match theta {
                            Some(t) if norm > 0.0 => t[i].abs() / norm,
                            _ => 0.0,
                        };
                        thresholds[i] = lambda * alpha1 * tilde + lambda * alpha2;
                    }
                }
                grad.iter()
                    .zip(&thresholds)
                    .map(|(&g, &b)| soft_threshold_scalar(g, b).powi(2))
                    .sum::<f64>()
                    .sqrt()
            }
            PenaltyKind::Lasso => grad
                .iter()
                .zip(self.weights(j))
                .filter(|(_, &w)| w > 0.0 && w.is_finite())
                .map(|(g, w)| g.abs() / w)
                .fold(0.0, f64::max),
        }
    }

    /// Norm of the penalized part of a gradient block (upper bracket for lambda_max).
    pub fn penalized_norm(&self, j: usize, grad: &[f64]) -> f64 {
        let skip = if self.is_free(j) { 1 } else { 0 };
        grad[skip..].iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    /// Minimizes the block majorizer around `theta0`.
    pub(crate) fn block_update(
        &self,
        j: usize,
        theta0: &[f64],
        grad: &[f64],
        gram: &BlockGram<'_>,
        step: f64,
        lambda: f64,
        config: &SolverConfig,
    ) -> Vec<f64> {
        match self.kind {
            PenaltyKind::OgLasso { .. } => self.prox_gradient_update(j, theta0, grad, gram, step, lambda, config),
            PenaltyKind::Lasso => self.coordinate_update(j, theta0, grad, gram, lambda, config),
        }
    }

    /// Surrogate value `g^T d + 1/2 d^T Q d + lambda P(theta0 + d)` with `Q = 0.25 G`.
    fn surrogate(&self, j: usize, theta0: &[f64], theta: &[f64], grad: &[f64], gram: &BlockGram<'_>, lambda: f64) -> f64 {
        let d: Vec<f64> = theta.iter().zip(theta0).map(|(a, b)| a - b).collect();
        let linear: f64 = grad.iter().zip(&d).map(|(g, v)| g * v).sum();
        linear + 0.5 * CURVATURE_BOUND * gram.quad(&d) + lambda * self.value(j, theta)
    }

    /// Accelerated proximal iterations on the majorizer with step `t_j` and
    /// gradient-based momentum restarts. The first iterate is the plain MM step;
    /// the returned point never has a larger surrogate value than that step.
    #[allow(clippy::too_many_arguments)]
    fn prox_gradient_update(
        &self,
        j: usize,
        theta0: &[f64],
        grad: &[f64],
        gram: &BlockGram<'_>,
        step: f64,
        lambda: f64,
        config: &SolverConfig,
    ) -> Vec<f64> {
        let w = theta0.len();
        let mut x = theta0.to_vec();
        let mut yv = x.clone();
        let mut momentum = 1.0f64;
        let mut qd = vec![0.0; w];
        let mut next = vec![0.0; w];
        let mut d = vec![0.0; w];
        let mut first: Option<(Vec<f64>, f64)> = None;
        for _ in 0..config.inner_max_iter.max(1) {
            for k in 0..w {
                d[k] = yv[k] - theta0[k];
            }
            gram.apply(&d, &mut qd);
            for k in 0..w {
                next[k] = yv[k] - step * (grad[k] + CURVATURE_BOUND * qd[k]);
            }
            self.prox(j, &mut next, step, lambda);
            let mut change = 0.0f64;
            let mut restart = 0.0;
            for k in 0..w {
                change = change.max((next[k] - x[k]).abs());
                restart += (yv[k] - next[k]) * (next[k] - x[k]);
            }
            let first_change = match &first {
                Some((_, c)) => *c,
                None => {
                    first = Some((next.clone(), change));
                    change
                }
            };
            if restart > 0.0 {
                momentum = 1.0;
            }
            let m_next = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
            let beta = (momentum - 1.0) / m_next;
            for k in 0..w {
                yv[k] = next[k] + beta * (next[k] - x[k]);
            }
            momentum = m_next;
            std::mem::swap(&mut x, &mut next);
            let scale = x.iter().map(|v| v.abs()).fold(1.0, f64::max);
            if change <= config.inner_tol * scale || change <= config.inner_rel_tol * first_change {
                break;
            }
        }
        if let Some((plain, _)) = first {
            if plain != x
                && self.surrogate(j, theta0, &x, grad, gram, lambda) > self.surrogate(j, theta0, &plain, grad, gram, lambda)
            {
                return plain;
            }
        }
        x
    }

    /// Cyclic coordinate descent on the majorizer with per-coordinate
    /// thresholds `lambda * K_k`.
    fn coordinate_update(
        &self,
        j: usize,
        theta0: &[f64],
        grad: &[f64],
        gram: &BlockGram<'_>,
        lambda: f64,
        config: &SolverConfig,
    ) -> Vec<f64> {
        let weights = self.weights(j);
        let h = gram.drg_sq();
        let n_drg = h.len();
        let n_mdc = theta0.len() - 1 - n_drg;
        let children: Vec<Vec<usize>> = self
            .layout
            .mdc_blocks
            .iter()
            .map(|b| b[1..].iter().map(|&i| i - 1 - n_mdc).collect())
            .collect();
        let diag: Vec<f64> = gram.diagonal().into_iter().map(|v| CURVATURE_BOUND * v).collect();
        let mut theta = theta0.to_vec();
        // s[d] = combined change mu + eta_{M(d)} + delta_d relative to theta0
        let mut s = vec![0.0; n_drg];
        let q = CURVATURE_BOUND;

        let update = |k: usize, g_lin: f64, theta: &mut [f64]| -> f64 {
            let curv = diag[k];
            let old = theta[k];
            let new = if curv > 0.0 {
                soft_threshold_scalar(old - g_lin / curv, lambda * weights[k] / curv)
            } else if lambda * weights[k] > 0.0 {
                0.0
            } else {
                old
            };
            theta[k] = new;
            new - old
        };

        let mut first_change = None;
        for _ in 0..config.inner_max_iter {
            let mut max_change = 0.0f64;
            // overall effect
            let g_mu = grad[0] + q * (0..n_drg).map(|d| h[d] * s[d]).sum::<f64>();
            let dmu = update(0, g_mu, &mut theta);
            if dmu != 0.0 {
                s.iter_mut().for_each(|v| *v += dmu);
            }
            max_change = max_change.max(dmu.abs());
            for (m, kids) in children.iter().enumerate() {
                let k = 1 + m;
                let g = grad[k] + q * kids.iter().map(|&d| h[d] * s[d]).sum::<f64>();
                let dk = update(k, g, &mut theta);
                if dk != 0.0 {
                    kids.iter().for_each(|&d| s[d] += dk);
                }
                max_change = max_change.max(dk.abs());
            }
            for d in 0..n_drg {
                let k = 1 + n_mdc + d;
                let g = grad[k] + q * h[d] * s[d];
                let dk = update(k, g, &mut theta);
                s[d] += dk;
                max_change = max_change.max(dk.abs());
            }
            let first = *first_change.get_or_insert(max_change);
            let scale = theta.iter().map(|v| v.abs()).fold(1.0, f64::max);
            if max_change <= config.inner_tol * scale || max_change <= config.inner_rel_tol * first {
                break;
            }
        }
        theta
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::HierarchySpec;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy_design(seed: u64) -> HierDesign {
        let spec = HierarchySpec::build(&[("a", "A"), ("b", "A"), ("c", "B"), ("d", "B")], &["a"]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 40;
        let x = Array2::from_shape_fn((n, 3), |(_, j)| if j == 0 { 1.0 } else { rng.gen_range(-2.0..2.0) });
        let labels: Vec<&str> = (0..n).map(|i| ["a", "b", "c", "d"][i % 4]).collect();
        let spec = spec.recount(&spec.indices_of(&labels).unwrap());
        HierDesign::build(&x, &labels, &spec).unwrap()
    }

    fn check_update_decreases_surrogate(kind: PenaltyKind) {
        let design = toy_design(5);
        let penalty = Penalty::new(&design, kind, None, true);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let config = SolverConfig {
            inner_rel_tol: 0.0,
            ..SolverConfig::default()
        };
        for j in 0..design.p() {
            let w = design.block_width();
            let theta0: Vec<f64> = (0..w).map(|_| rng.gen_range(-0.5..0.5)).collect();
            // gradients lie in the row space of X^(j)
            let r: Vec<f64> = (0..design.n_rows()).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let grad = design.block_tmatvec(j, &r);
            let gram = design.block_gram(j);
            let step = crate::objective::step_size(&design, j);
            let out = penalty.block_update(j, &theta0, &grad, &gram, step, 0.7, &config);
            let f0 = penalty.surrogate(j, &theta0, &theta0, &grad, &gram, 0.7);
            let f1 = penalty.surrogate(j, &theta0, &out, &grad, &gram, 0.7);
            assert!(f1 <= f0 + 1e-12, "{f1} > {f0}");
            // Stationarity of the majorizer: one more prox step does not move.
            let d: Vec<f64> = out.iter().zip(&theta0).map(|(a, b)| a - b).collect();
            let mut qd = vec![0.0; w];
            gram.apply(&d, &mut qd);
            let mut z: Vec<f64> = (0..w).map(|k| out[k] - step * (grad[k] + 0.25 * qd[k])).collect();
            penalty.prox(j, &mut z, step, 0.7);
            let resid = z.iter().zip(&out).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(resid < 1e-8, "block {j}: residual {resid}");
        }
    }

    #[test]
    fn group_update_minimizes_majorizer() {
        check_update_decreases_surrogate(PenaltyKind::OgLasso { alpha1: 0.7, alpha2: 0.4 });
    }

    #[test]
    fn lasso_update_minimizes_majorizer() {
        check_update_decreases_surrogate(PenaltyKind::Lasso);
    }

    #[test]
    fn zero_optimality_matches_threshold() {
        let design = toy_design(1);
        let penalty = Penalty::new(&design, PenaltyKind::Lasso, Some(&PenaltyWeights::unit(design.hierarchy())), true);
        let mut grad = vec![0.0; design.block_width()];
        grad[3] = 2.0;
        assert!(penalty.zero_optimal(1, &grad, 2.0));
        assert!(!penalty.zero_optimal(1, &grad, 1.99));
        // intercept mu is free and ignored
        grad[3] = 0.0;
        grad[0] = 50.0;
        assert!(penalty.zero_optimal(0, &grad, 0.1));
        assert!(!penalty.zero_optimal(1, &grad, 0.1));
    }

    #[test]
    fn strong_score_of_orthogonal_predictor_is_zero() {
        let design = toy_design(2);
        let penalty = Penalty::new(&design, PenaltyKind::OgLasso { alpha1: 1.0, alpha2: 1.0 }, None, true);
        let grad = vec![0.0; design.block_width()];
        assert_eq!(penalty.strong_score(1, &grad, None, 0.5), 0.0);
    }
}
