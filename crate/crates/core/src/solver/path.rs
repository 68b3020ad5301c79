use super::{CoefficientTree, FitPath, LambdaDiagnostics, Penalty, PenaltyKind, SolverConfig};
use crate::design::{HierDesign, Level, PenaltyWeights};
use crate::error::{Error, Result};
use crate::objective::{nll_term, sigmoid, step_size, ObjectiveState};

const LAMBDA_MAX_REL_TOL: f64 = 1e-6;
const AUDIT_ROUNDS: usize = 8;

/// `n` values from `lambda_max` down to `ratio * lambda_max`, evenly spaced on
/// the log scale.
pub fn geometric_path(lambda_max: f64, n: usize, ratio: f64) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::InvalidConfig(format!("path needs at least 2 lambdas, got {n}")));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidConfig(format!("lambda ratio must be in (0, 1), got {ratio}")));
    }
    if !(lambda_max > 0.0 && lambda_max.is_finite()) {
        return Err(Error::InvalidConfig(format!("lambda_max must be positive, got {lambda_max}")));
    }
    let last = (n - 1) as f64;
    Ok((0..n).map(|r| lambda_max * ratio.powf(r as f64 / last)).collect())
}

fn check_response(y: &[f64]) -> Result<()> {
    let positives = y.iter().filter(|&&v| v == 1.0).count();
    if positives == 0 || positives == y.len() {
        return Err(Error::DegenerateResponse);
    }
    Ok(())
}

/// Coefficients with every penalized entry zero and the intercept fitted.
fn null_model(design: &HierDesign, y: &[f64], config: &SolverConfig) -> CoefficientTree {
    let mut coefs = CoefficientTree::for_design(design);
    if !config.intercept {
        return coefs;
    }
    let (rows, vals) = design.column(0);
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let mut mu = (mean / (1.0 - mean)).ln();
    // 1-d Newton on the intercept column (closed form when it is all ones)
    for _ in 0..100 {
        let (mut g, mut h) = (0.0, 0.0);
        for (&i, &v) in rows.iter().zip(vals) {
            let p = sigmoid(v * mu);
            g += v * (p - y[i]);
            h += v * v * p * (1.0 - p);
        }
        if h <= 0.0 {
            break;
        }
        let step = g / h;
        mu -= step;
        if step.abs() < 1e-15 * mu.abs().max(1.0) {
            break;
        }
    }
    coefs.set(0, Level::Overall, 0, mu);
    coefs
}

fn block_gradient(design: &HierDesign, prob: &[f64], y: &[f64], j: usize) -> Vec<f64> {
    design.block_tmatvec_with(j, |i| prob[i] - y[i])
}

/// Smallest lambda at which the all-zero penalized solution is optimal, by
/// bisection on the proximal fixed-point condition at the null model.
pub fn lambda_max(
    design: &HierDesign,
    y: &[f64],
    kind: PenaltyKind,
    weights: Option<&PenaltyWeights>,
    config: &SolverConfig,
) -> Result<f64> {
    check_response(y)?;
    let penalty = Penalty::new(design, kind, weights, config.intercept);
    let coefs = null_model(design, y, config);
    let state = ObjectiveState::new(design, &coefs, y)?;
    let grads: Vec<Vec<f64>> = (0..design.p()).map(|j| block_gradient(design, &state.prob, y, j)).collect();
    let all_zero = |lambda: f64| grads.iter().enumerate().all(|(j, g)| penalty.zero_optimal(j, g, lambda));
    let mut hi = grads
        .iter()
        .enumerate()
        .map(|(j, g)| penalty.penalized_norm(j, g))
        .fold(0.0, f64::max);
    if hi == 0.0 {
        return Ok(0.0);
    }
    while !all_zero(hi) {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    while hi - lo > LAMBDA_MAX_REL_TOL * hi {
        let mid = 0.5 * (lo + hi);
        if all_zero(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Decreasing path of `n_lambda` values from `lambda_max` to `ratio * lambda_max`.
pub fn lambda_path(
    design: &HierDesign,
    y: &[f64],
    kind: PenaltyKind,
    weights: Option<&PenaltyWeights>,
    n_lambda: usize,
    ratio: f64,
    config: &SolverConfig,
) -> Result<Vec<f64>> {
    let lmax = lambda_max(design, y, kind, weights, config)?;
    if lmax == 0.0 {
        return Err(Error::DegenerateResponse);
    }
    geometric_path(lmax, n_lambda, ratio)
}

/// Penalized objective `nll + lambda * P(theta)`.
pub fn objective_value(design: &HierDesign, y: &[f64], coefs: &CoefficientTree, penalty: &Penalty, lambda: f64) -> Result<f64> {
    let mut state = ObjectiveState::new(design, coefs, y)?;
    let pen: f64 = (0..coefs.p())
        .filter_map(|j| coefs.block(j).map(|b| penalty.value(j, b)))
        .sum();
    Ok(state.nll(y) + lambda * pen)
}

/// Sequential strong rule: predictors whose score at the previous solution,
/// `c_j(lambda_prev)`, exceeds `2 lambda - lambda_prev`.
pub fn screen_strong(
    penalty: &Penalty,
    grads: &[Vec<f64>],
    coefs: &CoefficientTree,
    lambda: f64,
    lambda_prev: f64,
) -> Vec<usize> {
    let threshold = 2.0 * lambda - lambda_prev;
    grads
        .iter()
        .enumerate()
        .filter(|(j, g)| penalty.is_free(*j) || penalty.strong_score(*j, g, coefs.block(*j), lambda_prev) > threshold)
        .map(|(j, _)| j)
        .collect()
}

/// Predictors violating the optimality conditions at `lambda`: zero blocks for
/// which one proximal step from zero moves, and nonzero blocks whose
/// prox-gradient residual exceeds `config.kkt_tol`.
pub fn kkt_check(
    design: &HierDesign,
    y: &[f64],
    coefs: &CoefficientTree,
    penalty: &Penalty,
    lambda: f64,
    config: &SolverConfig,
) -> Result<Vec<usize>> {
    let state = ObjectiveState::new(design, coefs, y)?;
    let steps: Vec<f64> = (0..design.p()).map(|j| step_size(design, j)).collect();
    Ok((0..design.p())
        .filter(|&j| {
            let g = block_gradient(design, &state.prob, y, j);
            block_violates(penalty, j, coefs, &g, steps[j], lambda, config.kkt_tol)
        })
        .collect())
}

fn block_violates(penalty: &Penalty, j: usize, coefs: &CoefficientTree, grad: &[f64], step: f64, lambda: f64, tol: f64) -> bool {
    match coefs.block(j) {
        None => !penalty.zero_optimal(j, grad, lambda),
        Some(theta) => {
            if !step.is_finite() {
                return false;
            }
            let mut z: Vec<f64> = theta.iter().zip(grad).map(|(t, g)| t - step * g).collect();
            penalty.prox(j, &mut z, step, lambda);
            z.iter().zip(theta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) > tol
        }
    }
}

/// Working state of one path fit: coefficients, caches, strong and active sets.
struct SolverState<'a> {
    design: &'a HierDesign,
    y: &'a [f64],
    penalty: Penalty,
    config: &'a SolverConfig,
    coefs: CoefficientTree,
    cache: ObjectiveState,
    steps: Vec<f64>,
    strong: Vec<bool>,
    active: Vec<bool>,
    sweeps_since_refresh: usize,
}

impl<'a> SolverState<'a> {
    fn grad(&self, j: usize) -> Vec<f64> {
        block_gradient(self.design, &self.cache.prob, self.y, j)
    }

    fn all_grads(&self) -> Vec<Vec<f64>> {
        (0..self.design.p()).map(|j| self.grad(j)).collect()
    }

    fn objective(&mut self, lambda: f64) -> f64 {
        let pen: f64 = (0..self.coefs.p())
            .filter_map(|j| self.coefs.block(j).map(|b| self.penalty.value(j, b)))
            .sum();
        self.cache.nll(self.y) + lambda * pen
    }

    /// One majorization-minimization update of block `j`; returns the largest
    /// coefficient change.
    fn update_block(&mut self, j: usize, lambda: f64) -> f64 {
        let step = self.steps[j];
        if !step.is_finite() {
            return 0.0;
        }
        let theta0 = self.coefs.block_or_zeros(j);
        let grad = self.grad(j);
        let gram = self.design.block_gram(j);
        let theta = self.penalty.block_update(j, &theta0, &grad, &gram, step, lambda, self.config);
        let delta: Vec<f64> = theta.iter().zip(&theta0).map(|(a, b)| a - b).collect();
        let change = delta.iter().map(|d| d.abs()).fold(0.0, f64::max);
        if change > 0.0 {
            self.coefs.set_block(j, theta);
            self.cache.apply_block_delta(self.design, j, &delta, &self.coefs);
        }
        change
    }

    fn sweep(&mut self, lambda: f64) -> f64 {
        let mut change = 0.0f64;
        for j in 0..self.design.p() {
            if self.active[j] {
                change = change.max(self.update_block(j, lambda));
            }
        }
        self.sweeps_since_refresh += 1;
        if self.sweeps_since_refresh >= self.config.refresh_every {
            self.cache.refresh(self.design, &self.coefs, self.y);
            self.sweeps_since_refresh = 0;
        }
        change
    }

    /// Cycles over the active set until the sweep-level convergence test passes.
    fn solve_active(&mut self, lambda: f64, diag: &mut LambdaDiagnostics) -> bool {
        let mut previous = self.objective(lambda);
        if diag.objective_trace.is_empty() {
            diag.objective_trace.push(previous);
        }
        while diag.sweeps < self.config.max_sweeps {
            let change = self.sweep(lambda);
            diag.sweeps += 1;
            let current = self.objective(lambda);
            diag.objective_trace.push(current);
            let rel = (previous - current).abs() / current.abs().max(1.0);
            previous = current;
            if change < self.config.coef_tol && rel < self.config.obj_tol {
                return true;
            }
        }
        false
    }

    fn solve_lambda(&mut self, lambda: f64, lambda_prev: f64, scores_prev: &[f64]) -> LambdaDiagnostics {
        let p = self.design.p();
        let mut diag = LambdaDiagnostics {
            lambda,
            ..Default::default()
        };
        for j in 0..p {
            self.active[j] = !self.coefs.is_zero(j) || self.penalty.is_free(j);
        }
        if self.config.screening {
            let threshold = 2.0 * lambda - lambda_prev;
            for j in 0..p {
                if scores_prev[j] > threshold || self.active[j] || self.penalty.is_free(j) {
                    self.strong[j] = true;
                }
            }
        } else {
            self.strong.iter_mut().for_each(|s| *s = true);
        }
        diag.discarded = (0..p).filter(|&j| !self.strong[j]).collect();

        let mut converged = false;
        for _ in 0..AUDIT_ROUNDS {
            loop {
                loop {
                    converged = self.solve_active(lambda, &mut diag);
                    let mut added = 0;
                    for j in 0..p {
                        if self.strong[j] && !self.active[j] {
                            let g = self.grad(j);
                            let exact = !self.penalty.zero_optimal(j, &g, lambda);
                            if exact || self.penalty.strong_score(j, &g, None, lambda) > lambda {
                                self.active[j] = true;
                                added += 1;
                                diag.kkt_violations_repaired += exact as usize;
                            }
                        }
                    }
                    if added == 0 || diag.sweeps >= self.config.max_sweeps {
                        break;
                    }
                }
                let mut added = 0;
                for j in 0..p {
                    if !self.strong[j] {
                        let g = self.grad(j);
                        if !self.penalty.zero_optimal(j, &g, lambda) {
                            self.strong[j] = true;
                            self.active[j] = true;
                            added += 1;
                            diag.kkt_violations_repaired += 1;
                            if diag.discarded.contains(&j) {
                                diag.strong_rule_failures.push(j);
                            }
                        }
                    }
                }
                if added == 0 || diag.sweeps >= self.config.max_sweeps {
                    break;
                }
            }
            for j in 0..p {
                if self.active[j] {
                    self.strong[j] = true;
                }
            }
            // final audit over every block
            self.cache.refresh(self.design, &self.coefs, self.y);
            self.sweeps_since_refresh = 0;
            let violations: Vec<usize> = (0..p)
                .filter(|&j| {
                    let g = self.grad(j);
                    block_violates(&self.penalty, j, &self.coefs, &g, self.steps[j], lambda, self.config.kkt_tol)
                })
                .collect();
            diag.final_kkt_violations = violations.clone();
            if violations.is_empty() || diag.sweeps >= self.config.max_sweeps {
                break;
            }
            for &j in &violations {
                self.strong[j] = true;
                self.active[j] = true;
            }
            diag.kkt_violations_repaired += violations.len();
        }
        diag.converged = converged && diag.final_kkt_violations.is_empty();
        diag.objective = self.objective(lambda);
        diag.strong_set_size = self.strong.iter().filter(|&&s| s).count();
        diag.active_set_size = (0..p).filter(|&j| !self.coefs.is_zero(j)).count();
        diag
    }
}

/// Fits the penalized model at every lambda of a strictly decreasing sequence,
/// warm-starting each fit from the previous solution.
pub fn fit_path(
    design: &HierDesign,
    y: &[f64],
    kind: PenaltyKind,
    weights: Option<&PenaltyWeights>,
    lambdas: &[f64],
    config: &SolverConfig,
    warm_start: Option<&CoefficientTree>,
) -> Result<FitPath> {
    if y.len() != design.n_rows() {
        return Err(Error::DimensionMismatch(format!("y has {} rows, design {}", y.len(), design.n_rows())));
    }
    if lambdas.is_empty() || lambdas.windows(2).any(|w| w[1] >= w[0]) || lambdas.iter().any(|l| !(*l >= 0.0)) {
        return Err(Error::InvalidConfig("lambda sequence must be nonnegative and strictly decreasing".into()));
    }
    check_response(y)?;
    let p = design.p();
    let coefs = match warm_start {
        Some(w) => {
            if w.p() != p || w.block_width() != design.block_width() {
                return Err(Error::DimensionMismatch("warm start does not match design".into()));
            }
            w.clone()
        }
        None => null_model(design, y, config),
    };
    let cache = ObjectiveState::new(design, &coefs, y)?;
    let mut state = SolverState {
        design,
        y,
        penalty: Penalty::new(design, kind, weights, config.intercept),
        config,
        coefs,
        cache,
        steps: (0..p).map(|j| step_size(design, j)).collect(),
        strong: vec![false; p],
        active: vec![false; p],
        sweeps_since_refresh: 0,
    };

    let mut solutions = Vec::with_capacity(lambdas.len());
    let mut diagnostics = Vec::with_capacity(lambdas.len());
    let mut lambda_prev = lambdas[0];
    let grads = state.all_grads();
    let mut scores: Vec<f64> = (0..p)
        .map(|j| state.penalty.strong_score(j, &grads[j], state.coefs.block(j), lambda_prev))
        .collect();
    for &lambda in lambdas {
        let diag = state.solve_lambda(lambda, lambda_prev, &scores);
        let grads = state.all_grads();
        scores = (0..p)
            .map(|j| state.penalty.strong_score(j, &grads[j], state.coefs.block(j), lambda))
            .collect();
        solutions.push(state.coefs.clone());
        diagnostics.push(diag);
        lambda_prev = lambda;
    }
    Ok(FitPath {
        kind,
        lambdas: lambdas.to_vec(),
        solutions,
        diagnostics,
    })
}

/// Negative log-likelihood contribution of a single observation (re-exported for tests).
#[allow(dead_code)]
pub(crate) fn observation_nll(eta: f64, y: f64) -> f64 {
    nll_term(eta, y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometric_spacing() {
        let path = geometric_path(1.0, 5, 0.01).unwrap();
        let expected = [1.0, 10f64.powf(-0.5), 0.1, 10f64.powf(-1.5), 0.01];
        for (a, b) in path.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn path_config_validated() {
        assert!(geometric_path(1.0, 1, 0.1).is_err());
        assert!(geometric_path(1.0, 5, 1.0).is_err());
        assert!(geometric_path(1.0, 5, 0.0).is_err());
    }
}
