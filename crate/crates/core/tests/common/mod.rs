//! Independent oracles and random instances shared by the integration tests and
//! the acceptance suite.
#![allow(dead_code)]

use hiernest::objective::sigmoid;
use hiernest::prox::{hier_prox_in_place, BlockLayout, HierPenaltyParams};
use hiernest::solver::{CoefficientTree, PenaltyKind};
use hiernest::{standardize, HierDesign, HierarchySpec, PenaltyWeights};
use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Proximal map of `sum_g w_g |x_g|_2` by block coordinate ascent on the dual
/// (`x = z - sum_g v_g`, `|v_g| <= w_g`). Returns the primal point and the
/// duality gap, which bounds `|x - x*|^2 / 2`.
pub fn group_prox_oracle(z: &[f64], groups: &[(Vec<usize>, f64)]) -> (Vec<f64>, f64) {
    let n = z.len();
    let mut v: Vec<Vec<f64>> = groups.iter().map(|(g, _)| vec![0.0; g.len()]).collect();
    let mut s = vec![0.0; n];
    let gap = |s: &[f64], v: &[Vec<f64>]| -> f64 {
        let x: Vec<f64> = z.iter().zip(s).map(|(a, b)| a - b).collect();
        groups
            .iter()
            .zip(v)
            .map(|((g, w), vg)| {
                let norm = g.iter().map(|&i| x[i] * x[i]).sum::<f64>().sqrt();
                let inner: f64 = g.iter().zip(vg).map(|(&i, a)| a * x[i]).sum();
                w * norm - inner
            })
            .sum()
    };
    for sweep in 0..2_000_000 {
        let mut change: f64 = 0.0;
        for ((g, w), vg) in groups.iter().zip(v.iter_mut()) {
            let mut r: Vec<f64> = g.iter().zip(vg.iter()).map(|(&i, a)| z[i] - s[i] + a).collect();
            let norm = r.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm > *w {
                r.iter_mut().for_each(|a| *a *= w / norm);
            }
            for ((&i, old), new) in g.iter().zip(vg.iter_mut()).zip(&r) {
                s[i] += new - *old;
                change = change.max((new - *old).abs());
                *old = *new;
            }
        }
        if sweep % 64 == 63 || change == 0.0 {
            let ga = gap(&s, &v);
            if ga < 1e-14 || change == 0.0 {
                break;
            }
        }
    }
    let x = z.iter().zip(&s).map(|(a, b)| a - b).collect();
    (x, gap(&s, &v))
}

/// Groups of the nested penalty `t lambda (|x|_2 + sum_M alpha1 |x^M|_2 + alpha2 |x^M|_1)`.
pub fn hier_groups(layout: &BlockLayout, t: f64, lambda: f64, alpha1: f64, alpha2: f64) -> Vec<(Vec<usize>, f64)> {
    let scale = t * lambda;
    let mut groups = Vec::new();
    for block in &layout.mdc_blocks {
        for &i in block {
            groups.push((vec![i], scale * alpha2));
        }
        groups.push((block.clone(), scale * alpha1));
    }
    let root: Vec<usize> = if layout.free_mu {
        layout.mdc_blocks.iter().flatten().copied().collect()
    } else {
        (0..layout.width()).collect()
    };
    groups.push((root, scale));
    groups
}

/// Random contiguous layout of `dim` coordinates in `blocks` MDC blocks.
pub fn random_layout(rng: &mut impl Rng, dim: usize, blocks: usize) -> BlockLayout {
    let mut sizes = vec![1; blocks];
    for _ in 0..dim - 1 - blocks {
        sizes[rng.gen_range(0..blocks)] += 1;
    }
    BlockLayout::contiguous(&sizes)
}

pub fn normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Exhaustive pairwise concordance with ties counted one half.
pub fn auroc_oracle(scores: &[f64], labels: &[f64]) -> f64 {
    let (mut twice, mut pos, mut neg) = (0u64, 0u64, 0u64);
    for (i, &li) in labels.iter().enumerate() {
        if li == 1.0 {
            pos += 1;
        } else {
            neg += 1;
        }
        if li != 1.0 {
            continue;
        }
        for (k, &lk) in labels.iter().enumerate() {
            if lk == 1.0 {
                continue;
            }
            if scores[i] > scores[k] {
                twice += 2;
            } else if scores[i] == scores[k] {
                twice += 1;
            }
        }
    }
    twice as f64 / (2 * pos * neg) as f64
}

/// Precision at each positive's rank (descending scores, ties in input
/// order), averaged over positives in rank order.
pub fn auprc_oracle(scores: &[f64], labels: &[f64]) -> f64 {
    let rank = |i: usize| -> usize {
        (0..scores.len())
            .filter(|&k| scores[k] > scores[i] || (scores[k] == scores[i] && k <= i))
            .count()
    };
    let mut positives: Vec<(usize, usize)> = (0..scores.len())
        .filter(|&i| labels[i] == 1.0)
        .map(|i| (rank(i), i))
        .collect();
    positives.sort();
    let mut sum = 0.0;
    for (hits, (r, _)) in positives.iter().enumerate() {
        sum += (hits + 1) as f64 / *r as f64;
    }
    sum / positives.len() as f64
}

/// A small random logistic problem on a hierarchical design.
pub struct Instance {
    pub design: HierDesign,
    pub y: Vec<f64>,
    pub spec: HierarchySpec,
}

/// `n` rows, `p` predictors (intercept first), `n_mdc` MDCs with
/// `drgs_per_mdc` DRGs each; rows dealt to DRGs in turn.
pub fn random_instance(rng: &mut impl Rng, n: usize, p: usize, n_mdc: usize, drgs_per_mdc: usize) -> Instance {
    let n_drg = n_mdc * drgs_per_mdc;
    let names: Vec<String> = (0..n_drg).map(|d| format!("D{d}")).collect();
    let pairs: Vec<(String, String)> = (0..n_drg).map(|d| (names[d].clone(), format!("M{}", d / drgs_per_mdc))).collect();
    let labels: Vec<String> = (0..n).map(|i| names[i % n_drg].clone()).collect();
    let spec = HierarchySpec::build(&pairs, &labels).unwrap();
    let mut x = Array2::from_shape_fn((n, p), |(_, j)| if j == 0 { 1.0 } else { normal(rng) });
    x = standardize(&x).0;
    let beta: Vec<Vec<f64>> = (0..n_drg).map(|_| (0..p).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let y = (0..n)
        .map(|i| {
            let d = i % n_drg;
            let eta: f64 = (0..p).map(|j| x[[i, j]] * beta[d][j]).sum();
            (rng.gen::<f64>() < sigmoid(eta)) as u8 as f64
        })
        .collect();
    let design = HierDesign::build(&x, &labels, &spec).unwrap();
    Instance { design, y, spec }
}

/// Independent penalty used by the reference solver.
pub enum RefPenalty<'a> {
    Group { alpha1: f64, alpha2: f64, layout: &'a BlockLayout },
    /// Per-coefficient weights in block order (overall, MDC..., DRG...).
    Lasso { weights: Vec<f64> },
}

impl RefPenalty<'_> {
    fn prox(&self, j: usize, z: &mut [f64], t: f64, lambda: f64) {
        match self {
            RefPenalty::Group { alpha1, alpha2, layout } => {
                let layout = if j == 0 { layout.with_free_mu() } else { (*layout).clone() };
                hier_prox_in_place(z, t, HierPenaltyParams { lambda, alpha1: *alpha1, alpha2: *alpha2 }, &layout);
            }
            RefPenalty::Lasso { weights } => {
                for (k, v) in z.iter_mut().enumerate() {
                    let w = if j == 0 && k == 0 { 0.0 } else { weights[k] };
                    let b = t * lambda * w;
                    *v = if v.abs() <= b { 0.0 } else { v.signum() * (v.abs() - b) };
                }
            }
        }
    }
}

fn full_gradient(design: &HierDesign, beta: &[f64], y: &[f64]) -> Vec<f64> {
    let eta = design.matvec(beta);
    let r: Vec<f64> = eta.iter().zip(y).map(|(&e, &v)| sigmoid(e) - v).collect();
    (0..design.n_cols())
        .map(|c| {
            let (rows, vals) = design.column(c);
            rows.iter().zip(vals).map(|(&i, &x)| x * r[i]).sum()
        })
        .collect()
}

fn lipschitz(design: &HierDesign) -> f64 {
    let n = design.n_cols();
    let mut v = vec![1.0; n];
    let mut est = 0.0;
    for _ in 0..1000 {
        let xv = design.matvec(&v);
        let w: Vec<f64> = (0..n)
            .map(|c| {
                let (rows, vals) = design.column(c);
                rows.iter().zip(vals).map(|(&i, &x)| x * xv[i]).sum()
            })
            .collect();
        let norm = w.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 1.0;
        }
        let next = norm / v.iter().map(|a| a * a).sum::<f64>().sqrt();
        v = w.iter().map(|a| a / norm).collect();
        if (next - est).abs() <= 1e-12 * next {
            est = next;
            break;
        }
        est = next;
    }
    0.25 * est * 1.01
}

/// Unscreened accelerated proximal gradient on the full coefficient vector,
/// with adaptive restart, run until the gradient mapping is below `tol`.
/// Returns the flat solution.
pub fn reference_solve(design: &HierDesign, y: &[f64], penalty: &RefPenalty, lambda: f64, start: &[f64], tol: f64) -> Vec<f64> {
    let l = lipschitz(design);
    let t = 1.0 / l;
    let p = design.p();
    let prox_step = |x: &[f64]| -> Vec<f64> {
        let g = full_gradient(design, x, y);
        let mut z: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a - t * b).collect();
        for j in 0..p {
            let r = design.block_range(j);
            penalty.prox(j, &mut z[r], t, lambda);
        }
        z
    };
    let mut x = start.to_vec();
    let mut yk = x.clone();
    let mut theta: f64 = 1.0;
    for _ in 0..500_000 {
        let next = prox_step(&yk);
        let restart: f64 = yk.iter().zip(&next).zip(&x).map(|((a, b), c)| (a - b) * (b - c)).sum();
        let theta_next = if restart > 0.0 { 1.0 } else { 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt()) };
        let mom = if restart > 0.0 { 0.0 } else { (theta - 1.0) / theta_next };
        yk = next.iter().zip(&x).map(|(a, b)| a + mom * (a - b)).collect();
        x = next;
        theta = theta_next;
        let mapped = prox_step(&x);
        let residual = mapped.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) * l;
        if residual < tol {
            return mapped;
        }
    }
    x
}

/// Objective with the reference penalty on a flat vector.
pub fn reference_objective(design: &HierDesign, y: &[f64], kind: PenaltyKind, weights: Option<&PenaltyWeights>, beta: &[f64], lambda: f64) -> f64 {
    let tree = CoefficientTree::from_flat(beta, design.p(), design.hierarchy().n_mdc(), design.hierarchy().n_drg()).unwrap();
    let penalty = hiernest::solver::Penalty::new(design, kind, weights, true);
    hiernest::solver::objective_value(design, y, &tree, &penalty, lambda).unwrap()
}
