//! Proximal operators for the nested (tree-structured) group penalty.
//!
//! For one predictor block `theta = [mu; theta^{M_1}; ...; theta^{M_m}]` the
//! penalty is
//!
//! ```text
//! lambda * ( |theta|_2 + sum_M ( alpha1 |theta^M|_2 + alpha2 |theta^M|_1 ) )
//! ```
//!
//! Every pair of groups is either nested or disjoint, so the proximal operator is
//! the composition of the group operators ordered from the leaves to the root:
//! coordinate soft-thresholding, then one group shrink per MDC block, then one
//! group shrink of the whole block.

/// Positions of `mu` and of each MDC sub-block inside one predictor block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockLayout {
    pub mu_index: usize,
    /// One index set per MDC: `eta^M` first, then `delta_d` for `d in M`.
    pub mdc_blocks: Vec<Vec<usize>>,
    /// When set, `mu` is unpenalized and the root group covers only the MDC blocks.
    pub free_mu: bool,
    width: usize,
}

impl BlockLayout {
    pub fn new(mu_index: usize, mdc_blocks: Vec<Vec<usize>>) -> Self {
        let width = 1 + mdc_blocks.iter().map(Vec::len).sum::<usize>();
        debug_assert!({
            let mut seen = vec![false; width];
            seen[mu_index] = true;
            mdc_blocks.iter().flatten().all(|&i| !std::mem::replace(&mut seen[i], true))
        });
        Self {
            mu_index,
            mdc_blocks,
            free_mu: false,
            width,
        }
    }

    /// Contiguous layout `[mu, (eta, delta...)_1, (eta, delta...)_2, ...]` from block sizes.
    pub fn contiguous(block_sizes: &[usize]) -> Self {
        let mut next = 1;
        let blocks = block_sizes
            .iter()
            .map(|&s| {
                let b: Vec<usize> = (next..next + s).collect();
                next += s;
                b
            })
            .collect();
        Self::new(0, blocks)
    }

    /// Copy of this layout with an unpenalized `mu` (used for the intercept).
    pub fn with_free_mu(&self) -> Self {
        Self {
            free_mu: true,
            ..self.clone()
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }
}

/// Coordinatewise `sign(z_i) (|z_i| - b_i)_+`.
pub fn soft_threshold(z: &[f64], b: &[f64]) -> Vec<f64> {
    assert_eq!(z.len(), b.len(), "threshold length");
    z.iter().zip(b).map(|(&v, &t)| soft_threshold_scalar(v, t)).collect()
}

#[inline]
pub fn soft_threshold_scalar(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// `(1 - a / |z|_2)_+ z`.
pub fn group_shrink(z: &[f64], a: f64) -> Vec<f64> {
    let mut out = z.to_vec();
    group_shrink_in_place(&mut out, a);
    out
}

fn group_shrink_in_place(z: &mut [f64], a: f64) {
    if a <= 0.0 {
        return;
    }
    let norm = l2(z.iter().copied());
    if norm == 0.0 {
        return;
    }
    let factor = (1.0 - a / norm).max(0.0);
    z.iter_mut().for_each(|v| *v *= factor);
}

fn group_shrink_indices(z: &mut [f64], idx: &[usize], a: f64) {
    if a <= 0.0 {
        return;
    }
    let norm = l2(idx.iter().map(|&i| z[i]));
    if norm == 0.0 {
        return;
    }
    let factor = (1.0 - a / norm).max(0.0);
    idx.iter().for_each(|&i| z[i] *= factor);
}

#[inline]
fn l2(values: impl Iterator<Item = f64>) -> f64 {
    values.map(|v| v * v).sum::<f64>().sqrt()
}

/// Tuning parameters of the nested group penalty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HierPenaltyParams {
    pub lambda: f64,
    pub alpha1: f64,
    pub alpha2: f64,
}

/// `argmin_x 1/2 |x - z|^2 + t * lambda * (|x|_2 + sum_M (alpha1 |x^M|_2 + alpha2 |x^M|_1))`.
pub fn hier_prox(z: &[f64], t: f64, lambda: f64, alpha1: f64, alpha2: f64, layout: &BlockLayout) -> Vec<f64> {
    let mut out = z.to_vec();
    hier_prox_in_place(&mut out, t, HierPenaltyParams { lambda, alpha1, alpha2 }, layout);
    out
}

pub fn hier_prox_in_place(x: &mut [f64], t: f64, params: HierPenaltyParams, layout: &BlockLayout) {
    debug_assert_eq!(x.len(), layout.width());
    let scale = t * params.lambda;
    if scale <= 0.0 {
        return;
    }
    let l1 = scale * params.alpha2;
    if l1 > 0.0 {
        for block in &layout.mdc_blocks {
            for &i in block {
                x[i] = soft_threshold_scalar(x[i], l1);
            }
        }
    }
    let group = scale * params.alpha1;
    for block in &layout.mdc_blocks {
        group_shrink_indices(x, block, group);
    }
    if layout.free_mu {
        let norm = l2(layout.mdc_blocks.iter().flatten().map(|&i| x[i]));
        if norm > 0.0 {
            let factor = (1.0 - scale / norm).max(0.0);
            layout.mdc_blocks.iter().flatten().for_each(|&i| x[i] *= factor);
        }
    } else {
        group_shrink_in_place(x, scale);
    }
}

/// Penalty value divided by `lambda`.
pub fn hier_penalty(x: &[f64], alpha1: f64, alpha2: f64, layout: &BlockLayout) -> f64 {
    let root = if layout.free_mu {
        l2(layout.mdc_blocks.iter().flatten().map(|&i| x[i]))
    } else {
        l2(x.iter().copied())
    };
    let blocks: f64 = layout
        .mdc_blocks
        .iter()
        .map(|b| alpha1 * l2(b.iter().map(|&i| x[i])) + alpha2 * b.iter().map(|&i| x[i].abs()).sum::<f64>())
        .sum();
    root + blocks
}
