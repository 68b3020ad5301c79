//! Expanded design matrix `X_H`, its column layout, and penalty weights.
//!
//! `X_H` is the row-wise Kronecker product of each covariate row with the
//! membership row `[1 | MDC indicators | DRG indicators]`, i.e. the transposed
//! Khatri-Rao product of `X^T` and `H^T`. Columns are predictor-major: predictor
//! `j` owns the contiguous block `j * w .. (j + 1) * w` with `w = 1 + n_mdc + n_drg`,
//! laid out as `(overall | MDC_1 .. MDC_m | DRG_1 .. DRG_D)`.

use std::ops::Range;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::HierarchySpec;
use crate::prox::BlockLayout;

/// Per-column standardization statistics (population convention).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: f64,
    pub scale: f64,
    /// Constant columns are passed through untouched.
    pub constant: bool,
}

impl ColumnStats {
    #[inline]
    pub fn apply(&self, v: f64) -> f64 {
        if self.constant {
            v
        } else {
            (v - self.mean) / self.scale
        }
    }
}

/// Centers and scales every column to mean 0 and population standard deviation 1.
/// Constant columns (the intercept included) are returned unchanged with scale 1.
pub fn standardize(x: &Array2<f64>) -> (Array2<f64>, Vec<ColumnStats>) {
    let n = x.nrows().max(1) as f64;
    let stats: Vec<ColumnStats> = x
        .columns()
        .into_iter()
        .map(|col| {
            let mean = col.sum() / n;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let sd = var.sqrt();
            if sd <= 1e-12 * mean.abs().max(1.0) {
                ColumnStats { mean, scale: 1.0, constant: true }
            } else {
                ColumnStats { mean, scale: sd, constant: false }
            }
        })
        .collect();
    (apply_standardization(x, &stats), stats)
}

/// Applies previously computed statistics (e.g. training-set statistics to test rows).
pub fn apply_standardization(x: &Array2<f64>, stats: &[ColumnStats]) -> Array2<f64> {
    let mut out = x.clone();
    for (mut col, s) in out.columns_mut().into_iter().zip(stats) {
        col.mapv_inplace(|v| s.apply(v));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Overall,
    Mdc,
    Drg,
}

impl Level {
    pub fn as_str(&self) -> &'static str {
        match self {
            Level::Overall => "overall",
            Level::Mdc => "mdc",
            Level::Drg => "drg",
        }
    }
}

impl std::str::FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "overall" => Ok(Level::Overall),
            "mdc" => Ok(Level::Mdc),
            "drg" => Ok(Level::Drg),
            other => Err(Error::InvalidConfig(format!("unknown level `{other}`"))),
        }
    }
}

/// What a flat column of `X_H` stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ColumnRole {
    pub predictor: usize,
    pub level: Level,
    /// MDC index for `Level::Mdc`, DRG index for `Level::Drg`, 0 otherwise.
    pub group: usize,
}

/// Block-sparse expanded design in compressed sparse column form.
#[derive(Debug, Clone)]
pub struct HierDesign {
    n_rows: usize,
    p: usize,
    hierarchy: HierarchySpec,
    row_drg: Vec<usize>,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
    /// `drg_sq[j * n_drg + d] = sum_{i in d} x_ij^2`, the DRG column norms.
    drg_sq: Vec<f64>,
}

impl HierDesign {
    /// Builds `X_H` from a (standardized) covariate matrix and DRG labels.
    pub fn build<S: AsRef<str>>(x: &Array2<f64>, labels: &[S], spec: &HierarchySpec) -> Result<Self> {
        if labels.len() != x.nrows() {
            return Err(Error::LabelMismatch { labels: labels.len(), rows: x.nrows() });
        }
        let row_drg = spec.indices_of(labels)?;
        Ok(Self::from_indices(x, row_drg, spec))
    }

    /// Same as [`HierDesign::build`] with labels already resolved to DRG indices.
    pub fn from_indices(x: &Array2<f64>, row_drg: Vec<usize>, spec: &HierarchySpec) -> Self {
        let (n, p) = x.dim();
        let n_mdc = spec.n_mdc();
        let n_drg = spec.n_drg();
        let mut drg_rows = vec![Vec::new(); n_drg];
        for (i, &d) in row_drg.iter().enumerate() {
            drg_rows[d].push(i);
        }
        let mdc_rows: Vec<Vec<usize>> = (0..n_mdc)
            .map(|m| {
                let mut rows: Vec<usize> = spec.children(m).iter().flat_map(|&d| drg_rows[d].iter().copied()).collect();
                rows.sort_unstable();
                rows
            })
            .collect();
        let all_rows: Vec<usize> = (0..n).collect();

        let nnz_x = x.iter().filter(|v| **v != 0.0).count();
        let mut col_ptr = Vec::with_capacity(p * (1 + n_mdc + n_drg) + 1);
        let mut row_idx = Vec::with_capacity(3 * nnz_x);
        let mut values = Vec::with_capacity(3 * nnz_x);
        let mut drg_sq = vec![0.0; p * n_drg];
        col_ptr.push(0);
        let push_col = |rows: &[usize], j: usize, row_idx: &mut Vec<usize>, values: &mut Vec<f64>| {
            for &i in rows {
                let v = x[[i, j]];
                if v != 0.0 {
                    row_idx.push(i);
                    values.push(v);
                }
            }
            row_idx.len()
        };
        for j in 0..p {
            col_ptr.push(push_col(&all_rows, j, &mut row_idx, &mut values));
            for rows in &mdc_rows {
                col_ptr.push(push_col(rows, j, &mut row_idx, &mut values));
            }
            for (d, rows) in drg_rows.iter().enumerate() {
                let start = row_idx.len();
                col_ptr.push(push_col(rows, j, &mut row_idx, &mut values));
                drg_sq[j * n_drg + d] = values[start..].iter().map(|v| v * v).sum();
            }
        }
        Self {
            n_rows: n,
            p,
            hierarchy: spec.clone(),
            row_drg,
            col_ptr,
            row_idx,
            values,
            drg_sq,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    /// Number of raw predictors (blocks), intercept included.
    pub fn p(&self) -> usize {
        self.p
    }

    pub fn n_cols(&self) -> usize {
        self.p * self.block_width()
    }

    /// Columns per predictor block: `1 + n_mdc + n_drg`.
    pub fn block_width(&self) -> usize {
        1 + self.hierarchy.n_mdc() + self.hierarchy.n_drg()
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn hierarchy(&self) -> &HierarchySpec {
        &self.hierarchy
    }

    pub fn row_drg(&self) -> &[usize] {
        &self.row_drg
    }

    pub fn block_range(&self, j: usize) -> Range<usize> {
        let w = self.block_width();
        j * w..(j + 1) * w
    }

    /// Flat column of the coefficient at `(predictor, level, group)`.
    pub fn col_index(&self, predictor: usize, level: Level, group: usize) -> usize {
        predictor * self.block_width() + local_index(self.hierarchy.n_mdc(), level, group)
    }

    pub fn role(&self, col: usize) -> ColumnRole {
        let w = self.block_width();
        let n_mdc = self.hierarchy.n_mdc();
        let (predictor, k) = (col / w, col % w);
        let (level, group) = if k == 0 {
            (Level::Overall, 0)
        } else if k <= n_mdc {
            (Level::Mdc, k - 1)
        } else {
            (Level::Drg, k - 1 - n_mdc)
        };
        ColumnRole { predictor, level, group }
    }

    /// Row indices and values of one stored column.
    pub fn column(&self, col: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.col_ptr[col], self.col_ptr[col + 1]);
        (&self.row_idx[a..b], &self.values[a..b])
    }

    /// Tree layout of one predictor block in local coordinates.
    pub fn block_layout(&self) -> BlockLayout {
        let n_mdc = self.hierarchy.n_mdc();
        let mdc_blocks = (0..n_mdc)
            .map(|m| {
                std::iter::once(1 + m)
                    .chain(self.hierarchy.children(m).iter().map(|&d| 1 + n_mdc + d))
                    .collect()
            })
            .collect();
        BlockLayout::new(0, mdc_blocks)
    }

    /// `X_H * beta` over all columns.
    pub fn matvec(&self, beta: &[f64]) -> Vec<f64> {
        assert_eq!(beta.len(), self.n_cols(), "coefficient length");
        let mut out = vec![0.0; self.n_rows];
        for (c, &b) in beta.iter().enumerate() {
            if b != 0.0 {
                let (rows, vals) = self.column(c);
                for (&i, &v) in rows.iter().zip(vals) {
                    out[i] += v * b;
                }
            }
        }
        out
    }

    /// `out += X^(j) * delta` for one predictor block, in one pass over `x_j`:
    /// row `i` gains `x_ij (delta_mu + delta_{M(d_i)} + delta_{d_i})`.
    pub fn block_matvec_add(&self, j: usize, delta: &[f64], out: &mut [f64]) {
        let n_mdc = self.hierarchy.n_mdc();
        let combined: Vec<f64> = (0..self.hierarchy.n_drg())
            .map(|d| delta[0] + delta[1 + self.hierarchy.parent(d)] + delta[1 + n_mdc + d])
            .collect();
        let (rows, vals) = self.column(j * self.block_width());
        for (&i, &v) in rows.iter().zip(vals) {
            out[i] += v * combined[self.row_drg[i]];
        }
    }

    /// `X^(j)^T r` for one predictor block, from per-DRG sums `sum_{i in d} x_ij r_i`.
    pub fn block_tmatvec(&self, j: usize, r: &[f64]) -> Vec<f64> {
        self.block_tmatvec_with(j, |i| r[i])
    }

    /// [`HierDesign::block_tmatvec`] with `r_i` supplied by a closure.
    pub fn block_tmatvec_with(&self, j: usize, r: impl Fn(usize) -> f64) -> Vec<f64> {
        let n_mdc = self.hierarchy.n_mdc();
        let n_drg = self.hierarchy.n_drg();
        let mut out = vec![0.0; self.block_width()];
        let (rows, vals) = self.column(j * self.block_width());
        let (head, per_drg) = out.split_at_mut(1 + n_mdc);
        for (&i, &v) in rows.iter().zip(vals) {
            per_drg[self.row_drg[i]] += v * r(i);
        }
        for d in 0..n_drg {
            head[0] += per_drg[d];
            head[1 + self.hierarchy.parent(d)] += per_drg[d];
        }
        out
    }

    /// Gram structure of block `j`.
    pub fn block_gram(&self, j: usize) -> BlockGram<'_> {
        let n_drg = self.hierarchy.n_drg();
        BlockGram {
            drg_sq: &self.drg_sq[j * n_drg..(j + 1) * n_drg],
            hierarchy: &self.hierarchy,
        }
    }
}

pub(crate) fn local_index(n_mdc: usize, level: Level, group: usize) -> usize {
    match level {
        Level::Overall => 0,
        Level::Mdc => 1 + group,
        Level::Drg => 1 + n_mdc + group,
    }
}

/// `X^(j)^T X^(j)` for one predictor block.
///
/// Row `i` of `X^(j) v` is `x_ij (v_mu + v_{M(d_i)} + v_{d_i})`, so the Gram matrix
/// depends on the data only through the per-DRG sums `h_d = sum_{i in d} x_ij^2`.
#[derive(Debug, Clone, Copy)]
pub struct BlockGram<'a> {
    drg_sq: &'a [f64],
    hierarchy: &'a HierarchySpec,
}

impl BlockGram<'_> {
    pub fn drg_sq(&self) -> &[f64] {
        self.drg_sq
    }

    /// Combined per-DRG coefficient `v_mu + v_{M(d)} + v_d`.
    pub fn drg_sums(&self, v: &[f64]) -> Vec<f64> {
        let n_mdc = self.hierarchy.n_mdc();
        (0..self.drg_sq.len())
            .map(|d| v[0] + v[1 + self.hierarchy.parent(d)] + v[1 + n_mdc + d])
            .collect()
    }

    /// `out = G v`.
    pub fn apply(&self, v: &[f64], out: &mut [f64]) {
        let n_mdc = self.hierarchy.n_mdc();
        out.iter_mut().for_each(|o| *o = 0.0);
        for (d, &h) in self.drg_sq.iter().enumerate() {
            if h == 0.0 {
                continue;
            }
            let m = self.hierarchy.parent(d);
            let u = h * (v[0] + v[1 + m] + v[1 + n_mdc + d]);
            out[0] += u;
            out[1 + m] += u;
            out[1 + n_mdc + d] += u;
        }
    }

    /// `v^T G v`.
    pub fn quad(&self, v: &[f64]) -> f64 {
        let n_mdc = self.hierarchy.n_mdc();
        self.drg_sq
            .iter()
            .enumerate()
            .map(|(d, &h)| {
                let s = v[0] + v[1 + self.hierarchy.parent(d)] + v[1 + n_mdc + d];
                h * s * s
            })
            .sum()
    }

    /// Diagonal of `G` in local block order.
    pub fn diagonal(&self) -> Vec<f64> {
        let n_mdc = self.hierarchy.n_mdc();
        let mut diag = vec![0.0; 1 + n_mdc + self.drg_sq.len()];
        for (d, &h) in self.drg_sq.iter().enumerate() {
            diag[0] += h;
            diag[1 + self.hierarchy.parent(d)] += h;
            diag[1 + n_mdc + d] = h;
        }
        diag
    }
}

/// Sample-size penalty factors for the weighted lasso.
///
/// `K^M = (N / n_M)^{1/4}` and `K_d = (N / n_d)^{1/4}`; empty groups get `+inf`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyWeights {
    pub k_mdc: Vec<f64>,
    pub k_drg: Vec<f64>,
}

pub fn penalty_weights(spec: &HierarchySpec) -> PenaltyWeights {
    let total = spec.total() as f64;
    let factor = |count: usize| {
        if count == 0 {
            f64::INFINITY
        } else {
            (total / count as f64).powf(0.25)
        }
    };
    PenaltyWeights {
        k_mdc: (0..spec.n_mdc()).map(|m| factor(spec.mdc_count(m))).collect(),
        k_drg: spec.counts().iter().map(|&c| factor(c)).collect(),
    }
}

impl PenaltyWeights {
    /// Per-coefficient weights in local block order; the overall effect has weight 1.
    pub fn block_weights(&self) -> Vec<f64> {
        std::iter::once(1.0)
            .chain(self.k_mdc.iter().copied())
            .chain(self.k_drg.iter().copied())
            .collect()
    }

    /// All-ones weights of the same shape (plain lasso on `X_H`).
    pub fn unit(spec: &HierarchySpec) -> Self {
        Self {
            k_mdc: vec![1.0; spec.n_mdc()],
            k_drg: vec![1.0; spec.n_drg()],
        }
    }
}
