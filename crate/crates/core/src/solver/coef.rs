use crate::design::{local_index, HierDesign, Level};
use crate::error::{Error, Result};

/// Coefficients `theta_j = (mu_j, {eta_j^M}, {delta_{d,j}})` for every predictor.
///
/// Blocks that are entirely zero are not stored. Every mutation bumps a
/// generation counter so caches derived from the coefficients can detect
/// staleness.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientTree {
    p: usize,
    n_mdc: usize,
    n_drg: usize,
    blocks: Vec<Option<Vec<f64>>>,
    generation: u64,
}

/// One nonzero coefficient.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CoefEntry {
    pub predictor: usize,
    pub level: Level,
    pub group: usize,
    pub value: f64,
}

impl CoefficientTree {
    pub fn zeros(p: usize, n_mdc: usize, n_drg: usize) -> Self {
        Self {
            p,
            n_mdc,
            n_drg,
            blocks: vec![None; p],
            generation: 0,
        }
    }

    pub fn for_design(design: &HierDesign) -> Self {
        let h = design.hierarchy();
        Self::zeros(design.p(), h.n_mdc(), h.n_drg())
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn n_mdc(&self) -> usize {
        self.n_mdc
    }

    pub fn n_drg(&self) -> usize {
        self.n_drg
    }

    pub fn block_width(&self) -> usize {
        1 + self.n_mdc + self.n_drg
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    /// Stored block, `None` when all zero.
    pub fn block(&self, j: usize) -> Option<&[f64]> {
        self.blocks[j].as_deref()
    }

    pub fn block_or_zeros(&self, j: usize) -> Vec<f64> {
        self.blocks[j].clone().unwrap_or_else(|| vec![0.0; self.block_width()])
    }

    pub fn is_zero(&self, j: usize) -> bool {
        self.blocks[j].is_none()
    }

    pub fn set_block(&mut self, j: usize, values: Vec<f64>) {
        debug_assert_eq!(values.len(), self.block_width());
        self.blocks[j] = if values.iter().all(|&v| v == 0.0) { None } else { Some(values) };
        self.generation += 1;
    }

    pub fn clear_block(&mut self, j: usize) {
        self.blocks[j] = None;
        self.generation += 1;
    }

    pub fn get(&self, j: usize, level: Level, group: usize) -> f64 {
        self.blocks[j]
            .as_ref()
            .map_or(0.0, |b| b[local_index(self.n_mdc, level, group)])
    }

    pub fn mu(&self, j: usize) -> f64 {
        self.get(j, Level::Overall, 0)
    }

    pub fn eta(&self, j: usize, mdc: usize) -> f64 {
        self.get(j, Level::Mdc, mdc)
    }

    pub fn delta(&self, j: usize, drg: usize) -> f64 {
        self.get(j, Level::Drg, drg)
    }

    /// `beta_{d,j} = mu_j + eta_j^{M(d)} + delta_{d,j}`.
    pub fn beta(&self, j: usize, drg: usize, mdc: usize) -> f64 {
        self.mu(j) + self.eta(j, mdc) + self.delta(j, drg)
    }

    /// Predictors with a nonzero block.
    pub fn active_predictors(&self) -> Vec<usize> {
        (0..self.p).filter(|&j| self.blocks[j].is_some()).collect()
    }

    /// Flat vector in `X_H` column order.
    pub fn to_flat(&self) -> Vec<f64> {
        let w = self.block_width();
        let mut flat = vec![0.0; self.p * w];
        for (j, block) in self.blocks.iter().enumerate() {
            if let Some(b) = block {
                flat[j * w..(j + 1) * w].copy_from_slice(b);
            }
        }
        flat
    }

    pub fn from_flat(flat: &[f64], p: usize, n_mdc: usize, n_drg: usize) -> Result<Self> {
        let mut tree = Self::zeros(p, n_mdc, n_drg);
        let w = tree.block_width();
        if flat.len() != p * w {
            return Err(Error::DimensionMismatch(format!("flat length {} != {}", flat.len(), p * w)));
        }
        for j in 0..p {
            tree.set_block(j, flat[j * w..(j + 1) * w].to_vec());
        }
        tree.generation = 0;
        Ok(tree)
    }

    /// Nonzero coefficients in `X_H` column order.
    pub fn entries(&self) -> Vec<CoefEntry> {
        let mut out = Vec::new();
        for (j, block) in self.blocks.iter().enumerate() {
            let Some(b) = block else { continue };
            for (k, &value) in b.iter().enumerate() {
                if value == 0.0 {
                    continue;
                }
                let (level, group) = if k == 0 {
                    (Level::Overall, 0)
                } else if k <= self.n_mdc {
                    (Level::Mdc, k - 1)
                } else {
                    (Level::Drg, k - 1 - self.n_mdc)
                };
                out.push(CoefEntry { predictor: j, level, group, value });
            }
        }
        out
    }

    pub fn set(&mut self, j: usize, level: Level, group: usize, value: f64) {
        let mut block = self.block_or_zeros(j);
        block[local_index(self.n_mdc, level, group)] = value;
        self.set_block(j, block);
    }
}
