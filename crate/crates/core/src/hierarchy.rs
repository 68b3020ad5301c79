//! The two-level MDC -> DRG taxonomy and the dataset container.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::design::ColumnStats;
use crate::error::{Error, Result};

/// Name used for the constant intercept column (predictor index 0).
pub const INTERCEPT: &str = "(intercept)";

/// Minimum DRG sample count below which a group is reported as small.
pub const DEFAULT_MIN_GROUP_COUNT: usize = 5;

/// Absolute correlation above which the later of two columns is dropped.
pub const CORRELATION_THRESHOLD: f64 = 0.95;

/// MDC -> DRG taxonomy with per-DRG sample counts.
///
/// Identifiers are opaque strings; dense indices follow lexicographic order so
/// that column layouts are reproducible from the same inputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HierarchySpec {
    mdc_ids: Vec<String>,
    drg_ids: Vec<String>,
    parent: Vec<usize>,
    counts: Vec<usize>,
    children: Vec<Vec<usize>>,
}

impl HierarchySpec {
    /// Builds the taxonomy from `(drg, mdc)` pairs and counts DRG occurrences in
    /// `labels`. DRGs with no observations are kept.
    pub fn build<S: AsRef<str>>(pairs: &[(S, S)], labels: &[S]) -> Result<Self> {
        let mut spec = Self::from_pairs(pairs)?;
        let indices = spec.indices_of(labels)?;
        for d in indices {
            spec.counts[d] += 1;
        }
        Ok(spec)
    }

    /// Builds the taxonomy with explicit per-DRG counts (keyed by DRG id).
    pub fn with_counts<S: AsRef<str>>(pairs: &[(S, S)], counts: &BTreeMap<String, usize>) -> Result<Self> {
        let mut spec = Self::from_pairs(pairs)?;
        for (drg, &count) in counts {
            let d = spec
                .drg_index(drg)
                .ok_or_else(|| Error::UnknownDrg(drg.clone()))?;
            spec.counts[d] = count;
        }
        Ok(spec)
    }

    fn from_pairs<S: AsRef<str>>(pairs: &[(S, S)]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::InvalidConfig("hierarchy has no (drg, mdc) pairs".into()));
        }
        let mut parent_of: BTreeMap<&str, &str> = BTreeMap::new();
        for (drg, mdc) in pairs {
            let (drg, mdc) = (drg.as_ref(), mdc.as_ref());
            if let Some(existing) = parent_of.insert(drg, mdc) {
                if existing != mdc {
                    return Err(Error::DuplicateParent {
                        drg: drg.to_string(),
                        first: existing.to_string(),
                        second: mdc.to_string(),
                    });
                }
            }
        }
        let mdc_set: BTreeSet<&str> = parent_of.values().copied().collect();
        let mdc_ids: Vec<String> = mdc_set.iter().map(|s| s.to_string()).collect();
        let mdc_index: HashMap<&str, usize> = mdc_set.iter().enumerate().map(|(i, s)| (*s, i)).collect();
        let drg_ids: Vec<String> = parent_of.keys().map(|s| s.to_string()).collect();
        let parent: Vec<usize> = parent_of.values().map(|m| mdc_index[m]).collect();
        let mut children = vec![Vec::new(); mdc_ids.len()];
        for (d, &m) in parent.iter().enumerate() {
            children[m].push(d);
        }
        Ok(Self {
            counts: vec![0; drg_ids.len()],
            mdc_ids,
            drg_ids,
            parent,
            children,
        })
    }

    /// Degenerate taxonomy with one MDC and one DRG, used for the pooled model.
    pub fn pooled(n: usize) -> Self {
        Self {
            mdc_ids: vec!["ALL".into()],
            drg_ids: vec!["ALL".into()],
            parent: vec![0],
            counts: vec![n],
            children: vec![vec![0]],
        }
    }

    /// Same taxonomy with counts recomputed from DRG indices.
    pub fn recount(&self, drg_indices: &[usize]) -> Self {
        let mut out = self.clone();
        out.counts.iter_mut().for_each(|c| *c = 0);
        for &d in drg_indices {
            out.counts[d] += 1;
        }
        out
    }

    pub fn n_mdc(&self) -> usize {
        self.mdc_ids.len()
    }

    pub fn n_drg(&self) -> usize {
        self.drg_ids.len()
    }

    pub fn mdc_ids(&self) -> &[String] {
        &self.mdc_ids
    }

    pub fn drg_ids(&self) -> &[String] {
        &self.drg_ids
    }

    pub fn drg_index(&self, drg: &str) -> Option<usize> {
        self.drg_ids.binary_search_by(|probe| probe.as_str().cmp(drg)).ok()
    }

    pub fn mdc_index(&self, mdc: &str) -> Option<usize> {
        self.mdc_ids.binary_search_by(|probe| probe.as_str().cmp(mdc)).ok()
    }

    fn drg_lookup(&self) -> HashMap<&str, usize> {
        self.drg_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect()
    }

    /// Parent MDC index of DRG `d`.
    pub fn parent(&self, d: usize) -> usize {
        self.parent[d]
    }

    /// Child DRG indices of MDC `m`, in DRG order.
    pub fn children(&self, m: usize) -> &[usize] {
        &self.children[m]
    }

    pub fn count(&self, d: usize) -> usize {
        self.counts[d]
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn mdc_count(&self, m: usize) -> usize {
        self.children[m].iter().map(|&d| self.counts[d]).sum()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// DRGs present in the taxonomy without any observation.
    pub fn empty_drgs(&self) -> Vec<&str> {
        self.drg_ids
            .iter()
            .zip(&self.counts)
            .filter(|(_, &c)| c == 0)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    /// `(drg, mdc)` pairs in DRG order.
    pub fn pairs(&self) -> Vec<(String, String)> {
        self.drg_ids
            .iter()
            .zip(&self.parent)
            .map(|(d, &m)| (d.clone(), self.mdc_ids[m].clone()))
            .collect()
    }

    /// Maps string labels to dense DRG indices.
    pub fn indices_of<S: AsRef<str>>(&self, labels: &[S]) -> Result<Vec<usize>> {
        let lookup = self.drg_lookup();
        labels
            .iter()
            .map(|l| {
                lookup
                    .get(l.as_ref())
                    .copied()
                    .ok_or_else(|| Error::UnknownDrg(l.as_ref().to_string()))
            })
            .collect()
    }

    /// Reads a `drg,mdc` hierarchy CSV.
    pub fn read_pairs_csv(path: impl AsRef<Path>) -> Result<Vec<(String, String)>> {
        let mut reader = csv::Reader::from_path(path.as_ref())?;
        let headers = reader.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::MissingColumn(name.to_string()))
        };
        let (drg_col, mdc_col) = (col("drg")?, col("mdc")?);
        let mut pairs = Vec::new();
        for record in reader.records() {
            let record = record?;
            let get = |i: usize| record.get(i).map(|s| s.trim().to_string());
            match (get(drg_col), get(mdc_col)) {
                (Some(d), Some(m)) if !d.is_empty() && !m.is_empty() => pairs.push((d, m)),
                _ => return Err(Error::MalformedCsv(format!("bad hierarchy row {:?}", record))),
            }
        }
        Ok(pairs)
    }

    pub fn write_pairs_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut writer = csv::Writer::from_path(path.as_ref())?;
        writer.write_record(["drg", "mdc"])?;
        for (d, m) in self.pairs() {
            writer.write_record([d, m])?;
        }
        writer.flush()?;
        Ok(())
    }
}

/// Binary outcomes, covariates (column 0 is the intercept) and DRG labels.
#[derive(Debug, Clone, PartialEq)]
pub struct HierDataset {
    pub y: Vec<f64>,
    pub x: Array2<f64>,
    pub drg: Vec<String>,
    pub feature_names: Vec<String>,
    pub standardization: Option<Vec<ColumnStats>>,
}

impl HierDataset {
    /// Checks shapes and that every outcome is 0 or 1.
    pub fn new(y: Vec<f64>, x: Array2<f64>, drg: Vec<String>, feature_names: Vec<String>) -> Result<Self> {
        let n = y.len();
        if n == 0 || x.ncols() == 0 {
            return Err(Error::EmptyData);
        }
        if x.nrows() != n {
            return Err(Error::DimensionMismatch(format!("x has {} rows, y has {}", x.nrows(), n)));
        }
        if drg.len() != n {
            return Err(Error::LabelMismatch { labels: drg.len(), rows: n });
        }
        if feature_names.len() != x.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "{} feature names for {} columns",
                feature_names.len(),
                x.ncols()
            )));
        }
        if let Some(bad) = y.iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(Error::NonBinaryOutcome(bad.to_string()));
        }
        Ok(Self {
            y,
            x,
            drg,
            feature_names,
            standardization: None,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Row subset, preserving row order of `rows`.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            y: rows.iter().map(|&i| self.y[i]).collect(),
            x: self.x.select(ndarray::Axis(0), rows),
            drg: rows.iter().map(|&i| self.drg[i].clone()).collect(),
            feature_names: self.feature_names.clone(),
            standardization: None,
        }
    }

    /// Keeps only the listed columns.
    pub fn select_columns(&self, cols: &[usize]) -> Self {
        Self {
            y: self.y.clone(),
            x: self.x.select(ndarray::Axis(1), cols),
            drg: self.drg.clone(),
            feature_names: cols.iter().map(|&j| self.feature_names[j].clone()).collect(),
            standardization: self
                .standardization
                .as_ref()
                .map(|s| cols.iter().map(|&j| s[j]).collect()),
        }
    }
}

/// Outcome of [`validate_dataset`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    /// Non-intercept columns with zero variance.
    pub zero_variance: Vec<usize>,
    /// Highly correlated pairs; the first column is kept, the second dropped.
    pub correlated: Vec<CorrelatedPair>,
    /// DRGs with fewer observations than the configured minimum.
    pub small_groups: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelatedPair {
    pub kept: usize,
    pub dropped: usize,
    pub correlation: f64,
}

impl ValidationReport {
    /// Column indices surviving the zero-variance and correlation screens.
    pub fn kept_columns(&self, p: usize) -> Vec<usize> {
        let dropped: BTreeSet<usize> = self
            .zero_variance
            .iter()
            .copied()
            .chain(self.correlated.iter().map(|c| c.dropped))
            .collect();
        (0..p).filter(|j| !dropped.contains(j)).collect()
    }
}

/// Zero-variance, correlation (> 0.95, keep the earlier column) and small-group
/// screening. Column 0 is the intercept and never flagged.
pub fn validate_dataset(data: &HierDataset, spec: &HierarchySpec, min_group_count: usize) -> Result<ValidationReport> {
    let n = data.n();
    if n == 0 {
        return Err(Error::EmptyData);
    }
    if data.drg.len() != n {
        return Err(Error::LabelMismatch { labels: data.drg.len(), rows: n });
    }
    spec.indices_of(&data.drg)?;

    let p = data.p();
    let mut report = ValidationReport::default();
    let mut centered: Vec<Option<(Vec<f64>, f64)>> = vec![None; p];
    for j in 1..p {
        let col = data.x.column(j);
        let mean = col.sum() / n as f64;
        let dev: Vec<f64> = col.iter().map(|v| v - mean).collect();
        let ss: f64 = dev.iter().map(|v| v * v).sum();
        if ss <= 1e-24 * (1.0 + mean * mean) * n as f64 {
            report.zero_variance.push(j);
        } else {
            centered[j] = Some((dev, ss.sqrt()));
        }
    }
    let mut dropped = vec![false; p];
    for j in 1..p {
        if dropped[j] {
            continue;
        }
        let Some((a, na)) = &centered[j] else { continue };
        for k in (j + 1)..p {
            if dropped[k] {
                continue;
            }
            let Some((b, nb)) = &centered[k] else { continue };
            let r = a.iter().zip(b).map(|(u, v)| u * v).sum::<f64>() / (na * nb);
            if r.abs() > CORRELATION_THRESHOLD {
                dropped[k] = true;
                report.correlated.push(CorrelatedPair {
                    kept: j,
                    dropped: k,
                    correlation: r,
                });
            }
        }
    }
    let counts = spec.recount(&spec.indices_of(&data.drg)?);
    report.small_groups = counts
        .drg_ids()
        .iter()
        .zip(counts.counts())
        .filter(|(_, &c)| c < min_group_count)
        .map(|(id, _)| id.clone())
        .collect();
    Ok(report)
}
