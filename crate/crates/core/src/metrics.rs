//! AUROC, average precision and per-subgroup summaries.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::design::Level;
use crate::error::{Error, Result};

fn check_lengths(scores: &[f64], labels: &[f64]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!("{} scores, {} labels", scores.len(), labels.len())));
    }
    Ok(())
}

/// Mann-Whitney concordance: the fraction of (positive, negative) pairs ranked
/// correctly, ties counted as one half.
///
/// Computed from sorted scores in `O(n log n)`; the count of concordant pairs is
/// kept as an integer so the result equals the pairwise count exactly.
pub fn auroc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l == 1.0).count() as u64;
    let n_neg = scores.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // twice the concordance count: 2 per strictly lower negative, 1 per tie
    let mut twice: u64 = 0;
    let mut negatives_below: u64 = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let (mut pos, mut neg) = (0u64, 0u64);
        for &i in &order[start..end] {
            if labels[i] == 1.0 {
                pos += 1;
            } else {
                neg += 1;
            }
        }
        twice += pos * (2 * negatives_below + neg);
        negatives_below += neg;
        start = end;
    }
    Ok(twice as f64 / (2 * n_pos * n_neg) as f64)
}

/// Average precision: mean over positives of the precision at that positive's
/// rank, scores sorted descending with ties kept in input order.
pub fn auprc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l == 1.0).count();
    if n_pos == 0 {
        return Err(Error::NoPositives);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] == 1.0 {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / n_pos as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub group: String,
    pub n: usize,
    pub events: usize,
    pub auroc: Option<f64>,
    pub auprc: Option<f64>,
    pub skipped: Option<String>,
}

/// Per-group metrics with mean and worst over groups that have both classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub level: Level,
    pub groups: Vec<GroupMetrics>,
    pub mean_auroc: f64,
    pub worst_auroc: f64,
    pub mean_auprc: f64,
    pub worst_auprc: f64,
}

impl MetricsReport {
    pub fn evaluated(&self) -> impl Iterator<Item = &GroupMetrics> {
        self.groups.iter().filter(|g| g.skipped.is_none())
    }

    pub fn skipped(&self) -> impl Iterator<Item = &GroupMetrics> {
        self.groups.iter().filter(|g| g.skipped.is_some())
    }

    /// One CSV row per group.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["level", "group", "n", "events", "auroc", "auprc", "skipped"])?;
        let fmt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        for g in &self.groups {
            w.write_record([
                self.level.as_str().to_string(),
                g.group.clone(),
                g.n.to_string(),
                g.events.to_string(),
                fmt(g.auroc),
                fmt(g.auprc),
                g.skipped.clone().unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(&mut f, self)?;
        writeln!(f)?;
        Ok(())
    }
}

/// Metrics per group label. Groups with a single outcome class are listed as
/// skipped and left out of the summaries.
pub fn subgroup_report<S: AsRef<str>>(scores: &[f64], labels: &[f64], groups: &[S], level: Level) -> Result<MetricsReport> {
    check_lengths(scores, labels)?;
    if groups.len() != scores.len() {
        return Err(Error::LabelMismatch {
            labels: groups.len(),
            rows: scores.len(),
        });
    }
    let mut members: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, g) in groups.iter().enumerate() {
        members.entry(g.as_ref()).or_default().push(i);
    }
    let mut out = Vec::with_capacity(members.len());
    for (group, rows) in members {
        let s: Vec<f64> = rows.iter().map(|&i| scores[i]).collect();
        let l: Vec<f64> = rows.iter().map(|&i| labels[i]).collect();
        let events = l.iter().filter(|&&v| v == 1.0).count();
        let skipped = if events == 0 {
            Some("no events".to_string())
        } else if events == rows.len() {
            Some("all events".to_string())
        } else {
            None
        };
        let (auroc_v, auprc_v) = if skipped.is_none() {
            (Some(auroc(&s, &l)?), Some(auprc(&s, &l)?))
        } else {
            (None, None)
        };
        out.push(GroupMetrics {
            group: group.to_string(),
            n: rows.len(),
            events,
            auroc: auroc_v,
            auprc: auprc_v,
            skipped,
        });
    }
    let roc: Vec<f64> = out.iter().filter_map(|g| g.auroc).collect();
    let pr: Vec<f64> = out.iter().filter_map(|g| g.auprc).collect();
    if roc.is_empty() {
        return Err(Error::AllGroupsSkipped);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let worst = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(MetricsReport {
        level,
        mean_auroc: mean(&roc),
        worst_auroc: worst(&roc),
        mean_auprc: mean(&pr),
        worst_auprc: worst(&pr),
        groups: out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.1, 0.2, 0.8, 0.9], &[0.0, 0.0, 1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.3; 5], &[0.0, 1.0, 0.0, 1.0, 1.0]).unwrap(), 0.5);
        assert_eq!(auroc(&[0.1, 0.4, 0.35, 0.8], &[0.0, 0.0, 1.0, 1.0]).unwrap(), 0.75);
        assert!(matches!(auroc(&[0.1, 0.2], &[1.0, 1.0]), Err(Error::SingleClass)));
    }

    #[test]
    fn auprc_examples() {
        assert_eq!(auprc(&[0.2, 0.5, 0.1], &[1.0, 1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(auprc(&[0.9, 0.8, 0.1, 0.2], &[1.0, 1.0, 0.0, 0.0]).unwrap(), 1.0);
        // positives at ranks 1 and 3: (1/1 + 2/3) / 2
        let ap = auprc(&[0.9, 0.8, 0.7], &[1.0, 0.0, 1.0]).unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-15);
        assert!(matches!(auprc(&[0.1], &[0.0]), Err(Error::NoPositives)));
    }

    #[test]
    fn identical_groups_share_summary() {
        let s = [0.1, 0.4, 0.35, 0.8, 0.1, 0.4, 0.35, 0.8];
        let l = [0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0];
        let g = ["a", "a", "a", "a", "b", "b", "b", "b"];
        let r = subgroup_report(&s, &l, &g, Level::Drg).unwrap();
        assert_eq!(r.mean_auroc, 0.75);
        assert_eq!(r.worst_auroc, 0.75);
    }

    #[test]
    fn single_class_group_skipped() {
        let s = [0.1, 0.4, 0.35, 0.8, 0.3, 0.6];
        let l = [0.0, 0.0, 1.0, 1.0, 0.0, 0.0];
        let g = ["a", "a", "a", "a", "b", "b"];
        let r = subgroup_report(&s, &l, &g, Level::Drg).unwrap();
        assert_eq!(r.skipped().count(), 1);
        assert_eq!(r.mean_auroc, 0.75);
        let g = ["b"; 6];
        let l = [0.0; 6];
        assert!(matches!(subgroup_report(&s, &l, &g, Level::Drg), Err(Error::AllGroupsSkipped)));
    }
}
