//! CSV ingestion: imputation with missing indicators, one-hot encoding,
//! correlation prescreening, and the intercept column.
//!
//! The data file has a header with `y`, `drg` and covariate columns. A covariate
//! is numeric when every non-missing cell parses as a number, categorical
//! otherwise. Empty cells and `NA` count as missing. Imputation values, category
//! levels and the surviving columns are learned on the training file and
//! replayed on new files through [`Preprocessor::transform`].

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::{validate_dataset, HierDataset, HierarchySpec, ValidationReport, DEFAULT_MIN_GROUP_COUNT, INTERCEPT};

pub const MISSING_SUFFIX: &str = "__missing";

fn is_missing(cell: &str) -> bool {
    let c = cell.trim();
    c.is_empty() || c.eq_ignore_ascii_case("na") || c.eq_ignore_ascii_case("nan")
}

/// How one raw input column becomes output features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ColumnRule {
    Numeric {
        name: String,
        median: f64,
        indicator: bool,
    },
    /// `levels` sorted; the first level is the dropped reference.
    Categorical {
        name: String,
        mode: String,
        levels: Vec<String>,
        indicator: bool,
    },
}

impl ColumnRule {
    pub fn name(&self) -> &str {
        match self {
            ColumnRule::Numeric { name, .. } | ColumnRule::Categorical { name, .. } => name,
        }
    }

    fn fit(name: &str, cells: &[&str]) -> Self {
        let present: Vec<&str> = cells.iter().copied().filter(|c| !is_missing(c)).collect();
        let indicator = present.len() < cells.len();
        let numbers: Option<Vec<f64>> = present.iter().map(|c| c.trim().parse::<f64>().ok()).collect();
        match numbers {
            Some(mut v) => {
                v.sort_by(f64::total_cmp);
                let median = match v.len() {
                    0 => 0.0,
                    k if k % 2 == 1 => v[k / 2],
                    k => 0.5 * (v[k / 2 - 1] + v[k / 2]),
                };
                ColumnRule::Numeric {
                    name: name.to_string(),
                    median,
                    indicator,
                }
            }
            None => {
                let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
                for c in &present {
                    *freq.entry(c.trim()).or_default() += 1;
                }
                // most frequent, ties to the smallest level
                let mode = freq
                    .iter()
                    .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                    .map(|(k, _)| k.to_string())
                    .unwrap_or_default();
                ColumnRule::Categorical {
                    name: name.to_string(),
                    mode,
                    levels: freq.keys().map(|k| k.to_string()).collect(),
                    indicator,
                }
            }
        }
    }

    fn feature_names(&self) -> Vec<String> {
        let mut out = match self {
            ColumnRule::Numeric { name, .. } => vec![name.clone()],
            ColumnRule::Categorical { name, levels, .. } => levels.iter().skip(1).map(|l| format!("{name}={l}")).collect(),
        };
        match self {
            ColumnRule::Numeric { name, indicator: true, .. } | ColumnRule::Categorical { name, indicator: true, .. } => {
                out.push(format!("{name}{MISSING_SUFFIX}"))
            }
            _ => {}
        }
        out
    }

    fn encode(&self, cell: &str, out: &mut Vec<f64>) -> Result<()> {
        let missing = is_missing(cell);
        match self {
            ColumnRule::Numeric { name, median, .. } => {
                let v = if missing {
                    *median
                } else {
                    cell.trim()
                        .parse()
                        .map_err(|_| Error::MalformedCsv(format!("column `{name}`: `{cell}` is not numeric")))?
                };
                out.push(v);
            }
            ColumnRule::Categorical { mode, levels, .. } => {
                let level = if missing { mode.as_str() } else { cell.trim() };
                out.extend(levels.iter().skip(1).map(|l| if l == level { 1.0 } else { 0.0 }));
            }
        }
        let indicator = matches!(
            self,
            ColumnRule::Numeric { indicator: true, .. } | ColumnRule::Categorical { indicator: true, .. }
        );
        if indicator {
            out.push(if missing { 1.0 } else { 0.0 });
        }
        Ok(())
    }
}

/// Learned preprocessing of covariate columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    pub columns: Vec<ColumnRule>,
    /// Output features surviving the prescreen, intercept first.
    pub features: Vec<String>,
}

/// Raw CSV contents: header and string cells.
#[derive(Debug, Clone)]
pub struct RawTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl RawTable {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let malformed = |e: csv::Error| Error::MalformedCsv(format!("{}: {e}", path.display()));
        let mut reader = csv::Reader::from_path(path).map_err(malformed)?;
        let header: Vec<String> = reader.headers().map_err(malformed)?.iter().map(|h| h.trim().to_string()).collect();
        let mut rows = Vec::new();
        for rec in reader.records() {
            rows.push(rec.map_err(malformed)?.iter().map(str::to_string).collect());
        }
        Ok(Self { header, rows })
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn column(&self, name: &str) -> Result<Vec<&str>> {
        let k = self.column_index(name).ok_or_else(|| Error::MissingColumn(name.to_string()))?;
        Ok(self.rows.iter().map(|r| r[k].as_str()).collect())
    }
}

/// Parses a 0/1 outcome column.
pub fn parse_outcome(cells: &[&str]) -> Result<Vec<f64>> {
    cells
        .iter()
        .map(|c| match c.trim().parse::<f64>() {
            Ok(v) if v == 0.0 || v == 1.0 => Ok(v),
            _ => Err(Error::NonBinaryOutcome(c.to_string())),
        })
        .collect()
}

impl Preprocessor {
    /// Covariate columns are everything except `y`, `drg` and `mdc`.
    fn covariate_columns(table: &RawTable) -> Vec<usize> {
        (0..table.header.len())
            .filter(|&k| !matches!(table.header[k].as_str(), "y" | "drg" | "mdc"))
            .collect()
    }

    fn encode_all(columns: &[ColumnRule], table: &RawTable) -> Result<(Array2<f64>, Vec<String>)> {
        let mut names = vec![INTERCEPT.to_string()];
        names.extend(columns.iter().flat_map(ColumnRule::feature_names));
        let idx: Vec<usize> = columns
            .iter()
            .map(|c| table.column_index(c.name()).ok_or_else(|| Error::MissingCovariate(c.name().to_string())))
            .collect::<Result<_>>()?;
        let mut data = Vec::with_capacity(table.rows.len() * names.len());
        let mut row_buf = Vec::with_capacity(names.len());
        for row in &table.rows {
            row_buf.clear();
            row_buf.push(1.0);
            for (rule, &k) in columns.iter().zip(&idx) {
                rule.encode(&row[k], &mut row_buf)?;
            }
            data.extend_from_slice(&row_buf);
        }
        let x = Array2::from_shape_vec((table.rows.len(), names.len()), data).expect("row width");
        Ok((x, names))
    }

    /// Applies the learned rules to a new table; returns the surviving features
    /// in training order, intercept first.
    pub fn transform(&self, table: &RawTable) -> Result<Array2<f64>> {
        let (x, names) = Self::encode_all(&self.columns, table)?;
        let pos: BTreeMap<&str, usize> = names.iter().enumerate().map(|(k, n)| (n.as_str(), k)).collect();
        let cols: Vec<usize> = self
            .features
            .iter()
            .map(|f| pos.get(f.as_str()).copied().ok_or_else(|| Error::MissingCovariate(f.clone())))
            .collect::<Result<_>>()?;
        Ok(x.select(ndarray::Axis(1), &cols))
    }
}

/// A loaded training file.
#[derive(Debug, Clone)]
pub struct LoadedData {
    pub dataset: HierDataset,
    pub spec: HierarchySpec,
    pub preprocessor: Preprocessor,
    pub report: ValidationReport,
}

/// Reads the training CSV and hierarchy CSV, imputes, encodes, prescreens and
/// prepends the intercept. Zero-variance and highly correlated columns (the
/// later one of each pair) are removed.
pub fn load_csv_dataset(data_path: impl AsRef<Path>, hierarchy_path: impl AsRef<Path>) -> Result<LoadedData> {
    let pairs = HierarchySpec::read_pairs_csv(hierarchy_path)?;
    let table = RawTable::read(data_path)?;
    load_table(&table, &pairs)
}

pub fn load_table(table: &RawTable, pairs: &[(String, String)]) -> Result<LoadedData> {
    let y = parse_outcome(&table.column("y")?)?;
    let drg: Vec<String> = table.column("drg")?.iter().map(|s| s.trim().to_string()).collect();
    if y.is_empty() {
        return Err(Error::EmptyData);
    }
    let columns: Vec<ColumnRule> = Preprocessor::covariate_columns(table)
        .into_iter()
        .map(|k| {
            let cells: Vec<&str> = table.rows.iter().map(|r| r[k].as_str()).collect();
            ColumnRule::fit(&table.header[k], &cells)
        })
        .collect();
    let (x, names) = Preprocessor::encode_all(&columns, table)?;
    let spec = HierarchySpec::build(pairs, &drg)?;
    let full = HierDataset::new(y, x, drg, names)?;
    let report = validate_dataset(&full, &spec, DEFAULT_MIN_GROUP_COUNT)?;
    let kept = report.kept_columns(full.p());
    let dataset = full.select_columns(&kept);
    Ok(LoadedData {
        preprocessor: Preprocessor {
            columns,
            features: dataset.feature_names.clone(),
        },
        dataset,
        spec,
        report,
    })
}
