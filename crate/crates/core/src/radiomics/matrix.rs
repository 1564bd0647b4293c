use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::FeatureVector;
use crate::anatomy::AnatomicalRegion;
use crate::error::{Error, Result};
use crate::io::{read_json, write_json};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RowKey {
    pub scan_id: String,
    pub candidate_id: u32,
    pub region: AnatomicalRegion,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<bool>,
}

/// Rows are candidates, columns are features; values stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    columns: Vec<String>,
    rows: Vec<RowKey>,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    columns: Vec<String>,
    rows: Vec<RowKey>,
}

impl FeatureMatrix {
    pub fn new(columns: Vec<String>, rows: Vec<RowKey>, values: Vec<f64>) -> Result<Self> {
        if values.len() != columns.len() * rows.len() {
            return Err(Error::FeatureMatrix(format!(
                "{} values for {} rows x {} columns",
                values.len(),
                rows.len(),
                columns.len()
            )));
        }
        let mut seen = HashSet::new();
        if let Some(c) = columns.iter().find(|c| !seen.insert(c.as_str())) {
            return Err(Error::FeatureMatrix(format!("duplicate column `{c}`")));
        }
        let mut seen = HashSet::new();
        if let Some(r) = rows.iter().find(|r| !seen.insert((r.scan_id.as_str(), r.candidate_id))) {
            return Err(Error::FeatureMatrix(format!(
                "duplicate row key ({}, {})",
                r.scan_id, r.candidate_id
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::FeatureMatrix(format!(
                "non-finite value in row {} column `{}`",
                i / columns.len(),
                columns[i % columns.len()]
            )));
        }
        Ok(Self { columns, rows, values })
    }

    /// Builds a matrix from feature vectors that all share one name order.
    pub fn from_vectors(rows: Vec<(RowKey, FeatureVector)>) -> Result<Self> {
        let Some((_, first)) = rows.first() else {
            return Self::new(super::feature_catalog(), vec![], vec![]);
        };
        let columns: Vec<String> = first.names().map(str::to_string).collect();
        let mut keys = Vec::with_capacity(rows.len());
        let mut values = Vec::with_capacity(rows.len() * columns.len());
        for (key, fv) in rows {
            if !fv.names().eq(columns.iter().map(String::as_str)) {
                return Err(Error::FeatureMatrix(format!(
                    "row ({}, {}) has a different feature set",
                    key.scan_id, key.candidate_id
                )));
            }
            values.extend(fv.values());
            keys.push(key);
        }
        Self::new(columns, keys, values)
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn rows(&self) -> &[RowKey] {
        &self.rows
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.columns.len();
        &self.values[i * c..(i + 1) * c]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows.len()).map(|i| self.row(i)[j]).collect()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn row_vector(&self, i: usize) -> FeatureVector {
        FeatureVector {
            entries: self.columns.iter().cloned().zip(self.row(i).iter().copied()).collect(),
        }
    }

    /// Every row must carry a training label.
    pub fn labels(&self) -> Result<Vec<bool>> {
        self.rows
            .iter()
            .map(|r| {
                r.label.ok_or_else(|| {
                    Error::FeatureMatrix(format!("row ({}, {}) has no label", r.scan_id, r.candidate_id))
                })
            })
            .collect()
    }

    pub fn set_labels(&mut self, labels: &[bool]) -> Result<()> {
        if labels.len() != self.rows.len() {
            return Err(Error::FeatureMatrix(format!(
                "{} labels for {} rows",
                labels.len(),
                self.rows.len()
            )));
        }
        for (r, &l) in self.rows.iter_mut().zip(labels) {
            r.label = Some(l);
        }
        Ok(())
    }

    /// Keeps the named columns, in the order given.
    pub fn select_columns(&self, names: &[String]) -> Result<Self> {
        let idx: Vec<usize> = names
            .iter()
            .map(|n| {
                self.column_index(n)
                    .ok_or_else(|| Error::FeatureMismatch(format!("unknown feature `{n}`")))
            })
            .collect::<Result<_>>()?;
        let values = (0..self.rows.len())
            .flat_map(|i| idx.iter().map(move |&j| (i, j)))
            .map(|(i, j)| self.row(i)[j])
            .collect();
        Self::new(names.to_vec(), self.rows.clone(), values)
    }

    pub fn filter_rows(&self, keep: impl Fn(&RowKey) -> bool) -> Self {
        let mut rows = Vec::new();
        let mut values = Vec::new();
        for (i, r) in self.rows.iter().enumerate() {
            if keep(r) {
                rows.push(r.clone());
                values.extend_from_slice(self.row(i));
            }
        }
        Self {
            columns: self.columns.clone(),
            rows,
            values,
        }
    }

    /// Stacks matrices with identical columns.
    pub fn concat(parts: &[FeatureMatrix]) -> Result<Self> {
        let Some(first) = parts.first() else {
            return Self::new(super::feature_catalog(), vec![], vec![]);
        };
        let mut rows = Vec::new();
        let mut values = Vec::new();
        for p in parts {
            if p.columns != first.columns {
                return Err(Error::FeatureMatrix("cannot stack matrices with different columns".into()));
            }
            rows.extend(p.rows.iter().cloned());
            values.extend_from_slice(&p.values);
        }
        Self::new(first.columns.clone(), rows, values)
    }

    pub fn find_row(&self, scan_id: &str, candidate_id: u32) -> Option<usize> {
        self.rows
            .iter()
            .position(|r| r.scan_id == scan_id && r.candidate_id == candidate_id)
    }

    pub fn sidecar_path(csv_path: &Path) -> PathBuf {
        csv_path.with_extension("rows.json")
    }

    /// CSV with a header row plus `<stem>.rows.json` holding row keys.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.columns)?;
        for i in 0..self.rows.len() {
            w.write_record(self.row(i).iter().map(|v| v.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        write_json(
            Self::sidecar_path(path),
            &Sidecar {
                columns: self.columns.clone(),
                rows: self.rows.clone(),
            },
        )
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let sidecar: Sidecar = read_json(Self::sidecar_path(path))?;
        let mut r = csv::Reader::from_path(path)?;
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if header != sidecar.columns {
            return Err(Error::FeatureMatrix(format!(
                "{}: header does not match the sidecar columns",
                path.display()
            )));
        }
        let mut values = Vec::new();
        let mut n = 0;
        for rec in r.records() {
            let rec = rec?;
            for field in rec.iter() {
                values.push(field.trim().parse::<f64>().map_err(|_| {
                    Error::FeatureMatrix(format!("{}: bad number `{field}` in row {n}", path.display()))
                })?);
            }
            n += 1;
        }
        if n != sidecar.rows.len() {
            return Err(Error::FeatureMatrix(format!(
                "{}: {n} data rows but {} row keys",
                path.display(),
                sidecar.rows.len()
            )));
        }
        Self::new(header, sidecar.rows, values)
    }
}
