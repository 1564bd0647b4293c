use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{train_forest, ForestParams, RandomForestModel};
use crate::anatomy::AnatomicalRegion;
use crate::candidates::{candidates_mask, TumorCandidate};
use crate::error::{Error, Result};
use crate::io::write_json;
use crate::radiomics::FeatureMatrix;
use crate::volume::{LabelVolume, VolumeGeometry};

pub const SCHEMA_VERSION: u32 = 1;

/// What happens to candidates in a region without a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FallbackPolicy {
    #[default]
    Keep,
    Drop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionClassifierBundle {
    pub schema_version: u32,
    pub fallback: FallbackPolicy,
    pub models: BTreeMap<AnatomicalRegion, RandomForestModel>,
}

impl RegionClassifierBundle {
    pub fn new(models: BTreeMap<AnatomicalRegion, RandomForestModel>, fallback: FallbackPolicy) -> Result<Self> {
        let b = Self {
            schema_version: SCHEMA_VERSION,
            fallback,
            models,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() {
            return Err(Error::ModelFormat("bundle has no region models".into()));
        }
        for (region, m) in &self.models {
            m.validate()
                .map_err(|e| Error::ModelFormat(format!("{region} model: {e}")))?;
        }
        Ok(())
    }

    pub fn model(&self, region: AnatomicalRegion) -> Option<&RandomForestModel> {
        self.models.get(&region)
    }
}

/// One forest per region that has both classes among its rows.
pub fn train_region_bundle(
    matrix: &FeatureMatrix,
    features: &[String],
    params: &ForestParams,
    fallback: FallbackPolicy,
) -> Result<RegionClassifierBundle> {
    let selected = matrix.select_columns(features)?;
    let labels = selected.labels()?;
    let mut models = BTreeMap::new();
    for region in AnatomicalRegion::ALL {
        let idx: Vec<usize> = (0..selected.n_rows())
            .filter(|&i| selected.rows()[i].region == region)
            .collect();
        let pos = idx.iter().filter(|&&i| labels[i]).count();
        if idx.len() < 2 || pos == 0 || pos == idx.len() {
            log::warn!(
                "no {region} model: {} rows, {pos} positive; candidates there follow the fallback policy",
                idx.len()
            );
            continue;
        }
        let sub = selected.filter_rows(|r| r.region == region);
        models.insert(region, train_forest(&sub, params)?);
    }
    if models.is_empty() {
        return Err(Error::SingleClass);
    }
    RegionClassifierBundle::new(models, fallback)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateDecision {
    pub candidate_id: u32,
    pub region: AnatomicalRegion,
    /// `None` when the region had no model.
    pub probability: Option<f64>,
    pub kept: bool,
}

#[derive(Debug, Clone)]
pub struct Classification {
    pub decisions: Vec<CandidateDecision>,
    pub mask: LabelVolume,
}

impl Classification {
    pub fn kept_ids(&self) -> Vec<u32> {
        self.decisions.iter().filter(|d| d.kept).map(|d| d.candidate_id).collect()
    }
}

/// Keeps a candidate when its region model scores it at or above
/// `decision_threshold`; the final mask is the union of kept candidates.
pub fn classify_candidates(
    candidates: &[TumorCandidate],
    matrix: &FeatureMatrix,
    scan_id: &str,
    bundle: &RegionClassifierBundle,
    decision_threshold: f64,
    geometry: &VolumeGeometry,
) -> Result<Classification> {
    if !(0.0..=1.0).contains(&decision_threshold) {
        return Err(Error::InvalidArgument(format!(
            "decision threshold must lie in [0, 1], got {decision_threshold}"
        )));
    }
    let mut columns: BTreeMap<AnatomicalRegion, Vec<usize>> = BTreeMap::new();
    for (&region, model) in &bundle.models {
        let idx = model
            .feature_names
            .iter()
            .map(|n| {
                matrix
                    .column_index(n)
                    .ok_or_else(|| Error::FeatureMismatch(format!("{region} model needs missing feature `{n}`")))
            })
            .collect::<Result<_>>()?;
        columns.insert(region, idx);
    }
    let mut decisions = Vec::with_capacity(candidates.len());
    let mut kept = Vec::new();
    for c in candidates {
        let row = matrix.find_row(scan_id, c.id).ok_or_else(|| {
            Error::FeatureMatrix(format!("candidate {} of scan `{scan_id}` has no feature row", c.id))
        })?;
        let (probability, keep) = match bundle.model(c.region) {
            Some(model) => {
                let x: Vec<f64> = columns[&c.region].iter().map(|&j| matrix.row(row)[j]).collect();
                let p = model.predict_row(&x);
                (Some(p), p >= decision_threshold)
            }
            None => (None, bundle.fallback == FallbackPolicy::Keep),
        };
        decisions.push(CandidateDecision {
            candidate_id: c.id,
            region: c.region,
            probability,
            kept: keep,
        });
        if keep {
            kept.push(c);
        }
    }
    Ok(Classification {
        decisions,
        mask: candidates_mask(geometry, kept.iter().copied())?,
    })
}

pub fn save_model(bundle: &RegionClassifierBundle, path: impl AsRef<Path>) -> Result<()> {
    write_json(path, bundle)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<RegionClassifierBundle> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: String| Error::ModelFormat(format!("{}: {msg}", path.display()));
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    match value.get("schema_version").and_then(|v| v.as_u64()) {
        Some(v) if v == SCHEMA_VERSION as u64 => {}
        Some(v) => return Err(bad(format!("unsupported schema version {v} (expected {SCHEMA_VERSION})"))),
        None => return Err(bad("missing schema_version".into())),
    }
    let bundle: RegionClassifierBundle = serde_json::from_value(value).map_err(|e| bad(e.to_string()))?;
    bundle.validate().map_err(|e| bad(e.to_string()))?;
    Ok(bundle)
}
