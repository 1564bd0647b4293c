//! Per-candidate radiomic features and the feature-selection workflow.
//!
//! The catalog has 18 first-order, 10 shape and 6 GLCM texture features.
//! Column names carry a family prefix (`firstorder_`, `shape_`, `glcm_`).

mod first_order;
mod glcm;
mod matrix;
mod selection;
mod shape;

use serde::{Deserialize, Serialize};

pub use first_order::{first_order_features, FIRST_ORDER_NAMES};
pub use glcm::{glcm_features, glcm_matrices, GLCM_DIRECTIONS, GLCM_NAMES};
pub use matrix::{FeatureMatrix, RowKey};
pub use selection::{
    prune_features, rfe_select, select_features, spearman, CorrelatedDrop, FeatureSelectionReport,
    PruneReport, SelectionParams,
};
pub use shape::{shape_features, SHAPE_NAMES};

use crate::candidates::TumorCandidate;
use crate::error::{Error, Result};
use crate::volume::ImageVolume;

pub const DEFAULT_BINS: usize = 32;

/// Anything that is a set of voxel coordinates.
pub trait VoxelRegion {
    fn voxels(&self) -> &[[usize; 3]];
}

impl VoxelRegion for TumorCandidate {
    fn voxels(&self) -> &[[usize; 3]] {
        &self.voxels
    }
}

impl VoxelRegion for [[usize; 3]] {
    fn voxels(&self) -> &[[usize; 3]] {
        self
    }
}

impl VoxelRegion for Vec<[usize; 3]> {
    fn voxels(&self) -> &[[usize; 3]] {
        self
    }
}

/// Ordered `name -> value` map with finite values.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureVector {
    entries: Vec<(String, f64)>,
}

impl FeatureVector {
    pub fn new(entries: Vec<(String, f64)>) -> Result<Self> {
        for (i, (name, v)) in entries.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::FeatureMatrix(format!("feature `{name}` is not finite ({v})")));
            }
            if entries[..i].iter().any(|(n, _)| n == name) {
                return Err(Error::FeatureMatrix(format!("duplicate feature `{name}`")));
            }
        }
        Ok(Self { entries })
    }

    pub(crate) fn from_named(names: &[&str], values: &[f64]) -> Result<Self> {
        Self::new(
            names
                .iter()
                .zip(values)
                .map(|(n, v)| (n.to_string(), *v))
                .collect(),
        )
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().map(|(_, v)| *v)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.entries.iter().map(|(n, v)| (n.as_str(), *v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn extend(&mut self, other: FeatureVector) -> Result<()> {
        let mut entries = std::mem::take(&mut self.entries);
        entries.extend(other.entries);
        *self = Self::new(entries)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RadiomicsParams {
    pub bins: usize,
    pub distance: usize,
}

impl Default for RadiomicsParams {
    fn default() -> Self {
        Self {
            bins: DEFAULT_BINS,
            distance: 1,
        }
    }
}

/// Canonical column order of the full catalog.
pub fn feature_catalog() -> Vec<String> {
    FIRST_ORDER_NAMES
        .iter()
        .chain(SHAPE_NAMES.iter())
        .chain(GLCM_NAMES.iter())
        .map(|s| s.to_string())
        .collect()
}

/// GLCM values of a region with a single occupied gray level, used when a
/// region has no co-occurring voxel pairs at all.
pub fn degenerate_glcm() -> FeatureVector {
    FeatureVector::from_named(&GLCM_NAMES, &[1.0, 0.0, 0.0, 1.0, 0.0, 1.0]).unwrap()
}

/// All catalog features for one region, in canonical order.
///
/// Regions without any co-occurring voxel pair (single voxels) get the
/// degenerate GLCM values instead of an error.
pub fn extract_features<R: VoxelRegion + ?Sized>(
    region: &R,
    image: &ImageVolume,
    params: &RadiomicsParams,
) -> Result<FeatureVector> {
    let mut fv = first_order_features(region, image)?;
    fv.extend(shape_features(region, image.geometry())?)?;
    match glcm_features(region, image, params.bins, params.distance) {
        Ok(g) => fv.extend(g)?,
        Err(Error::NoCooccurrencePairs) => {
            log::debug!("region without co-occurrence pairs; using degenerate texture values");
            fv.extend(degenerate_glcm())?
        }
        Err(e) => return Err(e),
    }
    Ok(fv)
}

/// Fixed-width histogram bin of `x` over `[min, max]`; constant data uses bin 0.
pub(crate) fn fixed_width_bin(x: f64, min: f64, max: f64, bins: usize) -> usize {
    if max <= min {
        return 0;
    }
    let width = (max - min) / bins as f64;
    (((x - min) / width).floor() as usize).min(bins - 1)
}
