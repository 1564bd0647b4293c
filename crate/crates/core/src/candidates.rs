//! Ensemble fusion, thresholding, connected components and tumor candidates.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anatomy::{region_of, AnatomicalRegion, BodyRegionPartition};
use crate::error::{Error, Result};
use crate::volume::{neighbors26, ConfidenceVolume, LabelVolume, VolumeGeometry};

pub const HIGH_THRESHOLD: f64 = 0.5;
pub const LOW_THRESHOLD: f64 = 0.25;
pub const DEFAULT_MIN_VOXELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdName {
    Low,
    High,
    Custom,
}

impl fmt::Display for ThresholdName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ThresholdName::Low => "low",
            ThresholdName::High => "high",
            ThresholdName::Custom => "custom",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPolicy {
    pub name: ThresholdName,
    pub tau: f64,
}

impl ThresholdPolicy {
    pub fn high() -> Self {
        Self {
            name: ThresholdName::High,
            tau: HIGH_THRESHOLD,
        }
    }

    pub fn low() -> Self {
        Self {
            name: ThresholdName::Low,
            tau: LOW_THRESHOLD,
        }
    }

    pub fn custom(tau: f64) -> Result<Self> {
        let p = Self {
            name: ThresholdName::Custom,
            tau,
        };
        p.validate()?;
        Ok(p)
    }

    /// `name` with an optional tau override (only honored for low/custom).
    pub fn from_name(name: ThresholdName, tau: Option<f64>) -> Result<Self> {
        let p = match (name, tau) {
            (ThresholdName::High, _) => Self::high(),
            (ThresholdName::Low, None) => Self::low(),
            (ThresholdName::Low, Some(t)) => Self { name, tau: t },
            (ThresholdName::Custom, Some(t)) => Self { name, tau: t },
            (ThresholdName::Custom, None) => {
                return Err(Error::Config("custom threshold requires a tau value".into()))
            }
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "threshold tau must lie in (0, 1), got {}",
                self.tau
            )));
        }
        if self.name == ThresholdName::High && self.tau != HIGH_THRESHOLD {
            return Err(Error::InvalidArgument("high threshold is fixed at 0.5".into()));
        }
        Ok(())
    }
}

impl Default for ThresholdPolicy {
    fn default() -> Self {
        Self::high()
    }
}

/// Voxelwise mean of the ensemble members.
pub fn fuse_ensemble(members: &[ConfidenceVolume]) -> Result<ConfidenceVolume> {
    let first = members
        .first()
        .ok_or_else(|| Error::InvalidArgument("ensemble is empty".into()))?;
    for (i, m) in members.iter().enumerate().skip(1) {
        first
            .geometry()
            .ensure_same(m.geometry(), &format!("ensemble member {i}"))?;
    }
    let n = members.len() as f64;
    let data: Vec<f32> = (0..first.data().len())
        .into_par_iter()
        .map(|idx| {
            let (mut sum, mut lo, mut hi) = (0.0f64, f32::INFINITY, f32::NEG_INFINITY);
            for m in members {
                let v = m.data()[idx];
                sum += v as f64;
                lo = lo.min(v);
                hi = hi.max(v);
            }
            ((sum / n) as f32).clamp(lo, hi)
        })
        .collect();
    ConfidenceVolume::new(first.geometry().clone(), data)
}

/// Foreground iff confidence >= tau.
pub fn binarize(conf: &ConfidenceVolume, policy: &ThresholdPolicy) -> Result<LabelVolume> {
    if !(policy.tau > 0.0 && policy.tau < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "threshold tau must lie in (0, 1), got {}",
            policy.tau
        )));
    }
    let mask = conf.data().iter().map(|&v| v as f64 >= policy.tau).collect();
    LabelVolume::binary(conf.geometry().clone(), mask)
}

/// Component labeling result: ids `1..=count` in first-encounter scan order.
#[derive(Debug, Clone, PartialEq)]
pub struct Components {
    pub labels: LabelVolume,
    pub count: u32,
}

/// 26-connected component labeling of a flat mask.
pub fn label_mask(geometry: &VolumeGeometry, mask: &[bool]) -> (Vec<u32>, u32) {
    let mut ids = vec![0u32; mask.len()];
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    let offsets: Vec<[i64; 3]> = neighbors26().collect();
    for start in 0..mask.len() {
        if !mask[start] || ids[start] != 0 {
            continue;
        }
        next += 1;
        ids[start] = next;
        queue.push_back(start);
        while let Some(idx) = queue.pop_front() {
            let p = geometry.coords(idx).map(|v| v as i64);
            for o in &offsets {
                let q = [p[0] + o[0], p[1] + o[1], p[2] + o[2]];
                if !geometry.contains(q) {
                    continue;
                }
                let qi = geometry.index(q.map(|v| v as usize));
                if mask[qi] && ids[qi] == 0 {
                    ids[qi] = next;
                    queue.push_back(qi);
                }
            }
        }
    }
    (ids, next)
}

pub fn label_components(binary: &LabelVolume) -> Result<Components> {
    let (ids, count) = label_mask(binary.geometry(), &binary.foreground());
    let mut dict = BTreeMap::from([(0u32, "background".to_string())]);
    dict.extend((1..=count).map(|i| (i, format!("component_{i}"))));
    Ok(Components {
        labels: LabelVolume::new(binary.geometry().clone(), ids, dict)?,
        count,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min: [usize; 3],
    pub max: [usize; 3],
}

/// One connected component of the thresholded confidence mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TumorCandidate {
    pub id: u32,
    /// Voxel coordinates in ascending linear-index order.
    #[serde(skip)]
    pub voxels: Vec<[usize; 3]>,
    pub voxel_count: usize,
    pub bounding_box: BoundingBox,
    pub centroid_voxel: [f64; 3],
    pub centroid_mm: [f64; 3],
    pub volume_mm3: f64,
    pub region: AnatomicalRegion,
    pub mean_confidence: f64,
}

impl TumorCandidate {
    pub fn linear_indices<'a>(&'a self, geometry: &'a VolumeGeometry) -> impl Iterator<Item = usize> + 'a {
        self.voxels.iter().map(move |&p| geometry.index(p))
    }

    /// Candidate-labeling rule for training: any voxel overlap with the mask.
    pub fn overlaps(&self, mask: &LabelVolume) -> bool {
        self.voxels.iter().any(|&p| mask.at(p) != 0)
    }
}

/// Voxel centroid of a set of coordinates.
pub fn centroid(voxels: &[[usize; 3]]) -> [f64; 3] {
    let n = voxels.len() as f64;
    let mut c = [0.0; 3];
    for p in voxels {
        for a in 0..3 {
            c[a] += p[a] as f64;
        }
    }
    c.map(|v| v / n)
}

/// Region of a voxel set, by its centroid.
pub fn region_of_voxels(
    voxels: &[[usize; 3]],
    geometry: &VolumeGeometry,
    partition: &BodyRegionPartition,
) -> AnatomicalRegion {
    let c = centroid(voxels);
    region_of(c[geometry.cc_axis()].round() as i64, partition)
}

/// Groups the voxels of each component id, in scan order.
pub fn group_components(components: &Components) -> Vec<Vec<[usize; 3]>> {
    let g = components.labels.geometry();
    let mut groups = vec![Vec::new(); components.count as usize];
    for (idx, &id) in components.labels.data().iter().enumerate() {
        if id != 0 {
            groups[id as usize - 1].push(g.coords(idx));
        }
    }
    groups
}

/// One candidate per component with at least `min_voxels` voxels.
pub fn build_candidates(
    components: &Components,
    conf: &ConfidenceVolume,
    partition: &BodyRegionPartition,
    min_voxels: usize,
) -> Result<Vec<TumorCandidate>> {
    let g = components.labels.geometry();
    g.ensure_same(conf.geometry(), "components vs confidence")?;
    let voxel_volume = g.voxel_volume();
    let candidates = group_components(components)
        .into_iter()
        .enumerate()
        .filter(|(_, voxels)| !voxels.is_empty() && voxels.len() >= min_voxels)
        .map(|(i, voxels)| {
            let mut bb = BoundingBox {
                min: [usize::MAX; 3],
                max: [0; 3],
            };
            let mut conf_sum = 0.0;
            for p in &voxels {
                for a in 0..3 {
                    bb.min[a] = bb.min[a].min(p[a]);
                    bb.max[a] = bb.max[a].max(p[a]);
                }
                conf_sum += conf.at(*p) as f64;
            }
            let c = centroid(&voxels);
            TumorCandidate {
                id: i as u32 + 1,
                voxel_count: voxels.len(),
                bounding_box: bb,
                centroid_voxel: c,
                centroid_mm: g.world(c),
                volume_mm3: voxels.len() as f64 * voxel_volume,
                region: region_of(c[g.cc_axis()].round() as i64, partition),
                mean_confidence: conf_sum / voxels.len() as f64,
                voxels,
            }
        })
        .collect();
    Ok(candidates)
}

/// Binary mask holding the union of the given candidates.
pub fn candidates_mask<'a>(
    geometry: &VolumeGeometry,
    candidates: impl IntoIterator<Item = &'a TumorCandidate>,
) -> Result<LabelVolume> {
    let mut mask = vec![false; geometry.len()];
    for c in candidates {
        for idx in c.linear_indices(geometry) {
            mask[idx] = true;
        }
    }
    LabelVolume::binary(geometry.clone(), mask)
}

/// Candidate list as written to `candidates.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateReport {
    pub threshold: ThresholdPolicy,
    pub min_voxels: usize,
    pub partition: BodyRegionPartition,
    pub candidates: Vec<TumorCandidate>,
}

impl CandidateReport {
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::io::write_json(path, self)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        crate::io::read_json(path)
    }

    /// Restores each candidate's voxel list from the component label volume.
    pub fn attach_voxels(&mut self, components: &LabelVolume) -> Result<()> {
        let g = components.geometry();
        let mut by_id: BTreeMap<u32, Vec<[usize; 3]>> =
            self.candidates.iter().map(|c| (c.id, Vec::new())).collect();
        for (idx, &id) in components.data().iter().enumerate() {
            if let Some(v) = by_id.get_mut(&id) {
                v.push(g.coords(idx));
            }
        }
        for c in &mut self.candidates {
            let voxels = by_id.remove(&c.id).unwrap_or_default();
            if voxels.len() != c.voxel_count {
                return Err(Error::InvalidVolume(format!(
                    "candidate {} has {} voxels in the component map, report says {}",
                    c.id,
                    voxels.len(),
                    c.voxel_count
                )));
            }
            c.voxels = voxels;
        }
        Ok(())
    }
}
