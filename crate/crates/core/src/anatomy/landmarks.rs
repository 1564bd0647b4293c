use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::RefinedAnatomyLabel;
use crate::error::{Error, Result};
use crate::volume::LabelVolume;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnatomicalRegion {
    HeadNeck,
    Chest,
    Abdomen,
    Legs,
}

impl AnatomicalRegion {
    pub const ALL: [AnatomicalRegion; 4] = [Self::HeadNeck, Self::Chest, Self::Abdomen, Self::Legs];

    pub fn name(self) -> &'static str {
        match self {
            Self::HeadNeck => "head_neck",
            Self::Chest => "chest",
            Self::Abdomen => "abdomen",
            Self::Legs => "legs",
        }
    }
}

impl fmt::Display for AnatomicalRegion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AnatomicalRegion {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown region `{s}`")))
    }
}

/// Cranio-caudal landmark indices (superior = larger index).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BodyRegionPartition {
    pub z_lung_top: i64,
    pub z_lung_bottom: i64,
    pub z_hip_bottom: i64,
}

impl BodyRegionPartition {
    pub fn new(z_lung_top: i64, z_lung_bottom: i64, z_hip_bottom: i64) -> Result<Self> {
        if !(z_lung_top >= z_lung_bottom && z_lung_bottom >= z_hip_bottom) {
            return Err(Error::InvalidArgument(format!(
                "landmarks must satisfy top >= bottom >= hip ({z_lung_top}, {z_lung_bottom}, {z_hip_bottom})"
            )));
        }
        Ok(Self {
            z_lung_top,
            z_lung_bottom,
            z_hip_bottom,
        })
    }
}

/// Lung top/bottom and hip bottom along the cranio-caudal axis.
pub fn extract_landmarks(refined: &LabelVolume) -> Result<BodyRegionPartition> {
    let g = refined.geometry();
    let cc = g.cc_axis();
    let lungs = RefinedAnatomyLabel::Lungs.id();
    let hips = RefinedAnatomyLabel::Hips.id();
    let mut lung_range: Option<(usize, usize)> = None;
    let mut hip_min: Option<usize> = None;
    for (idx, &l) in refined.data().iter().enumerate() {
        if l != lungs && l != hips {
            continue;
        }
        let z = g.coords(idx)[cc];
        if l == lungs {
            lung_range = Some(match lung_range {
                None => (z, z),
                Some((lo, hi)) => (lo.min(z), hi.max(z)),
            });
        } else {
            hip_min = Some(hip_min.map_or(z, |m| m.min(z)));
        }
    }
    let (lung_bottom, lung_top) = lung_range.ok_or(Error::MissingStructure("lungs"))?;
    let hip_bottom = hip_min.ok_or(Error::MissingStructure("hips"))?;
    BodyRegionPartition::new(lung_top as i64, lung_bottom as i64, hip_bottom as i64)
        .map_err(|_| Error::InvalidVolume(format!(
            "lowest hip voxel ({hip_bottom}) lies above the lowest lung voxel ({lung_bottom})"
        )))
}

/// Region of a cranio-caudal index; boundary indices go to the inferior region.
pub fn region_of(z: i64, partition: &BodyRegionPartition) -> AnatomicalRegion {
    if z > partition.z_lung_top {
        AnatomicalRegion::HeadNeck
    } else if z > partition.z_lung_bottom {
        AnatomicalRegion::Chest
    } else if z > partition.z_hip_bottom {
        AnatomicalRegion::Abdomen
    } else {
        AnatomicalRegion::Legs
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::VolumeGeometry;

    fn phantom(lungs: std::ops::RangeInclusive<usize>, hip_low: Option<usize>) -> LabelVolume {
        let g = VolumeGeometry::canonical([2, 100, 3], [1.0; 3]).unwrap();
        let mut data = vec![0u32; g.len()];
        for z in lungs {
            data[g.index([1, z, 1])] = RefinedAnatomyLabel::Lungs.id();
        }
        if let Some(h) = hip_low {
            for z in h..h + 5 {
                data[g.index([0, z, 2])] = RefinedAnatomyLabel::Hips.id();
            }
        }
        LabelVolume::new(g, data, RefinedAnatomyLabel::dictionary()).unwrap()
    }

    #[test]
    fn landmarks_by_construction() {
        let p = extract_landmarks(&phantom(60..=80, Some(40))).unwrap();
        assert_eq!(p, BodyRegionPartition::new(80, 60, 40).unwrap());
    }

    #[test]
    fn single_voxel_lung() {
        let p = extract_landmarks(&phantom(10..=10, Some(5))).unwrap();
        assert_eq!((p.z_lung_top, p.z_lung_bottom), (10, 10));
    }

    #[test]
    fn missing_hips_named() {
        let err = extract_landmarks(&phantom(60..=80, None)).unwrap_err();
        assert!(matches!(err, Error::MissingStructure("hips")));
    }

    #[test]
    fn region_rules() {
        let p = BodyRegionPartition::new(80, 60, 40).unwrap();
        assert_eq!(region_of(81, &p), AnatomicalRegion::HeadNeck);
        assert_eq!(region_of(80, &p), AnatomicalRegion::Chest);
        assert_eq!(region_of(61, &p), AnatomicalRegion::Chest);
        assert_eq!(region_of(60, &p), AnatomicalRegion::Abdomen);
        assert_eq!(region_of(41, &p), AnatomicalRegion::Abdomen);
        assert_eq!(region_of(40, &p), AnatomicalRegion::Legs);
        assert_eq!(region_of(-3, &p), AnatomicalRegion::Legs);
    }

    #[test]
    fn regions_tile_the_axis() {
        let p = BodyRegionPartition::new(70, 50, 20).unwrap();
        let mut counts = std::collections::BTreeMap::new();
        for z in 0..100 {
            *counts.entry(region_of(z, &p)).or_insert(0) += 1;
        }
        assert_eq!(counts[&AnatomicalRegion::Legs], 21);
        assert_eq!(counts[&AnatomicalRegion::Abdomen], 30);
        assert_eq!(counts[&AnatomicalRegion::Chest], 20);
        assert_eq!(counts[&AnatomicalRegion::HeadNeck], 29);
        assert_eq!(counts.values().sum::<i32>(), 100);
    }
}
