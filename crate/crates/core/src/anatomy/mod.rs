//! Anatomy prior: refined organ mask, high-risk zone and body regions.

mod landmarks;
mod mapping;
mod zone;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use landmarks::{extract_landmarks, region_of, AnatomicalRegion, BodyRegionPartition};
pub use mapping::{refine_anatomy_mask, LabelMappingConfig, MappingTarget, RefineReport};
pub use zone::{build_high_risk_zone, dilate_ellipsoid, squared_distance_transform};

use crate::error::{Error, Result};
use crate::volume::LabelDictionary;

/// Default dilation radius for the high-risk zone, in mm.
pub const DEFAULT_ZONE_RADIUS_MM: f64 = 10.0;

/// Label ids of the refined anatomy mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u32)]
pub enum RefinedAnatomyLabel {
    Background = 0,
    Heart = 1,
    Lungs = 2,
    Liver = 3,
    /// Spleen is merged in.
    Stomach = 4,
    Kidneys = 5,
    UrinaryBladder = 6,
    Spine = 7,
    Sacrum = 8,
    Hips = 9,
    Femurs = 10,
    Muscles = 11,
    HighRiskZone = 12,
}

impl RefinedAnatomyLabel {
    pub const ALL: [RefinedAnatomyLabel; 13] = [
        Self::Background,
        Self::Heart,
        Self::Lungs,
        Self::Liver,
        Self::Stomach,
        Self::Kidneys,
        Self::UrinaryBladder,
        Self::Spine,
        Self::Sacrum,
        Self::Hips,
        Self::Femurs,
        Self::Muscles,
        Self::HighRiskZone,
    ];

    pub fn id(self) -> u32 {
        self as u32
    }

    pub fn from_id(id: u32) -> Option<Self> {
        Self::ALL.get(id as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Background => "background",
            Self::Heart => "heart",
            Self::Lungs => "lungs",
            Self::Liver => "liver",
            Self::Stomach => "stomach",
            Self::Kidneys => "kidneys",
            Self::UrinaryBladder => "urinary_bladder",
            Self::Spine => "spine",
            Self::Sacrum => "sacrum",
            Self::Hips => "hips",
            Self::Femurs => "femurs",
            Self::Muscles => "muscles",
            Self::HighRiskZone => "high_risk_zone",
        }
    }

    /// Organs that tumors never grow inside.
    pub fn excludes_tumors(self) -> bool {
        matches!(
            self,
            Self::Heart
                | Self::Lungs
                | Self::Liver
                | Self::Stomach
                | Self::Kidneys
                | Self::UrinaryBladder
                | Self::Hips
                | Self::Femurs
        )
    }

    /// Full refined dictionary including the zone label.
    pub fn dictionary() -> LabelDictionary {
        Self::ALL
            .iter()
            .map(|l| (l.id(), l.name().to_string()))
            .collect::<BTreeMap<_, _>>()
    }
}

impl fmt::Display for RefinedAnatomyLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RefinedAnatomyLabel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|l| l.name() == s)
            .ok_or_else(|| Error::Mapping(format!("unknown target label `{s}`")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eleven_organs_plus_zone() {
        let organs = RefinedAnatomyLabel::ALL
            .iter()
            .filter(|l| !matches!(l, RefinedAnatomyLabel::Background | RefinedAnatomyLabel::HighRiskZone))
            .count();
        assert_eq!(organs, 11);
        assert_eq!(RefinedAnatomyLabel::HighRiskZone.id(), 12);
        for l in RefinedAnatomyLabel::ALL {
            assert_eq!(RefinedAnatomyLabel::from_id(l.id()), Some(l));
            assert_eq!(l.name().parse::<RefinedAnatomyLabel>().unwrap(), l);
        }
    }
}
