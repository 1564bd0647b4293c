use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::RefinedAnatomyLabel;
use crate::error::{Error, Result};
use crate::volume::LabelVolume;

const DEFAULT_MAPPING: &str = include_str!("../../data/default_label_mapping.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MappingTarget {
    Drop,
    MapTo(RefinedAnatomyLabel),
}

/// Ordered `source_name -> target` rules.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMappingConfig {
    rules: BTreeMap<String, MappingTarget>,
}

impl LabelMappingConfig {
    pub fn new(rules: impl IntoIterator<Item = (String, MappingTarget)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (source, target) in rules {
            if let MappingTarget::MapTo(l) = target {
                if matches!(l, RefinedAnatomyLabel::HighRiskZone | RefinedAnatomyLabel::Background) {
                    return Err(Error::Mapping(format!(
                        "rule for `{source}` targets reserved label `{l}`"
                    )));
                }
            }
            if map.insert(source.clone(), target).is_some() {
                return Err(Error::Mapping(format!("duplicate rule for `{source}`")));
            }
        }
        Ok(Self { rules: map })
    }

    /// Parses `source -> target` / `source -> DROP` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut rules = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (source, target) = line.split_once("->").ok_or_else(|| {
                Error::Mapping(format!("line {}: expected `source -> target`", lineno + 1))
            })?;
            let (source, target) = (source.trim(), target.trim());
            if source.is_empty() || target.is_empty() {
                return Err(Error::Mapping(format!("line {}: empty name", lineno + 1)));
            }
            let target = if target == "DROP" {
                MappingTarget::Drop
            } else {
                MappingTarget::MapTo(target.parse().map_err(|e: Error| {
                    Error::Mapping(format!("line {}: {e}", lineno + 1))
                })?)
            };
            rules.push((source.to_string(), target));
        }
        Self::new(rules)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn get(&self, source: &str) -> Option<MappingTarget> {
        self.rules.get(source).copied()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (source, target) in &self.rules {
            match target {
                MappingTarget::Drop => writeln!(s, "{source} -> DROP").unwrap(),
                MappingTarget::MapTo(l) => writeln!(s, "{source} -> {l}").unwrap(),
            }
        }
        s
    }
}

impl Default for LabelMappingConfig {
    fn default() -> Self {
        Self::parse(DEFAULT_MAPPING).expect("bundled mapping is valid")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RefineReport {
    /// Source names present in the volume but missing from the mapping; their
    /// voxels became background.
    pub unmapped_sources: Vec<String>,
    pub dropped_sources: Vec<String>,
    pub merged: BTreeMap<String, Vec<String>>,
}

/// Applies the mapping to a raw organ label map. Never emits the zone label.
pub fn refine_anatomy_mask(
    raw: &LabelVolume,
    mapping: &LabelMappingConfig,
) -> Result<(LabelVolume, RefineReport)> {
    let max_id = raw.dictionary().keys().next_back().copied().unwrap_or(0) as usize;
    let mut lut = vec![0u32; max_id + 1];
    let mut report = RefineReport::default();
    let present: BTreeSet<u32> = raw.data().iter().copied().collect();
    for (&id, name) in raw.dictionary() {
        if id == 0 {
            continue;
        }
        match mapping.get(name) {
            Some(MappingTarget::MapTo(l)) => {
                lut[id as usize] = l.id();
                if present.contains(&id) {
                    report.merged.entry(l.name().to_string()).or_default().push(name.clone());
                }
            }
            Some(MappingTarget::Drop) => {
                if present.contains(&id) {
                    report.dropped_sources.push(name.clone());
                }
            }
            None => {
                if present.contains(&id) {
                    log::warn!("no mapping rule for source label `{name}`; treated as background");
                    report.unmapped_sources.push(name.clone());
                }
            }
        }
    }
    let data = raw.data().iter().map(|&v| lut[v as usize]).collect();
    let volume = LabelVolume::new(raw.geometry().clone(), data, RefinedAnatomyLabel::dictionary())?;
    Ok((volume, report))
}
