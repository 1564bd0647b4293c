//! Overlap metrics, instance-level detection scores, and the statistics
//! used to compare methods across a study.

mod report;
mod stats;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub use report::{
    build_study_report, evaluate_scan, Comparison, Correlation, MeanStd, MethodSummary, ScanMetrics, StudyReport,
};
pub use stats::{bonferroni, pearson_r, wilcoxon_signed_rank, WilcoxonResult};

use crate::anatomy::{region_of, AnatomicalRegion, BodyRegionPartition};
use crate::candidates::{centroid, group_components, Components};
use crate::error::Result;
use crate::volume::LabelVolume;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapMetrics {
    pub dsc: f64,
    pub voe: f64,
    /// `inf` when the ground truth is empty but the prediction is not.
    #[serde(with = "crate::io::extended_f64")]
    pub arvd: f64,
}

/// DSC, VOE and ARVD of two binary masks; two empty masks score (1, 0, 0).
pub fn overlap_metrics(pred: &LabelVolume, gt: &LabelVolume) -> Result<OverlapMetrics> {
    pred.geometry().ensure_same(gt.geometry(), "prediction vs ground truth")?;
    let (mut p, mut g, mut both) = (0usize, 0usize, 0usize);
    for (&a, &b) in pred.data().iter().zip(gt.data()) {
        let (a, b) = (a != 0, b != 0);
        p += a as usize;
        g += b as usize;
        both += (a && b) as usize;
    }
    if p == 0 && g == 0 {
        return Ok(OverlapMetrics {
            dsc: 1.0,
            voe: 0.0,
            arvd: 0.0,
        });
    }
    let union = p + g - both;
    let arvd = if g == 0 {
        f64::INFINITY
    } else {
        (p as f64 - g as f64).abs() / g as f64
    };
    Ok(OverlapMetrics {
        dsc: 2.0 * both as f64 / (p + g) as f64,
        voe: 1.0 - both as f64 / union as f64,
        arvd,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct InstanceMatch {
    /// Each detected ground-truth id with the predicted ids overlapping it.
    pub tp_pairs: Vec<(u32, Vec<u32>)>,
    pub fn_gt_ids: Vec<u32>,
    pub fp_pred_ids: Vec<u32>,
}

impl InstanceMatch {
    pub fn tp(&self) -> usize {
        self.tp_pairs.len()
    }

    pub fn fp(&self) -> usize {
        self.fp_pred_ids.len()
    }

    pub fn fn_count(&self) -> usize {
        self.fn_gt_ids.len()
    }
}

/// A ground-truth instance is detected when it shares a voxel with any
/// prediction; a prediction touching no ground truth is a false positive.
pub fn match_instances(gt: &Components, pred: &Components) -> Result<InstanceMatch> {
    gt.labels
        .geometry()
        .ensure_same(pred.labels.geometry(), "ground-truth vs predicted components")?;
    let mut pairs: BTreeSet<(u32, u32)> = BTreeSet::new();
    for (&g, &p) in gt.labels.data().iter().zip(pred.labels.data()) {
        if g != 0 && p != 0 {
            pairs.insert((g, p));
        }
    }
    let mut by_gt: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    let mut matched_pred = BTreeSet::new();
    for &(g, p) in &pairs {
        by_gt.entry(g).or_default().push(p);
        matched_pred.insert(p);
    }
    Ok(InstanceMatch {
        fn_gt_ids: (1..=gt.count).filter(|g| !by_gt.contains_key(g)).collect(),
        fp_pred_ids: (1..=pred.count).filter(|p| !matched_pred.contains(p)).collect(),
        tp_pairs: by_gt.into_iter().collect(),
    })
}

/// DSC of every detected tumor against the union of predictions touching it.
pub fn per_tumor_dsc(m: &InstanceMatch, gt: &Components, pred: &Components) -> Vec<f64> {
    let mut gt_size = vec![0usize; gt.count as usize + 1];
    let mut pred_size = vec![0usize; pred.count as usize + 1];
    let mut covered = vec![0usize; gt.count as usize + 1];
    for (&g, &p) in gt.labels.data().iter().zip(pred.labels.data()) {
        gt_size[g as usize] += 1;
        pred_size[p as usize] += 1;
        // Any predicted voxel inside gt `g` belongs to a prediction overlapping `g`.
        if g != 0 && p != 0 {
            covered[g as usize] += 1;
        }
    }
    m.tp_pairs
        .iter()
        .map(|(g, preds)| {
            let p: usize = preds.iter().map(|&p| pred_size[p as usize]).sum();
            let g = *g as usize;
            2.0 * covered[g] as f64 / (gt_size[g] + p) as f64
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DetectionCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_count: usize,
}

impl DetectionCounts {
    /// `None` when there is nothing to detect and nothing detected.
    pub fn f1(&self) -> Option<f64> {
        let d = 2 * self.tp + self.fp + self.fn_count;
        (d > 0).then(|| 2.0 * self.tp as f64 / d as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionScores {
    pub counts: DetectionCounts,
    /// 1 for a scan with neither ground truth nor predictions.
    pub f1: f64,
    pub per_region: BTreeMap<AnatomicalRegion, DetectionCounts>,
    /// Only regions holding at least one instance.
    pub per_region_f1: BTreeMap<AnatomicalRegion, f64>,
}

fn component_regions(c: &Components, partition: &BodyRegionPartition) -> Vec<AnatomicalRegion> {
    let cc = c.labels.geometry().cc_axis();
    group_components(c)
        .iter()
        .map(|v| region_of(centroid(v)[cc].round() as i64, partition))
        .collect()
}

/// Overall and per-region F1; instances are assigned by voxel centroid.
pub fn detection_f1(
    m: &InstanceMatch,
    gt: &Components,
    pred: &Components,
    partition: &BodyRegionPartition,
) -> DetectionScores {
    let gt_region = component_regions(gt, partition);
    let pred_region = component_regions(pred, partition);
    let mut per_region: BTreeMap<AnatomicalRegion, DetectionCounts> = BTreeMap::new();
    for (g, _) in &m.tp_pairs {
        per_region.entry(gt_region[*g as usize - 1]).or_default().tp += 1;
    }
    for g in &m.fn_gt_ids {
        per_region.entry(gt_region[*g as usize - 1]).or_default().fn_count += 1;
    }
    for p in &m.fp_pred_ids {
        per_region.entry(pred_region[*p as usize - 1]).or_default().fp += 1;
    }
    let counts = DetectionCounts {
        tp: m.tp(),
        fp: m.fp(),
        fn_count: m.fn_count(),
    };
    DetectionScores {
        counts,
        f1: counts.f1().unwrap_or(1.0),
        per_region_f1: per_region
            .iter()
            .filter_map(|(r, c)| c.f1().map(|f| (*r, f)))
            .collect(),
        per_region,
    }
}
