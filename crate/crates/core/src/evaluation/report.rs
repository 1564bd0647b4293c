use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::stats::{pearson_r, wilcoxon_signed_rank};
use super::{detection_f1, match_instances, overlap_metrics, per_tumor_dsc};
use crate::anatomy::{AnatomicalRegion, BodyRegionPartition};
use crate::candidates::label_components;
use crate::error::{Error, Result};
use crate::volume::LabelVolume;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanMetrics {
    pub scan_id: String,
    pub dsc: f64,
    pub voe: f64,
    #[serde(with = "crate::io::extended_f64")]
    pub arvd: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_count: usize,
    pub f1: f64,
    /// One entry per detected ground-truth tumor.
    pub per_tumor_dsc: Vec<f64>,
    /// Volumes of the same tumors, in matching order.
    pub per_tumor_volume_mm3: Vec<f64>,
    pub per_region_f1: BTreeMap<AnatomicalRegion, f64>,
    pub tumor_burden_mm3: f64,
}

pub fn evaluate_scan(
    scan_id: &str,
    pred: &LabelVolume,
    gt: &LabelVolume,
    partition: &BodyRegionPartition,
) -> Result<ScanMetrics> {
    let overlap = overlap_metrics(pred, gt)?;
    let gt_c = label_components(gt)?;
    let pred_c = label_components(pred)?;
    let m = match_instances(&gt_c, &pred_c)?;
    let det = detection_f1(&m, &gt_c, &pred_c, partition);
    let vv = gt.geometry().voxel_volume();
    let mut sizes = vec![0usize; gt_c.count as usize + 1];
    for &g in gt_c.labels.data() {
        sizes[g as usize] += 1;
    }
    Ok(ScanMetrics {
        scan_id: scan_id.to_string(),
        dsc: overlap.dsc,
        voe: overlap.voe,
        arvd: overlap.arvd,
        tp: m.tp(),
        fp: m.fp(),
        fn_count: m.fn_count(),
        f1: det.f1,
        per_tumor_dsc: per_tumor_dsc(&m, &gt_c, &pred_c),
        per_tumor_volume_mm3: m.tp_pairs.iter().map(|(g, _)| sizes[*g as usize] as f64 * vv).collect(),
        per_region_f1: det.per_region_f1,
        tumor_burden_mm3: gt.count_nonzero() as f64 * vv,
    })
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Self {
            mean,
            std,
            n: values.len(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub r: f64,
    pub p: f64,
    pub n: usize,
}

impl Correlation {
    fn of(x: &[f64], y: &[f64]) -> Option<Self> {
        pearson_r(x, y).ok().map(|(r, p)| Self { r, p, n: x.len() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub scans: Vec<ScanMetrics>,
    pub dsc: Option<MeanStd>,
    /// Pooled over all detected tumors of all scans.
    pub per_tumor_dsc: Option<MeanStd>,
    pub f1: Option<MeanStd>,
    pub voe: Option<MeanStd>,
    /// Over scans where ARVD is finite.
    pub arvd: Option<MeanStd>,
    pub arvd_undefined_scans: usize,
    pub per_region_f1: BTreeMap<AnatomicalRegion, MeanStd>,
    pub dsc_vs_tumor_burden: Option<Correlation>,
    pub tumor_dsc_vs_volume: Option<Correlation>,
}

impl MethodSummary {
    pub fn new(method: String, scans: Vec<ScanMetrics>) -> Self {
        let col = |f: fn(&ScanMetrics) -> f64| -> Vec<f64> { scans.iter().map(f).collect() };
        let tumor_dsc: Vec<f64> = scans.iter().flat_map(|s| s.per_tumor_dsc.iter().copied()).collect();
        let tumor_vol: Vec<f64> = scans.iter().flat_map(|s| s.per_tumor_volume_mm3.iter().copied()).collect();
        let arvd: Vec<f64> = col(|s| s.arvd).into_iter().filter(|v| v.is_finite()).collect();
        let mut region_values: BTreeMap<AnatomicalRegion, Vec<f64>> = BTreeMap::new();
        for s in &scans {
            for (r, f) in &s.per_region_f1 {
                region_values.entry(*r).or_default().push(*f);
            }
        }
        Self {
            dsc: MeanStd::of(&col(|s| s.dsc)),
            per_tumor_dsc: MeanStd::of(&tumor_dsc),
            f1: MeanStd::of(&col(|s| s.f1)),
            voe: MeanStd::of(&col(|s| s.voe)),
            arvd_undefined_scans: scans.len() - arvd.len(),
            arvd: MeanStd::of(&arvd),
            per_region_f1: region_values
                .into_iter()
                .filter_map(|(r, v)| MeanStd::of(&v).map(|m| (r, m)))
                .collect(),
            dsc_vs_tumor_burden: Correlation::of(&col(|s| s.dsc), &col(|s| s.tumor_burden_mm3)),
            tumor_dsc_vs_volume: Correlation::of(&tumor_dsc, &tumor_vol),
            method,
            scans,
        }
    }
}

/// Paired per-scan DSC comparison between two methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub method_a: String,
    pub method_b: String,
    pub n_pairs: usize,
    pub w_plus: f64,
    pub exact: bool,
    pub p_raw: f64,
    pub p_bonferroni: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub methods: Vec<MethodSummary>,
    pub comparisons: Vec<Comparison>,
}

/// Summaries per method and Wilcoxon tests over every method pair, with a
/// Bonferroni factor equal to the number of pairs.
pub fn build_study_report(methods: Vec<(String, Vec<ScanMetrics>)>) -> Result<StudyReport> {
    let summaries: Vec<MethodSummary> = methods
        .into_iter()
        .map(|(name, scans)| MethodSummary::new(name, scans))
        .collect();
    let n_pairs = summaries.len() * summaries.len().saturating_sub(1) / 2;
    let mut comparisons = Vec::with_capacity(n_pairs);
    for i in 0..summaries.len() {
        for j in i + 1..summaries.len() {
            let (a, b) = (&summaries[i], &summaries[j]);
            let by_id: BTreeMap<&str, f64> = b.scans.iter().map(|s| (s.scan_id.as_str(), s.dsc)).collect();
            if by_id.len() != a.scans.len() {
                return Err(Error::Statistics(format!(
                    "methods `{}` and `{}` cover different scans",
                    a.method, b.method
                )));
            }
            let mut xa = Vec::new();
            let mut xb = Vec::new();
            for s in &a.scans {
                let d = by_id.get(s.scan_id.as_str()).ok_or_else(|| {
                    Error::Statistics(format!("scan `{}` missing from method `{}`", s.scan_id, b.method))
                })?;
                xa.push(s.dsc);
                xb.push(*d);
            }
            let w = wilcoxon_signed_rank(&xa, &xb, n_pairs)?;
            comparisons.push(Comparison {
                method_a: a.method.clone(),
                method_b: b.method.clone(),
                n_pairs: xa.len(),
                w_plus: w.w_plus,
                exact: w.exact,
                p_raw: w.p_raw,
                p_bonferroni: w.p_bonferroni,
            });
        }
    }
    Ok(StudyReport {
        methods: summaries,
        comparisons,
    })
}

fn fmt_ms(m: &Option<MeanStd>) -> String {
    match m {
        Some(m) => format!("{:.3} ± {:.3}", m.mean, m.std),
        None => "n/a".into(),
    }
}

fn fmt_p(p: f64) -> String {
    if p < 1e-3 {
        format!("{p:.2e}")
    } else {
        format!("{p:.4}")
    }
}

fn fmt_corr(c: &Option<Correlation>) -> String {
    match c {
        Some(c) => format!("r = {:.3} (p = {}, n = {})", c.r, fmt_p(c.p), c.n),
        None => "n/a".into(),
    }
}

impl StudyReport {
    pub fn write_json(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        crate::io::write_json(path, self)
    }

    /// Plain-text tables: summary metrics, per-region F1, tests, correlations.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let w = self.methods.iter().map(|m| m.method.len()).max().unwrap_or(6).max(6);
        let _ = writeln!(
            out,
            "{:<w$}  {:>5}  {:>15}  {:>15}  {:>15}  {:>15}  {:>15}",
            "method", "scans", "scan DSC", "tumor DSC", "F1", "VOE", "ARVD"
        );
        for m in &self.methods {
            let _ = writeln!(
                out,
                "{:<w$}  {:>5}  {:>15}  {:>15}  {:>15}  {:>15}  {:>15}",
                m.method,
                m.scans.len(),
                fmt_ms(&m.dsc),
                fmt_ms(&m.per_tumor_dsc),
                fmt_ms(&m.f1),
                fmt_ms(&m.voe),
                fmt_ms(&m.arvd)
            );
        }
        let _ = writeln!(out, "\nper-region F1");
        for m in &self.methods {
            let cells: Vec<String> = AnatomicalRegion::ALL
                .iter()
                .map(|r| format!("{r}: {}", fmt_ms(&m.per_region_f1.get(r).copied())))
                .collect();
            let _ = writeln!(out, "{:<w$}  {}", m.method, cells.join("  "));
        }
        if !self.comparisons.is_empty() {
            let _ = writeln!(out, "\nWilcoxon signed-rank on per-scan DSC");
            for c in &self.comparisons {
                let _ = writeln!(
                    out,
                    "{} vs {}: n = {}, p = {}, Bonferroni p = {}",
                    c.method_a,
                    c.method_b,
                    c.n_pairs,
                    fmt_p(c.p_raw),
                    fmt_p(c.p_bonferroni)
                );
            }
        }
        let _ = writeln!(out, "\nPearson correlations");
        for m in &self.methods {
            let _ = writeln!(
                out,
                "{:<w$}  scan DSC vs burden: {}  tumor DSC vs volume: {}",
                m.method,
                fmt_corr(&m.dsc_vs_tumor_burden),
                fmt_corr(&m.tumor_dsc_vs_volume)
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::VolumeGeometry;

    fn scan(id: &str, dsc: f64, burden: f64) -> ScanMetrics {
        ScanMetrics {
            scan_id: id.into(),
            dsc,
            voe: 1.0 - dsc / (2.0 - dsc),
            arvd: if id == "s2" { f64::INFINITY } else { 0.1 },
            tp: 1,
            fp: 0,
            fn_count: 0,
            f1: 1.0,
            per_tumor_dsc: vec![dsc],
            per_tumor_volume_mm3: vec![burden],
            per_region_f1: BTreeMap::from([(AnatomicalRegion::Chest, 1.0)]),
            tumor_burden_mm3: burden,
        }
    }

    #[test]
    fn aggregates_and_comparisons() {
        let a: Vec<ScanMetrics> = (0..6).map(|i| scan(&format!("s{i}"), 0.5 + 0.05 * i as f64, 100.0 * i as f64)).collect();
        let b: Vec<ScanMetrics> = (0..6).rev().map(|i| scan(&format!("s{i}"), 0.4 + 0.04 * i as f64, 100.0 * i as f64)).collect();
        let c: Vec<ScanMetrics> = (0..6).map(|i| scan(&format!("s{i}"), 0.45, 100.0 * i as f64)).collect();
        let r = build_study_report(vec![("a".into(), a), ("b".into(), b), ("c".into(), c)]).unwrap();
        assert_eq!(r.comparisons.len(), 3);
        let m = &r.methods[0];
        assert!((m.dsc.unwrap().mean - 0.625).abs() < 1e-12);
        assert_eq!(m.arvd_undefined_scans, 1);
        assert_eq!(m.arvd.unwrap().n, 5);
        assert!((m.dsc_vs_tumor_burden.unwrap().r - 1.0).abs() < 1e-12);
        assert!(r.methods[2].dsc_vs_tumor_burden.is_none());
        // a beats b on every scan: 6 positive differences.
        let ab = &r.comparisons[0];
        assert_eq!(ab.w_plus, 21.0);
        assert!((ab.p_raw - 2.0 / 64.0).abs() < 1e-15);
        assert!((ab.p_bonferroni - 6.0 / 64.0).abs() < 1e-15);
        let table = r.to_table();
        assert!(table.contains("a vs b"));
        let json = serde_json::to_string(&r).unwrap();
        assert_eq!(serde_json::from_str::<StudyReport>(&json).unwrap(), r);
    }

    #[test]
    fn mismatched_scans_rejected() {
        let a = vec![scan("x", 0.5, 1.0)];
        let b = vec![scan("y", 0.5, 1.0)];
        assert!(build_study_report(vec![("a".into(), a), ("b".into(), b)]).is_err());
    }

    #[test]
    fn perfect_prediction_scores_one() {
        let g = VolumeGeometry::canonical([2, 10, 10], [1.0; 3]).unwrap();
        let mut m = vec![false; g.len()];
        for k in 2..5 {
            m[g.index([1, 5, k])] = true;
        }
        let gt = LabelVolume::binary(g, m).unwrap();
        let p = BodyRegionPartition::new(8, 4, 2).unwrap();
        let s = evaluate_scan("s", &gt, &gt, &p).unwrap();
        assert_eq!((s.dsc, s.f1, s.tp), (1.0, 1.0, 1));
        assert_eq!(s.per_tumor_dsc, vec![1.0]);
        assert_eq!(s.tumor_burden_mm3, 3.0);
    }
}
