use serde::{Deserialize, Serialize};

use super::FeatureMatrix;
use crate::error::{Error, Result};
use crate::forest::{importances, train_forest, ForestParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelatedDrop {
    pub kept: String,
    pub dropped: String,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PruneReport {
    pub dropped_near_zero_variance: Vec<String>,
    pub dropped_correlated: Vec<CorrelatedDrop>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSelectionReport {
    pub dropped_near_zero_variance: Vec<String>,
    pub dropped_correlated: Vec<CorrelatedDrop>,
    /// Features removed by each elimination round, lowest importance first.
    pub rfe_rounds: Vec<Vec<String>>,
    pub selected_top_k: Vec<String>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionParams {
    pub variance_eps: f64,
    pub rho_max: f64,
    pub k: usize,
}

impl Default for SelectionParams {
    fn default() -> Self {
        Self {
            variance_eps: 1e-8,
            rho_max: 0.90,
            k: 10,
        }
    }
}

/// Ranks starting at 1; ties get the average of their positions.
fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

/// Spearman rank correlation with average ranks for ties; 0 when either
/// input is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    pearson(&average_ranks(a), &average_ranks(b))
}

fn population_variance(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n
}

/// Drops near-constant columns, then the later column of every strongly
/// rank-correlated pair.
pub fn prune_features(matrix: &FeatureMatrix, variance_eps: f64, rho_max: f64) -> Result<(FeatureMatrix, PruneReport)> {
    if matrix.n_rows() < 2 {
        return Err(Error::FeatureMatrix(format!(
            "pruning needs at least 2 rows, got {}",
            matrix.n_rows()
        )));
    }
    let mut report = PruneReport::default();
    let mut alive: Vec<usize> = Vec::new();
    for j in 0..matrix.n_cols() {
        if population_variance(&matrix.column(j)) < variance_eps {
            report.dropped_near_zero_variance.push(matrix.columns()[j].clone());
        } else {
            alive.push(j);
        }
    }
    let ranks: Vec<Vec<f64>> = alive.iter().map(|&j| average_ranks(&matrix.column(j))).collect();
    let mut dropped = vec![false; alive.len()];
    for a in 0..alive.len() {
        if dropped[a] {
            continue;
        }
        for b in a + 1..alive.len() {
            if dropped[b] {
                continue;
            }
            let rho = pearson(&ranks[a], &ranks[b]);
            if rho.abs() >= rho_max {
                dropped[b] = true;
                report.dropped_correlated.push(CorrelatedDrop {
                    kept: matrix.columns()[alive[a]].clone(),
                    dropped: matrix.columns()[alive[b]].clone(),
                    rho,
                });
            }
        }
    }
    let kept: Vec<String> = alive
        .iter()
        .zip(&dropped)
        .filter(|(_, &d)| !d)
        .map(|(&j, _)| matrix.columns()[j].clone())
        .collect();
    if kept.is_empty() {
        return Err(Error::NoFeaturesSurvive);
    }
    Ok((matrix.select_columns(&kept)?, report))
}

/// Recursive feature elimination driven by forest importances. The
/// selected names keep the matrix column order.
pub fn rfe_select(matrix: &FeatureMatrix, k: usize, forest_params: &ForestParams, seed: u64) -> Result<FeatureSelectionReport> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if matrix.n_cols() < k {
        return Err(Error::FeatureMatrix(format!(
            "{} features available, {k} requested",
            matrix.n_cols()
        )));
    }
    let labels = matrix.labels()?;
    if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
        return Err(Error::SingleClass);
    }
    let params = ForestParams {
        seed,
        mtry: None,
        ..forest_params.clone()
    };
    let mut remaining: Vec<String> = matrix.columns().to_vec();
    let mut rounds = Vec::new();
    while remaining.len() > k {
        let sub = matrix.select_columns(&remaining)?;
        let model = train_forest(&sub, &params)?;
        let imp: Vec<f64> = importances(&model).values().collect();
        let mut order: Vec<usize> = (0..remaining.len()).collect();
        // Lowest importance first; among equals the later column goes first.
        order.sort_by(|&a, &b| imp[a].total_cmp(&imp[b]).then(b.cmp(&a)));
        let n_drop = (remaining.len() as f64 * 0.1).ceil().max(1.0) as usize;
        let n_drop = n_drop.min(remaining.len() - k);
        let mut drop: Vec<usize> = order[..n_drop].to_vec();
        rounds.push(drop.iter().map(|&i| remaining[i].clone()).collect());
        drop.sort_unstable();
        for i in drop.into_iter().rev() {
            remaining.remove(i);
        }
    }
    Ok(FeatureSelectionReport {
        dropped_near_zero_variance: vec![],
        dropped_correlated: vec![],
        rfe_rounds: rounds,
        selected_top_k: remaining,
        seed,
    })
}

/// Pruning followed by RFE on the surviving columns.
pub fn select_features(
    matrix: &FeatureMatrix,
    params: &SelectionParams,
    forest_params: &ForestParams,
    seed: u64,
) -> Result<FeatureSelectionReport> {
    let (pruned, prune) = prune_features(matrix, params.variance_eps, params.rho_max)?;
    let mut report = rfe_select(&pruned, params.k.min(pruned.n_cols()), forest_params, seed)?;
    report.dropped_near_zero_variance = prune.dropped_near_zero_variance;
    report.dropped_correlated = prune.dropped_correlated;
    Ok(report)
}
