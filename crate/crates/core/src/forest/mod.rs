//! Gini CART random forests and region-routed candidate classification.

mod bundle;
mod tree;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use bundle::{
    classify_candidates, load_model, save_model, train_region_bundle, CandidateDecision, Classification,
    FallbackPolicy, RegionClassifierBundle, SCHEMA_VERSION,
};
pub use tree::{DecisionTree, Node};

use crate::anatomy::AnatomicalRegion;
use crate::error::{Error, Result};
use crate::radiomics::{FeatureMatrix, FeatureVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    /// 0 means unlimited.
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// `None` means `ceil(sqrt(p))`.
    pub mtry: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 200,
            max_depth: 0,
            min_samples_leaf: 2,
            mtry: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl ForestParams {
    pub fn resolved_mtry(&self, p: usize) -> Result<usize> {
        let m = self.mtry.unwrap_or_else(|| (p as f64).sqrt().ceil() as usize);
        if m == 0 || m > p {
            return Err(Error::InvalidArgument(format!("mtry must lie in [1, {p}], got {m}")));
        }
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::InvalidArgument("n_trees must be at least 1".into()));
        }
        if self.min_samples_leaf == 0 {
            return Err(Error::InvalidArgument("min_samples_leaf must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub n_samples: usize,
    pub n_positive: usize,
    pub n_negative: usize,
    pub oob_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForestModel {
    pub feature_names: Vec<String>,
    pub region: Option<AnatomicalRegion>,
    pub params: ForestParams,
    pub metadata: TrainingMetadata,
    pub trees: Vec<DecisionTree>,
}

impl RandomForestModel {
    /// Assembles a model from existing trees after checking their structure.
    pub fn from_trees(
        feature_names: Vec<String>,
        region: Option<AnatomicalRegion>,
        params: ForestParams,
        metadata: TrainingMetadata,
        trees: Vec<DecisionTree>,
    ) -> Result<Self> {
        let model = Self {
            feature_names,
            region,
            params,
            metadata,
            trees,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trees.is_empty() {
            return Err(Error::ModelFormat("model has no trees".into()));
        }
        for (t, tree) in self.trees.iter().enumerate() {
            tree.validate(self.feature_names.len())
                .map_err(|e| Error::ModelFormat(format!("tree {t}: {e}")))?;
        }
        Ok(())
    }

    /// Probability of the tumor class for a row in model column order.
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut votes: Vec<f64> = self.trees.iter().map(|t| t.predict(row)).collect();
        // Summing in sorted order keeps the result independent of tree order.
        votes.sort_by(f64::total_cmp);
        votes.iter().sum::<f64>() / votes.len() as f64
    }

    /// Reorders a feature vector into model column order.
    pub fn align(&self, features: &FeatureVector) -> Result<Vec<f64>> {
        if features.len() != self.feature_names.len() {
            let extra: Vec<&str> = features
                .names()
                .filter(|n| !self.feature_names.iter().any(|f| f == n))
                .collect();
            if !extra.is_empty() {
                return Err(Error::FeatureMismatch(format!("unexpected features {extra:?}")));
            }
        }
        self.feature_names
            .iter()
            .map(|n| {
                features
                    .get(n)
                    .ok_or_else(|| Error::FeatureMismatch(format!("missing feature `{n}`")))
            })
            .collect()
    }
}

/// Trains one forest on a labeled matrix using all of its columns.
pub fn train_forest(matrix: &FeatureMatrix, params: &ForestParams) -> Result<RandomForestModel> {
    params.validate()?;
    if matrix.n_rows() == 0 || matrix.n_cols() == 0 {
        return Err(Error::FeatureMatrix("cannot train on an empty matrix".into()));
    }
    let labels = matrix.labels()?;
    let n_pos = labels.iter().filter(|&&l| l).count();
    if n_pos == 0 || n_pos == labels.len() {
        return Err(Error::SingleClass);
    }
    if matrix.n_rows() < 2 {
        return Err(Error::FeatureMatrix("training needs at least 2 rows".into()));
    }
    let mtry = params.resolved_mtry(matrix.n_cols())?;
    let n = matrix.n_rows();
    let rows: Vec<&[f64]> = (0..n).map(|i| matrix.row(i)).collect();
    let y: Vec<usize> = labels.iter().map(|&l| l as usize).collect();

    let grown: Vec<(DecisionTree, Vec<bool>)> = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
            rng.set_stream(t as u64);
            tree::grow(&rows, &y, params, mtry, &mut rng)
        })
        .collect();

    let mut oob_sum = vec![0.0; n];
    let mut oob_n = vec![0usize; n];
    for (t, in_bag) in &grown {
        for i in (0..n).filter(|&i| !in_bag[i]) {
            oob_sum[i] += t.predict(rows[i]);
            oob_n[i] += 1;
        }
    }
    let evaluated: Vec<usize> = (0..n).filter(|&i| oob_n[i] > 0).collect();
    let oob_accuracy = (!evaluated.is_empty()).then(|| {
        let correct = evaluated
            .iter()
            .filter(|&&i| (oob_sum[i] / oob_n[i] as f64 >= 0.5) == labels[i])
            .count();
        correct as f64 / evaluated.len() as f64
    });

    let regions: Vec<AnatomicalRegion> = matrix.rows().iter().map(|r| r.region).collect();
    let region = regions.iter().all(|&r| r == regions[0]).then_some(regions[0]);
    RandomForestModel::from_trees(
        matrix.columns().to_vec(),
        region,
        params.clone(),
        TrainingMetadata {
            n_samples: n,
            n_positive: n_pos,
            n_negative: n - n_pos,
            oob_accuracy,
        },
        grown.into_iter().map(|(t, _)| t).collect(),
    )
}

pub fn predict_proba(model: &RandomForestModel, features: &FeatureVector) -> Result<f64> {
    Ok(model.predict_row(&model.align(features)?))
}

/// Mean decrease in Gini impurity, normalized per tree and then overall.
pub fn importances(model: &RandomForestModel) -> FeatureVector {
    let p = model.feature_names.len();
    let mut total = vec![0.0; p];
    for tree in &model.trees {
        let imp = tree.impurity_decrease(p);
        let s: f64 = imp.iter().sum();
        if s > 0.0 {
            for (t, v) in total.iter_mut().zip(imp) {
                *t += v / s;
            }
        }
    }
    let s: f64 = total.iter().sum();
    if s > 0.0 {
        for t in &mut total {
            *t /= s;
        }
    }
    FeatureVector::new(model.feature_names.iter().cloned().zip(total).collect())
        .expect("importances are finite and names unique")
}
