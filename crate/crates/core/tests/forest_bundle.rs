use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nfseg_core::anatomy::{AnatomicalRegion, BodyRegionPartition};
use nfseg_core::candidates::{build_candidates, candidates_mask, label_components, TumorCandidate};
use nfseg_core::forest::{
    classify_candidates, load_model, save_model, train_region_bundle, DecisionTree, FallbackPolicy, ForestParams,
    Node, RandomForestModel, RegionClassifierBundle, TrainingMetadata,
};
use nfseg_core::radiomics::{FeatureMatrix, RowKey};
use nfseg_core::volume::{ConfidenceVolume, LabelVolume, VolumeGeometry};
use nfseg_core::Error;

use AnatomicalRegion::{Abdomen, Chest, Legs};

fn labeled_matrix(n: usize, seed: u64) -> FeatureMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut values = Vec::new();
    for i in 0..n {
        let label = i % 2 == 0;
        let region = [Chest, Abdomen][i % 4 / 2];
        let shift = if label { 2.0 } else { -2.0 };
        values.push(shift + rng.random_range(-1.0..1.0));
        values.push(rng.random_range(-1.0..1.0));
        rows.push(RowKey {
            scan_id: "train".into(),
            candidate_id: i as u32 + 1,
            region,
            label: Some(label),
        });
    }
    FeatureMatrix::new(vec!["a".into(), "b".into()], rows, values).unwrap()
}

fn params() -> ForestParams {
    ForestParams {
        n_trees: 30,
        seed: 5,
        ..ForestParams::default()
    }
}

fn constant_model(region: AnatomicalRegion, p_one: bool) -> RandomForestModel {
    let counts = if p_one { [0, 4] } else { [4, 0] };
    RandomForestModel::from_trees(
        vec!["a".into(), "b".into()],
        Some(region),
        params(),
        TrainingMetadata {
            n_samples: 4,
            n_positive: counts[1] as usize,
            n_negative: counts[0] as usize,
            oob_accuracy: None,
        },
        vec![DecisionTree::new(vec![Node::leaf(counts)]).unwrap()],
    )
    .unwrap()
}

/// Two blobs per region on a small grid; slices 0-5 legs, 6-11 abdomen,
/// 12-17 chest, 18-23 head/neck.
fn scene() -> (VolumeGeometry, Vec<TumorCandidate>, FeatureMatrix) {
    let g = VolumeGeometry::canonical([6, 24, 10], [2.0, 1.0, 1.0]).unwrap();
    let mut mask = vec![false; g.len()];
    for base in [1, 7, 13, 19] {
        for k in [1, 6] {
            for (di, dj, dk) in [(0, 0, 0), (0, 1, 0), (1, 0, 0), (0, 0, 1)] {
                mask[g.index([2 + di, base + dj, k + dk])] = true;
            }
        }
    }
    let conf = ConfidenceVolume::new(g.clone(), mask.iter().map(|&m| m as u8 as f32).collect()).unwrap();
    let binary = LabelVolume::binary(g.clone(), mask).unwrap();
    let partition = BodyRegionPartition::new(17, 11, 5).unwrap();
    let comps = label_components(&binary).unwrap();
    let candidates = build_candidates(&comps, &conf, &partition, 1).unwrap();
    assert_eq!(candidates.len(), 8);
    let rows = candidates
        .iter()
        .map(|c| RowKey {
            scan_id: "scan".into(),
            candidate_id: c.id,
            region: c.region,
            label: None,
        })
        .collect();
    let values = candidates.iter().flat_map(|c| [c.centroid_voxel[2], 0.5]).collect();
    let matrix = FeatureMatrix::new(vec!["a".into(), "b".into()], rows, values).unwrap();
    (g, candidates, matrix)
}

#[test]
fn round_trip_reproduces_probabilities_bit_exactly() {
    let m = labeled_matrix(80, 1);
    let bundle = train_region_bundle(&m, &["a".into(), "b".into()], &params(), FallbackPolicy::Keep).unwrap();
    assert_eq!(bundle.models.keys().copied().collect::<Vec<_>>(), [Chest, Abdomen]);
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("model.json");
    save_model(&bundle, &path).unwrap();
    let loaded = load_model(&path).unwrap();
    assert_eq!(loaded, bundle);
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..100 {
        let x = [rng.random_range(-4.0..4.0), rng.random_range(-1.0..1.0)];
        for region in [Chest, Abdomen] {
            let a = bundle.model(region).unwrap().predict_row(&x);
            let b = loaded.model(region).unwrap().predict_row(&x);
            assert_eq!(a.to_bits(), b.to_bits());
            assert!((0.0..=1.0).contains(&a));
        }
    }
}

#[test]
fn unknown_schema_and_truncated_files_fail() {
    let m = labeled_matrix(40, 2);
    let bundle = train_region_bundle(&m, &["a".into()], &params(), FallbackPolicy::Keep).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("model.json");
    save_model(&bundle, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();

    let future = text.replacen("\"schema_version\": 1", "\"schema_version\": 99", 1);
    assert_ne!(future, text);
    std::fs::write(&path, future).unwrap();
    let err = load_model(&path).unwrap_err();
    assert!(matches!(err, Error::ModelFormat(_)) && err.to_string().contains("99"), "{err}");

    std::fs::write(&path, &text[..text.len() / 2]).unwrap();
    assert!(matches!(load_model(&path), Err(Error::ModelFormat(_))));
}

#[test]
fn region_without_both_classes_gets_no_model() {
    let mut m = labeled_matrix(40, 3);
    let labels: Vec<bool> = m.rows().iter().map(|r| r.region == Chest && r.label == Some(true)).collect();
    m.set_labels(&labels).unwrap();
    let bundle = train_region_bundle(&m, &["a".into()], &params(), FallbackPolicy::Keep).unwrap();
    assert!(bundle.model(Abdomen).is_none());
    assert!(bundle.model(Chest).is_some());
    m.set_labels(&vec![false; 40]).unwrap();
    assert!(matches!(
        train_region_bundle(&m, &["a".into()], &params(), FallbackPolicy::Keep),
        Err(Error::SingleClass)
    ));
}

#[test]
fn zero_abdomen_model_removes_abdomen_candidates() {
    let (g, candidates, matrix) = scene();
    let models = BTreeMap::from([(Abdomen, constant_model(Abdomen, false)), (Chest, constant_model(Chest, true))]);
    let bundle = RegionClassifierBundle::new(models, FallbackPolicy::Keep).unwrap();
    let c = classify_candidates(&candidates, &matrix, "scan", &bundle, 0.5, &g).unwrap();
    for (d, cand) in c.decisions.iter().zip(&candidates) {
        assert_eq!(d.kept, cand.region != Abdomen, "{d:?}");
    }
    let expected = candidates_mask(&g, candidates.iter().filter(|c| c.region != Abdomen)).unwrap();
    assert_eq!(c.mask, expected);
}

#[test]
fn threshold_zero_is_identity() {
    let (g, candidates, matrix) = scene();
    let models = BTreeMap::from([(Abdomen, constant_model(Abdomen, false)), (Legs, constant_model(Legs, false))]);
    let bundle = RegionClassifierBundle::new(models, FallbackPolicy::Drop).unwrap();
    let c = classify_candidates(&candidates, &matrix, "scan", &bundle, 0.0, &g).unwrap();
    // Modeled regions pass at threshold 0; unmodeled ones follow the fallback.
    for (d, cand) in c.decisions.iter().zip(&candidates) {
        assert_eq!(d.kept, matches!(cand.region, Abdomen | Legs));
    }
    let all = BTreeMap::from(AnatomicalRegion::ALL.map(|r| (r, constant_model(r, false))));
    let bundle = RegionClassifierBundle::new(all, FallbackPolicy::Drop).unwrap();
    let c = classify_candidates(&candidates, &matrix, "scan", &bundle, 0.0, &g).unwrap();
    assert_eq!(c.mask, candidates_mask(&g, &candidates).unwrap());
}

#[test]
fn unmodeled_region_follows_fallback() {
    let (g, candidates, matrix) = scene();
    let chest_only = || BTreeMap::from([(Chest, constant_model(Chest, false))]);
    let keep = RegionClassifierBundle::new(chest_only(), FallbackPolicy::Keep).unwrap();
    let c = classify_candidates(&candidates, &matrix, "scan", &keep, 0.5, &g).unwrap();
    for (d, cand) in c.decisions.iter().zip(&candidates) {
        assert_eq!(d.kept, cand.region != Chest);
        assert_eq!(d.probability.is_none(), cand.region != Chest);
    }
    let drop = RegionClassifierBundle::new(chest_only(), FallbackPolicy::Drop).unwrap();
    let c = classify_candidates(&candidates, &matrix, "scan", &drop, 0.5, &g).unwrap();
    assert!(c.kept_ids().is_empty());
}

#[test]
fn candidate_without_feature_row_is_an_error() {
    let (g, candidates, matrix) = scene();
    let partial = matrix.filter_rows(|r| r.candidate_id != 3);
    let bundle = RegionClassifierBundle::new(BTreeMap::from([(Chest, constant_model(Chest, true))]), FallbackPolicy::Keep)
        .unwrap();
    let err = classify_candidates(&candidates, &partial, "scan", &bundle, 0.5, &g).unwrap_err();
    assert!(err.to_string().contains("candidate 3"), "{err}");
}
