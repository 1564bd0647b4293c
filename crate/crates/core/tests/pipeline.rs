use std::collections::BTreeMap;
use std::path::Path;

use nfseg_core::anatomy::AnatomicalRegion;
use nfseg_core::candidates::label_components;
use nfseg_core::forest::save_model;
use nfseg_core::phantom::{generate_phantom, PhantomConfig};
use nfseg_core::pipeline::{
    evaluate_run, outputs, phantom_inputs, run_batch, run_pipeline, train_stage, PipelineConfig, ScanInputs,
};
use nfseg_core::radiomics::FeatureMatrix;
use nfseg_core::volume::LabelVolume;
use nfseg_core::{Error, ErrorClass};

fn small(seed: u64) -> PhantomConfig {
    PhantomConfig {
        seed,
        dims: [32, 128, 64],
        spacing: [7.8, 1.25, 1.25],
        ..PhantomConfig::default()
    }
}

fn write_phantom(cfg: &PhantomConfig, dir: &Path) -> ScanInputs {
    generate_phantom(cfg).unwrap().write(dir).unwrap();
    phantom_inputs(dir, &format!("phantom_{}", cfg.seed))
}

fn config_for(scan: ScanInputs, out: &Path) -> PipelineConfig {
    let mut cfg = PipelineConfig {
        classify: false,
        ..PipelineConfig::default()
    };
    cfg.paths.set_scan(scan);
    cfg.paths.output_dir = out.to_path_buf();
    cfg
}

#[test]
fn noiseless_phantom_is_recovered_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let pc = small(3).noiseless();
    let scan = write_phantom(&pc, &tmp.path().join("phantom"));
    let run = run_pipeline(&config_for(scan, &tmp.path().join("out"))).unwrap();
    let m = run.metrics.unwrap();
    assert_eq!(m.dsc, 1.0);
    assert_eq!(m.f1, 1.0);
    assert_eq!(m.fp, 0);
    assert_eq!(run.partition, pc.expected_partition().unwrap());
    for name in [outputs::PRIOR, outputs::CANDIDATES, outputs::FEATURES, outputs::FINAL_MASK, outputs::MANIFEST] {
        assert!(tmp.path().join("out").join(name).is_file(), "{name}");
    }
}

#[test]
fn absent_ensemble_dir_names_the_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let mut scan = write_phantom(&small(4), tmp.path());
    scan.ensemble_dir = Some(tmp.path().join("nowhere"));
    let err = run_pipeline(&config_for(scan, &tmp.path().join("out"))).unwrap_err();
    assert!(err.to_string().contains("extract-candidates"), "{err}");
    assert_eq!(err.class(), ErrorClass::Data);
}

#[test]
fn classification_without_model_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = config_for(ScanInputs::default(), tmp.path());
    cfg.classify = true;
    let err = run_pipeline(&cfg).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
}

#[test]
fn trained_bundle_removes_fp_blobs() {
    let tmp = tempfile::tempdir().unwrap();
    let train: Vec<FeatureMatrix> = (100..104)
        .map(|seed| {
            let dir = tmp.path().join(format!("train_{seed}"));
            let scan = write_phantom(&small(seed), &dir.join("phantom"));
            run_pipeline(&config_for(scan, &dir.join("out"))).unwrap();
            FeatureMatrix::read_csv(dir.join("out").join(outputs::FEATURES)).unwrap()
        })
        .collect();
    let matrix = FeatureMatrix::concat(&train).unwrap();
    let mut cfg = config_for(ScanInputs::default(), tmp.path());
    cfg.forest.n_trees = 50;
    let (selection, bundle) = train_stage(&matrix, &cfg).unwrap();
    assert_eq!(selection.selected_top_k.len(), 10);
    let model = tmp.path().join("model.json");
    save_model(&bundle, &model).unwrap();

    let scan = write_phantom(&small(7), &tmp.path().join("test"));
    let mut cfg = config_for(scan.clone(), &tmp.path().join("test_out"));
    cfg.classify = true;
    cfg.paths.model = Some(model);
    let run = run_pipeline(&cfg).unwrap();
    let gt = nfseg_core::volume::nifti::read_labels(scan.gt.unwrap()).unwrap();
    let gt_count = label_components(&gt).unwrap().count;
    assert_eq!(label_components(&run.final_mask).unwrap().count, gt_count);
    assert_eq!(run.metrics.unwrap().fp, 0);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let scan = write_phantom(&small(5), &tmp.path().join("phantom"));
    let a = run_pipeline(&config_for(scan.clone(), &tmp.path().join("a"))).unwrap();
    let b = run_pipeline(&config_for(scan, &tmp.path().join("b"))).unwrap();
    assert!(!a.manifest.outputs.is_empty());
    assert_eq!(a.manifest.outputs, b.manifest.outputs);
    assert_eq!(a.manifest.inputs, b.manifest.inputs);
}

#[test]
fn batch_results_are_sorted_by_scan_id() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = config_for(ScanInputs::default(), &tmp.path().join("out"));
    cfg.workers = 2;
    for seed in [9, 8] {
        let pc = PhantomConfig {
            fp_blob_count: 0,
            ..small(seed)
        };
        cfg.batch.push(write_phantom(&pc, &tmp.path().join(format!("p{seed}"))));
    }
    let runs = run_batch(&cfg).unwrap();
    let ids: Vec<&str> = runs.iter().map(|r| r.manifest.scan_id.as_str()).collect();
    assert_eq!(ids, ["phantom_8", "phantom_9"]);
    assert!(tmp.path().join("out/phantom_8").join(outputs::FINAL_MASK).is_file());
    assert!(tmp.path().join("out").join(outputs::BATCH_METRICS).is_file());
}

#[test]
fn evaluate_run_conventions() {
    let mut pc = small(11).noiseless();
    pc.tumors_per_region = BTreeMap::from([(AnatomicalRegion::Legs, [3, 3])]);
    let b = generate_phantom(&pc).unwrap();
    let p = pc.expected_partition().unwrap();
    let gt = &b.gt_tumors;
    let same = evaluate_run("s", gt, gt, &p).unwrap();
    assert_eq!((same.dsc, same.f1), (1.0, 1.0));
    let empty = LabelVolume::binary(gt.geometry().clone(), vec![false; gt.data().len()]).unwrap();
    let m = evaluate_run("s", &empty, gt, &p).unwrap();
    assert_eq!((m.f1, m.fn_count, m.tp), (0.0, 3, 0));
    assert!(!m.per_region_f1.contains_key(&AnatomicalRegion::Chest));
    assert!(m.per_region_f1.contains_key(&AnatomicalRegion::Legs));
}

#[test]
fn config_paths_resolve_against_config_dir() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("cfg.json");
    std::fs::write(
        &path,
        r#"{"paths": {"image": "in/img.nii.gz", "output_dir": "/abs/out"}, "threshold": "low", "seed": 4}"#,
    )
    .unwrap();
    let cfg = PipelineConfig::load(&path).unwrap();
    assert_eq!(cfg.paths.image.as_deref(), Some(tmp.path().join("in/img.nii.gz").as_path()));
    assert_eq!(cfg.paths.output_dir, Path::new("/abs/out"));
    assert_eq!(cfg.threshold_policy().unwrap().tau, 0.25);
    assert_eq!(cfg.forest_params().seed, 4);

    std::fs::write(&path, r#"{"paths": {"imag": "x"}}"#).unwrap();
    assert!(matches!(PipelineConfig::load(&path), Err(Error::Config(_))));
}
