//! End-to-end orchestration: anatomy prior, candidate extraction, radiomics
//! and classification, with every intermediate persisted to the output
//! directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anatomy::{
    build_high_risk_zone, extract_landmarks, refine_anatomy_mask, BodyRegionPartition, LabelMappingConfig,
    RefineReport, DEFAULT_ZONE_RADIUS_MM,
};
use crate::candidates::{
    binarize, build_candidates, fuse_ensemble, label_components, CandidateReport, Components, ThresholdName,
    ThresholdPolicy, TumorCandidate, DEFAULT_MIN_VOXELS,
};
use crate::error::{Error, Result, StageExt};
use crate::evaluation::{evaluate_scan, ScanMetrics};
use crate::forest::{
    classify_candidates, load_model, train_region_bundle, CandidateDecision, FallbackPolicy, ForestParams,
    RegionClassifierBundle,
};
use crate::io::{create_dir_all, read_json, sha256_file, write_json};
use crate::radiomics::{
    extract_features, select_features, FeatureMatrix, FeatureSelectionReport, RadiomicsParams, RowKey,
    SelectionParams,
};
use crate::volume::nifti::{read_confidence, read_image, read_labels};
use crate::volume::{
    rescale_labels_unit, resample, write_volume, zscore_normalize, ConfidenceVolume, ImageVolume, LabelVolume,
    ResampleMode, Volume,
};

pub const STAGE_REFINE: &str = "refine-anatomy";
pub const STAGE_NETWORK_INPUT: &str = "network-input";
pub const STAGE_CANDIDATES: &str = "extract-candidates";
pub const STAGE_FEATURES: &str = "features";
pub const STAGE_CLASSIFY: &str = "classify";
pub const STAGE_EVALUATE: &str = "evaluate";

/// File names written into a scan's output directory.
pub mod outputs {
    pub const REFINED: &str = "refined_anatomy.nii.gz";
    pub const PRIOR: &str = "anatomy_prior.nii.gz";
    pub const REFINE_REPORT: &str = "refine_report.json";
    pub const PARTITION: &str = "partition.json";
    pub const NETWORK_IMAGE: &str = "network_input_image.nii.gz";
    pub const NETWORK_ANATOMY: &str = "network_input_anatomy.nii.gz";
    pub const FUSED: &str = "fused_confidence.nii.gz";
    pub const BINARY: &str = "binary_mask.nii.gz";
    pub const COMPONENTS: &str = "components.nii.gz";
    pub const CANDIDATES: &str = "candidates.json";
    pub const FEATURES: &str = "features.csv";
    pub const CLASSIFICATION: &str = "classification.json";
    pub const FINAL_MASK: &str = "final_mask.nii.gz";
    pub const METRICS: &str = "metrics.json";
    pub const MANIFEST: &str = "manifest.json";
    pub const BATCH_METRICS: &str = "batch_metrics.json";
}

/// Inputs of one scan. `scan_id` defaults to the image file stem.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanInputs {
    pub scan_id: Option<String>,
    pub image: Option<PathBuf>,
    pub anatomy_raw: Option<PathBuf>,
    pub ensemble_dir: Option<PathBuf>,
    pub gt: Option<PathBuf>,
}

impl ScanInputs {
    pub fn resolved_scan_id(&self) -> String {
        if let Some(id) = &self.scan_id {
            return id.clone();
        }
        self.image
            .as_ref()
            .and_then(|p| p.file_name())
            .map(|n| {
                let n = n.to_string_lossy();
                n.strip_suffix(".nii.gz")
                    .or_else(|| n.strip_suffix(".nii"))
                    .unwrap_or(&n)
                    .to_string()
            })
            .unwrap_or_else(|| "scan".to_string())
    }

    fn require<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
        p.as_deref()
            .ok_or_else(|| Error::Config(format!("missing input path `{what}`")))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelinePaths {
    pub scan_id: Option<String>,
    pub image: Option<PathBuf>,
    pub anatomy_raw: Option<PathBuf>,
    pub ensemble_dir: Option<PathBuf>,
    pub gt: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub model: Option<PathBuf>,
    /// Plain-text label mapping; the built-in mapping when absent.
    pub label_mapping: Option<PathBuf>,
}

impl PipelinePaths {
    pub fn set_scan(&mut self, scan: ScanInputs) {
        self.scan_id = scan.scan_id;
        self.image = scan.image;
        self.anatomy_raw = scan.anatomy_raw;
        self.ensemble_dir = scan.ensemble_dir;
        self.gt = scan.gt;
    }

    pub fn scan(&self) -> ScanInputs {
        ScanInputs {
            scan_id: self.scan_id.clone(),
            image: self.image.clone(),
            anatomy_raw: self.anatomy_raw.clone(),
            ensemble_dir: self.ensemble_dir.clone(),
            gt: self.gt.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: PipelinePaths,
    /// Extra scans processed concurrently, each into `output_dir/<scan_id>`.
    pub batch: Vec<ScanInputs>,
    /// Spacing of the network input volumes; native spacing when absent.
    pub target_spacing: Option<[f64; 3]>,
    pub zone_radius_mm: f64,
    pub threshold: ThresholdName,
    pub tau: Option<f64>,
    pub min_voxels: usize,
    pub radiomics: RadiomicsParams,
    pub selection: SelectionParams,
    /// The forest seed is always replaced by `seed`.
    pub forest: ForestParams,
    pub fallback: FallbackPolicy,
    pub decision_threshold: f64,
    pub classify: bool,
    pub seed: u64,
    /// Scans processed in parallel; 0 lets the thread pool decide.
    pub workers: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            paths: PipelinePaths::default(),
            batch: vec![],
            target_spacing: None,
            zone_radius_mm: DEFAULT_ZONE_RADIUS_MM,
            threshold: ThresholdName::High,
            tau: None,
            min_voxels: DEFAULT_MIN_VOXELS,
            radiomics: RadiomicsParams::default(),
            selection: SelectionParams::default(),
            forest: ForestParams::default(),
            fallback: FallbackPolicy::Keep,
            decision_threshold: 0.5,
            classify: true,
            seed: 0,
            workers: 0,
        }
    }
}

impl PipelineConfig {
    /// Reads a JSON config; relative paths resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() && !p.as_os_str().is_empty() {
                *p = base.join(&*p);
            }
        };
        for s in &mut self.batch {
            for p in [&mut s.image, &mut s.anatomy_raw, &mut s.ensemble_dir, &mut s.gt]
                .into_iter()
                .flatten()
            {
                fix(p);
            }
        }
        let paths = &mut self.paths;
        fix(&mut paths.output_dir);
        for p in [
            &mut paths.image,
            &mut paths.anatomy_raw,
            &mut paths.ensemble_dir,
            &mut paths.gt,
            &mut paths.model,
            &mut paths.label_mapping,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    pub fn threshold_policy(&self) -> Result<ThresholdPolicy> {
        ThresholdPolicy::from_name(self.threshold, self.tau).map_err(|e| Error::Config(e.to_string()))
    }

    /// Forest parameters with the pipeline seed applied.
    pub fn forest_params(&self) -> ForestParams {
        ForestParams {
            seed: self.seed,
            ..self.forest.clone()
        }
    }

    pub fn mapping(&self) -> Result<LabelMappingConfig> {
        match &self.paths.label_mapping {
            Some(p) => LabelMappingConfig::from_file(p),
            None => Ok(LabelMappingConfig::default()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.threshold_policy()?;
        if !(self.zone_radius_mm > 0.0 && self.zone_radius_mm.is_finite()) {
            return bad(format!("zone_radius_mm must be positive, got {}", self.zone_radius_mm));
        }
        if let Some(t) = self.target_spacing {
            if t.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                return bad(format!("target_spacing must be positive, got {t:?}"));
            }
        }
        if self.min_voxels == 0 {
            return bad("min_voxels must be at least 1".into());
        }
        if self.radiomics.bins < 2 || self.radiomics.distance < 1 {
            return bad("radiomics needs bins >= 2 and distance >= 1".into());
        }
        let s = &self.selection;
        if !(s.variance_eps >= 0.0 && s.rho_max > 0.0 && s.rho_max <= 1.0 && s.k >= 1) {
            return bad("selection needs variance_eps >= 0, rho_max in (0, 1] and k >= 1".into());
        }
        self.forest.validate().map_err(|e| Error::Config(e.to_string()))?;
        if !(0.0..=1.0).contains(&self.decision_threshold) {
            return bad(format!("decision_threshold must lie in [0, 1], got {}", self.decision_threshold));
        }
        if self.classify && self.paths.model.is_none() {
            return bad("classification is enabled but no model bundle is configured".into());
        }
        if self.paths.output_dir.as_os_str().is_empty() {
            return bad("output_dir is required".into());
        }
        Ok(())
    }
}

/// Refined labels, the prior with the high-risk zone, and landmarks.
#[derive(Debug, Clone)]
pub struct AnatomyPrior {
    pub refined: LabelVolume,
    pub prior: LabelVolume,
    pub partition: BodyRegionPartition,
    pub report: RefineReport,
}

pub fn anatomy_stage(raw: &LabelVolume, mapping: &LabelMappingConfig, zone_radius_mm: f64) -> Result<AnatomyPrior> {
    let (refined, report) = refine_anatomy_mask(raw, mapping)?;
    let prior = build_high_risk_zone(&refined, zone_radius_mm)?;
    let partition = extract_landmarks(&refined)?;
    Ok(AnatomyPrior {
        refined,
        prior,
        partition,
        report,
    })
}

/// Z-scored image and unit-scaled anatomy channel on the network grid.
pub fn network_input(
    image: &ImageVolume,
    prior: &LabelVolume,
    target_spacing: Option<[f64; 3]>,
) -> Result<(ImageVolume, ImageVolume)> {
    image.geometry().ensure_same(prior.geometry(), "image vs anatomy")?;
    let normalized = zscore_normalize(image);
    let Some(t) = target_spacing else {
        return Ok((normalized, rescale_labels_unit(prior)?));
    };
    let img = resample(&Volume::Image(normalized), t, ResampleMode::Linear)?.into_image()?;
    let labels = resample(&Volume::Label(prior.clone()), t, ResampleMode::Nearest)?.into_labels()?;
    Ok((img, rescale_labels_unit(&labels)?))
}

#[derive(Debug, Clone)]
pub struct CandidateStage {
    pub fused: ConfidenceVolume,
    pub binary: LabelVolume,
    pub components: Components,
    pub candidates: Vec<TumorCandidate>,
}

pub fn candidate_stage(
    members: &[ConfidenceVolume],
    policy: &ThresholdPolicy,
    min_voxels: usize,
    partition: &BodyRegionPartition,
) -> Result<CandidateStage> {
    let fused = fuse_ensemble(members)?;
    let binary = binarize(&fused, policy)?;
    let components = label_components(&binary)?;
    let candidates = build_candidates(&components, &fused, partition, min_voxels)?;
    Ok(CandidateStage {
        fused,
        binary,
        components,
        candidates,
    })
}

/// One feature row per candidate; with `gt`, a row is positive when the
/// candidate overlaps a ground-truth tumor.
pub fn feature_stage(
    candidates: &[TumorCandidate],
    image: &ImageVolume,
    scan_id: &str,
    params: &RadiomicsParams,
    gt: Option<&LabelVolume>,
) -> Result<FeatureMatrix> {
    if let Some(gt) = gt {
        image.geometry().ensure_same(gt.geometry(), "image vs ground truth")?;
    }
    let rows = candidates
        .par_iter()
        .map(|c| {
            let features = extract_features(c, image, params)?;
            let key = RowKey {
                scan_id: scan_id.to_string(),
                candidate_id: c.id,
                region: c.region,
                label: gt.map(|g| c.overlaps(g)),
            };
            Ok((key, features))
        })
        .collect::<Result<Vec<_>>>()?;
    FeatureMatrix::from_vectors(rows)
}

/// Feature selection followed by per-region forest training.
pub fn train_stage(
    matrix: &FeatureMatrix,
    config: &PipelineConfig,
) -> Result<(FeatureSelectionReport, RegionClassifierBundle)> {
    let params = config.forest_params();
    let selection = select_features(matrix, &config.selection, &params, config.seed)?;
    let bundle = train_region_bundle(matrix, &selection.selected_top_k, &params, config.fallback)?;
    Ok((selection, bundle))
}

pub fn evaluate_run(
    scan_id: &str,
    pred: &LabelVolume,
    gt: &LabelVolume,
    partition: &BodyRegionPartition,
) -> Result<ScanMetrics> {
    evaluate_scan(scan_id, pred, gt, partition)
}

/// Inputs of a phantom written by [`crate::phantom::PhantomBundle::write`].
pub fn phantom_inputs(dir: &Path, scan_id: &str) -> ScanInputs {
    use crate::phantom::files;
    ScanInputs {
        scan_id: Some(scan_id.to_string()),
        image: Some(dir.join(files::IMAGE)),
        anatomy_raw: Some(dir.join(files::ANATOMY_RAW)),
        ensemble_dir: Some(dir.join(files::ENSEMBLE_DIR)),
        gt: Some(dir.join(files::GT)),
    }
}

/// Ensemble member files (`*.nii`, `*.nii.gz`) in name order.
pub fn ensemble_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        if path.is_file() && (name.ends_with(".nii") || name.ends_with(".nii.gz")) {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(Error::InvalidVolume(format!("no NIfTI ensemble members in {}", dir.display())));
    }
    Ok(files)
}

pub fn read_ensemble(dir: &Path) -> Result<Vec<ConfidenceVolume>> {
    ensemble_files(dir)?.iter().map(read_confidence).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StageTiming {
    pub stage: String,
    pub millis: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunManifest {
    pub software: String,
    pub version: String,
    pub scan_id: String,
    pub config: PipelineConfig,
    pub timings: Vec<StageTiming>,
    pub inputs: Vec<FileHash>,
    /// Output files relative to the scan directory, excluding the manifest.
    pub outputs: Vec<FileHash>,
}

impl RunManifest {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        read_json(path)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub manifest: RunManifest,
    pub final_mask: LabelVolume,
    pub candidates: CandidateReport,
    pub decisions: Option<Vec<CandidateDecision>>,
    pub metrics: Option<ScanMetrics>,
    pub partition: BodyRegionPartition,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ClassificationReport {
    pub decision_threshold: f64,
    pub fallback: FallbackPolicy,
    pub decisions: Vec<CandidateDecision>,
}

struct Written<'a> {
    dir: &'a Path,
    files: Vec<(String, PathBuf)>,
}

impl Written<'_> {
    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.files.push((name.to_string(), p.clone()));
        p
    }
}

struct Timer(Vec<StageTiming>);

impl Timer {
    fn run<T>(&mut self, stage: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let t = Instant::now();
        let out = f().stage(stage)?;
        self.0.push(StageTiming {
            stage: stage.to_string(),
            millis: t.elapsed().as_secs_f64() * 1e3,
        });
        Ok(out)
    }
}

fn hash_files(files: &[(String, PathBuf)]) -> Result<Vec<FileHash>> {
    files
        .iter()
        .map(|(name, p)| {
            Ok(FileHash {
                path: name.clone(),
                sha256: sha256_file(p)?,
            })
        })
        .collect()
}

/// Runs the scan in `config.paths`; see [`run_batch`] for `config.batch`.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunOutput> {
    config.validate()?;
    let model = load_bundle(config)?;
    run_scan(config, &config.paths.scan(), &config.paths.output_dir, model.as_ref())
}

fn load_bundle(config: &PipelineConfig) -> Result<Option<RegionClassifierBundle>> {
    if !config.classify {
        return Ok(None);
    }
    let path = ScanInputs::require(&config.paths.model, "model")?;
    load_model(path).stage(STAGE_CLASSIFY).map(Some)
}

/// Every scan in `config.batch` (plus `config.paths` when it names an
/// image), `workers` at a time. Results are sorted by scan id.
pub fn run_batch(config: &PipelineConfig) -> Result<Vec<RunOutput>> {
    config.validate()?;
    let model = load_bundle(config)?;
    let mut scans: Vec<ScanInputs> = config.batch.clone();
    if config.paths.image.is_some() {
        scans.push(config.paths.scan());
    }
    let mut ids: Vec<String> = scans.iter().map(|s| s.resolved_scan_id()).collect();
    ids.sort();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::Config(format!("duplicate scan id `{}` in batch", w[0])));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {} workers: {e}", config.workers)))?;
    let mut results: Vec<RunOutput> = pool.install(|| {
        scans
            .par_iter()
            .map(|s| {
                let dir = config.paths.output_dir.join(s.resolved_scan_id());
                run_scan(config, s, &dir, model.as_ref())
            })
            .collect::<Result<Vec<_>>>()
    })?;
    results.sort_by(|a, b| a.manifest.scan_id.cmp(&b.manifest.scan_id));
    let metrics: Vec<&ScanMetrics> = results.iter().filter_map(|r| r.metrics.as_ref()).collect();
    if !metrics.is_empty() {
        write_json(config.paths.output_dir.join(outputs::BATCH_METRICS), &metrics)?;
    }
    Ok(results)
}

fn run_scan(
    config: &PipelineConfig,
    scan: &ScanInputs,
    out: &Path,
    model: Option<&RegionClassifierBundle>,
) -> Result<RunOutput> {
    let scan_id = scan.resolved_scan_id();
    let image_path = ScanInputs::require(&scan.image, "image")?;
    let anatomy_path = ScanInputs::require(&scan.anatomy_raw, "anatomy_raw")?;
    let ensemble_dir = ScanInputs::require(&scan.ensemble_dir, "ensemble_dir")?;
    let policy = config.threshold_policy()?;
    create_dir_all(out)?;
    let mut timer = Timer(Vec::new());
    let mut files = Written {
        dir: out,
        files: Vec::new(),
    };

    let image = timer.run(STAGE_REFINE, || read_image(image_path))?;
    let anatomy = timer.run(STAGE_REFINE, || {
        let raw = read_labels(anatomy_path)?;
        image.geometry().ensure_same(raw.geometry(), "image vs anatomy")?;
        let a = anatomy_stage(&raw, &config.mapping()?, config.zone_radius_mm)?;
        write_volume(&a.refined, files.path(outputs::REFINED))?;
        write_volume(&a.prior, files.path(outputs::PRIOR))?;
        write_json(files.path(outputs::REFINE_REPORT), &a.report)?;
        write_json(files.path(outputs::PARTITION), &a.partition)?;
        Ok(a)
    })?;
    let normalized = timer.run(STAGE_NETWORK_INPUT, || {
        let (img, anat) = network_input(&image, &anatomy.prior, config.target_spacing)?;
        write_volume(&img, files.path(outputs::NETWORK_IMAGE))?;
        write_volume(&anat, files.path(outputs::NETWORK_ANATOMY))?;
        // Radiomics stay on the native grid.
        Ok(match config.target_spacing {
            None => img,
            Some(_) => zscore_normalize(&image),
        })
    })?;
    let stage = timer.run(STAGE_CANDIDATES, || {
        let members = read_ensemble(ensemble_dir)?;
        image.geometry().ensure_same(members[0].geometry(), "image vs ensemble")?;
        let s = candidate_stage(&members, &policy, config.min_voxels, &anatomy.partition)?;
        write_volume(&s.fused, files.path(outputs::FUSED))?;
        write_volume(&s.binary, files.path(outputs::BINARY))?;
        write_volume(&s.components.labels, files.path(outputs::COMPONENTS))?;
        Ok(s)
    })?;
    let report = CandidateReport {
        threshold: policy,
        min_voxels: config.min_voxels,
        partition: anatomy.partition,
        candidates: stage.candidates,
    };
    report.write(files.path(outputs::CANDIDATES)).stage(STAGE_CANDIDATES)?;
    let gt = scan
        .gt
        .as_ref()
        .map(|p| read_labels(p).stage(STAGE_EVALUATE))
        .transpose()?;

    let matrix = timer.run(STAGE_FEATURES, || {
        let m = feature_stage(&report.candidates, &normalized, &scan_id, &config.radiomics, gt.as_ref())?;
        let csv = files.path(outputs::FEATURES);
        files.path(&FeatureMatrix::sidecar_path(Path::new(outputs::FEATURES)).to_string_lossy());
        m.write_csv(csv)?;
        Ok(m)
    })?;
    let (final_mask, decisions) = match model {
        Some(bundle) => {
            let c = timer.run(STAGE_CLASSIFY, || {
                let c = classify_candidates(
                    &report.candidates,
                    &matrix,
                    &scan_id,
                    bundle,
                    config.decision_threshold,
                    image.geometry(),
                )?;
                let r = ClassificationReport {
                    decision_threshold: config.decision_threshold,
                    fallback: bundle.fallback,
                    decisions: c.decisions.clone(),
                };
                write_json(files.path(outputs::CLASSIFICATION), &r)?;
                Ok(c)
            })?;
            (c.mask, Some(c.decisions))
        }
        None => {
            let mask = crate::candidates::candidates_mask(image.geometry(), &report.candidates)?;
            (mask, None)
        }
    };
    write_volume(&final_mask, files.path(outputs::FINAL_MASK)).stage(STAGE_CLASSIFY)?;

    let metrics = match &gt {
        Some(gt) => Some(timer.run(STAGE_EVALUATE, || {
            let m = evaluate_run(&scan_id, &final_mask, gt, &anatomy.partition)?;
            write_json(files.path(outputs::METRICS), &m)?;
            Ok(m)
        })?),
        None => None,
    };

    let mut inputs = vec![
        ("image".to_string(), image_path.to_path_buf()),
        ("anatomy_raw".to_string(), anatomy_path.to_path_buf()),
    ];
    for f in ensemble_files(ensemble_dir)? {
        let name = f.file_name().unwrap_or_default().to_string_lossy().into_owned();
        inputs.push((format!("ensemble/{name}"), f));
    }
    for (name, p) in [("gt", &scan.gt), ("model", &config.paths.model), ("label_mapping", &config.paths.label_mapping)] {
        if let Some(p) = p {
            if name != "model" || model.is_some() {
                inputs.push((name.to_string(), p.clone()));
            }
        }
    }
    let mut written = files.files;
    written.sort();
    let manifest = RunManifest {
        software: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        scan_id,
        config: config.clone(),
        timings: timer.0,
        inputs: hash_files(&inputs)?,
        outputs: hash_files(&written)?,
    };
    write_json(out.join(outputs::MANIFEST), &manifest)?;
    Ok(RunOutput {
        manifest,
        final_mask,
        candidates: report,
        decisions,
        metrics,
        partition: anatomy.partition,
    })
}
