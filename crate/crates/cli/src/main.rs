use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nfseg_core::candidates::{candidates_mask, CandidateReport, ThresholdName};
use nfseg_core::evaluation::{build_study_report, ScanMetrics};
use nfseg_core::forest::{classify_candidates, load_model, save_model, train_region_bundle};
use nfseg_core::io::{create_dir_all, read_json, write_json};
use nfseg_core::phantom::{generate_phantom, PhantomConfig};
use nfseg_core::pipeline::{
    anatomy_stage, candidate_stage, evaluate_run, feature_stage, network_input, outputs, read_ensemble, run_batch,
    run_pipeline, ClassificationReport, PipelineConfig, ScanInputs,
};
use nfseg_core::radiomics::{select_features, FeatureMatrix, FeatureSelectionReport};
use nfseg_core::volume::nifti::{read_image, read_labels};
use nfseg_core::volume::{write_volume, zscore_normalize};
use nfseg_core::{Error, ErrorClass, Result};

const SELECTION_FILE: &str = "selection.json";
const MODEL_FILE: &str = "model.json";
const STUDY_FILE: &str = "study_report.json";

#[derive(Parser)]
#[command(name = "nfseg", version, about = "Anatomy-informed neurofibroma segmentation post-processing")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

/// Overrides for the corresponding config keys.
#[derive(Args)]
struct GlobalArgs {
    /// JSON pipeline config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_parser = parse_threshold)]
    threshold: Option<ThresholdName>,
    #[arg(long, global = true)]
    tau: Option<f64>,
    /// Skip the classifier; the final mask is the union of all candidates.
    #[arg(long, global = true)]
    no_classify: bool,
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true)]
    output: Option<PathBuf>,
}

fn parse_threshold(s: &str) -> std::result::Result<ThresholdName, String> {
    match s {
        "low" => Ok(ThresholdName::Low),
        "high" => Ok(ThresholdName::High),
        "custom" => Ok(ThresholdName::Custom),
        _ => Err(format!("expected low, high or custom, got `{s}`")),
    }
}

#[derive(Subcommand)]
enum Command {
    /// Refine a raw organ label map, add the high-risk zone, find landmarks.
    RefineAnatomy {
        #[arg(long)]
        anatomy: Option<PathBuf>,
        /// Also write the normalized network input channels.
        #[arg(long)]
        image: Option<PathBuf>,
        #[arg(long)]
        mapping: Option<PathBuf>,
        #[arg(long)]
        zone_radius: Option<f64>,
    },
    /// Fuse ensemble members, binarize and split into candidates.
    ExtractCandidates {
        #[arg(long)]
        ensemble_dir: Option<PathBuf>,
        /// partition.json from refine-anatomy.
        #[arg(long)]
        partition: Option<PathBuf>,
        #[arg(long)]
        min_voxels: Option<usize>,
    },
    /// Radiomics features for every candidate.
    Features {
        #[arg(long)]
        image: Option<PathBuf>,
        #[arg(long)]
        candidates: Option<PathBuf>,
        #[arg(long)]
        components: Option<PathBuf>,
        /// Ground truth; labels rows by candidate overlap.
        #[arg(long)]
        gt: Option<PathBuf>,
        #[arg(long)]
        scan_id: Option<String>,
    },
    /// Variance/correlation pruning then RFE over labeled feature tables.
    SelectFeatures {
        #[arg(long, num_args = 1.., required = true)]
        features: Vec<PathBuf>,
    },
    /// Train per-region forests on labeled feature tables.
    TrainClassifier {
        #[arg(long, num_args = 1.., required = true)]
        features: Vec<PathBuf>,
        /// Selection report; selection runs first when absent.
        #[arg(long)]
        selection: Option<PathBuf>,
    },
    /// Score candidates and write the final mask.
    Classify {
        #[arg(long)]
        candidates: Option<PathBuf>,
        #[arg(long)]
        components: Option<PathBuf>,
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        decision_threshold: Option<f64>,
    },
    /// Metrics of one prediction, or a study report over metrics files.
    Evaluate {
        #[arg(long, conflicts_with = "study")]
        pred: Option<PathBuf>,
        #[arg(long)]
        gt: Option<PathBuf>,
        #[arg(long)]
        partition: Option<PathBuf>,
        #[arg(long)]
        scan_id: Option<String>,
        /// `METHOD=a.json,b.json`; repeat once per method.
        #[arg(long)]
        study: Vec<String>,
    },
    /// Write synthetic phantoms.
    Simulate {
        /// JSON phantom config.
        #[arg(long)]
        phantom: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        count: u64,
        #[arg(long)]
        noiseless: bool,
    },
    /// Full pipeline over the configured scan or batch.
    Run,
}

fn load_config(g: &GlobalArgs) -> Result<PipelineConfig> {
    let mut cfg = match &g.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(t) = g.threshold {
        cfg.threshold = t;
    }
    if g.tau.is_some() {
        cfg.tau = g.tau;
    }
    if g.no_classify {
        cfg.classify = false;
    }
    if let Some(w) = g.workers {
        cfg.workers = w;
    }
    if let Some(o) = &g.output {
        cfg.paths.output_dir = o.clone();
    }
    if cfg.paths.output_dir.as_os_str().is_empty() {
        cfg.paths.output_dir = PathBuf::from(".");
    }
    Ok(cfg)
}

fn need(p: Option<PathBuf>, fallback: Option<&PathBuf>, what: &str) -> Result<PathBuf> {
    p.or_else(|| fallback.cloned())
        .ok_or_else(|| Error::Config(format!("missing `--{what}` (no config value either)")))
}

fn out_or<'a>(p: &'a Option<PathBuf>, out: &Path, name: &str) -> PathBuf {
    p.clone().unwrap_or_else(|| out.join(name))
}

fn read_matrices(paths: &[PathBuf]) -> Result<FeatureMatrix> {
    let parts = paths.iter().map(FeatureMatrix::read_csv).collect::<Result<Vec<_>>>()?;
    FeatureMatrix::concat(&parts)
}

fn execute(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli.global)?;
    let out = cfg.paths.output_dir.clone();
    match cli.command {
        Command::RefineAnatomy {
            anatomy,
            image,
            mapping,
            zone_radius,
        } => {
            if mapping.is_some() {
                cfg.paths.label_mapping = mapping;
            }
            let radius = zone_radius.unwrap_or(cfg.zone_radius_mm);
            let raw = read_labels(need(anatomy, cfg.paths.anatomy_raw.as_ref(), "anatomy")?)?;
            create_dir_all(&out)?;
            let a = anatomy_stage(&raw, &cfg.mapping()?, radius)?;
            write_volume(&a.refined, out.join(outputs::REFINED))?;
            write_volume(&a.prior, out.join(outputs::PRIOR))?;
            write_json(out.join(outputs::REFINE_REPORT), &a.report)?;
            write_json(out.join(outputs::PARTITION), &a.partition)?;
            if let Some(p) = image.or(cfg.paths.image.clone()) {
                let (img, anat) = network_input(&read_image(p)?, &a.prior, cfg.target_spacing)?;
                write_volume(&img, out.join(outputs::NETWORK_IMAGE))?;
                write_volume(&anat, out.join(outputs::NETWORK_ANATOMY))?;
            }
            log::info!("landmarks {:?}", a.partition);
        }
        Command::ExtractCandidates {
            ensemble_dir,
            partition,
            min_voxels,
        } => {
            let policy = cfg.threshold_policy()?;
            let dir = need(ensemble_dir, cfg.paths.ensemble_dir.as_ref(), "ensemble-dir")?;
            let partition = read_json(out_or(&partition, &out, outputs::PARTITION))?;
            let min_voxels = min_voxels.unwrap_or(cfg.min_voxels);
            let s = candidate_stage(&read_ensemble(&dir)?, &policy, min_voxels, &partition)?;
            create_dir_all(&out)?;
            write_volume(&s.fused, out.join(outputs::FUSED))?;
            write_volume(&s.binary, out.join(outputs::BINARY))?;
            write_volume(&s.components.labels, out.join(outputs::COMPONENTS))?;
            let report = CandidateReport {
                threshold: policy,
                min_voxels,
                partition,
                candidates: s.candidates,
            };
            report.write(out.join(outputs::CANDIDATES))?;
            println!("{} candidates", report.candidates.len());
        }
        Command::Features {
            image,
            candidates,
            components,
            gt,
            scan_id,
        } => {
            let image_path = need(image, cfg.paths.image.as_ref(), "image")?;
            let scan_id = scan_id.unwrap_or_else(|| {
                ScanInputs {
                    scan_id: cfg.paths.scan_id.clone(),
                    image: Some(image_path.clone()),
                    ..ScanInputs::default()
                }
                .resolved_scan_id()
            });
            let mut report = CandidateReport::read(out_or(&candidates, &out, outputs::CANDIDATES))?;
            report.attach_voxels(&read_labels(out_or(&components, &out, outputs::COMPONENTS))?)?;
            let image = zscore_normalize(&read_image(image_path)?);
            let gt = gt.or(cfg.paths.gt.clone()).map(read_labels).transpose()?;
            let m = feature_stage(&report.candidates, &image, &scan_id, &cfg.radiomics, gt.as_ref())?;
            create_dir_all(&out)?;
            m.write_csv(out.join(outputs::FEATURES))?;
            println!("{} rows x {} features", m.n_rows(), m.n_cols());
        }
        Command::SelectFeatures { features } => {
            let m = read_matrices(&features)?;
            let report = select_features(&m, &cfg.selection, &cfg.forest_params(), cfg.seed)?;
            create_dir_all(&out)?;
            write_json(out.join(SELECTION_FILE), &report)?;
            println!("selected: {}", report.selected_top_k.join(", "));
        }
        Command::TrainClassifier { features, selection } => {
            let m = read_matrices(&features)?;
            let params = cfg.forest_params();
            let report: FeatureSelectionReport = match selection {
                Some(p) => read_json(p)?,
                None => select_features(&m, &cfg.selection, &params, cfg.seed)?,
            };
            let bundle = train_region_bundle(&m, &report.selected_top_k, &params, cfg.fallback)?;
            create_dir_all(&out)?;
            write_json(out.join(SELECTION_FILE), &report)?;
            let path = cfg.paths.model.clone().unwrap_or_else(|| out.join(MODEL_FILE));
            save_model(&bundle, &path)?;
            let regions: Vec<String> = bundle.models.keys().map(|r| r.to_string()).collect();
            println!("models for {} -> {}", regions.join(", "), path.display());
        }
        Command::Classify {
            candidates,
            components,
            features,
            model,
            decision_threshold,
        } => {
            let threshold = decision_threshold.unwrap_or(cfg.decision_threshold);
            let mut report = CandidateReport::read(out_or(&candidates, &out, outputs::CANDIDATES))?;
            let comps = read_labels(out_or(&components, &out, outputs::COMPONENTS))?;
            report.attach_voxels(&comps)?;
            let matrix = FeatureMatrix::read_csv(out_or(&features, &out, outputs::FEATURES))?;
            let g = comps.geometry();
            let mask = if cfg.classify {
                let bundle = load_model(need(model, cfg.paths.model.as_ref(), "model")?)?;
                let scan_id = match matrix.rows().first() {
                    Some(r) => r.scan_id.clone(),
                    None => String::new(),
                };
                let c = classify_candidates(&report.candidates, &matrix, &scan_id, &bundle, threshold, g)?;
                let kept = c.kept_ids().len();
                write_json(
                    out.join(outputs::CLASSIFICATION),
                    &ClassificationReport {
                        decision_threshold: threshold,
                        fallback: bundle.fallback,
                        decisions: c.decisions,
                    },
                )?;
                println!("kept {kept} of {} candidates", report.candidates.len());
                c.mask
            } else {
                candidates_mask(g, &report.candidates)?
            };
            write_volume(&mask, out.join(outputs::FINAL_MASK))?;
        }
        Command::Evaluate {
            pred,
            gt,
            partition,
            scan_id,
            study,
        } => {
            create_dir_all(&out)?;
            if !study.is_empty() {
                let mut methods = Vec::new();
                for spec in &study {
                    let (name, files) = spec
                        .split_once('=')
                        .ok_or_else(|| Error::Config(format!("--study expects METHOD=files, got `{spec}`")))?;
                    let scans = files
                        .split(',')
                        .map(|f| read_json::<ScanMetrics>(f.trim()))
                        .collect::<Result<Vec<_>>>()?;
                    methods.push((name.to_string(), scans));
                }
                let report = build_study_report(methods)?;
                report.write_json(out.join(STUDY_FILE))?;
                print!("{}", report.to_table());
                return Ok(());
            }
            let pred = read_labels(out_or(&pred, &out, outputs::FINAL_MASK))?;
            let gt = read_labels(need(gt, cfg.paths.gt.as_ref(), "gt")?)?;
            let partition = read_json(out_or(&partition, &out, outputs::PARTITION))?;
            let id = scan_id.or(cfg.paths.scan_id.clone()).unwrap_or_else(|| "scan".into());
            let m = evaluate_run(&id, &pred, &gt, &partition)?;
            write_json(out.join(outputs::METRICS), &m)?;
            println!(
                "{id}: DSC {:.4}  VOE {:.4}  ARVD {:.4}  F1 {:.4}  (TP {} FP {} FN {})",
                m.dsc, m.voe, m.arvd, m.f1, m.tp, m.fp, m.fn_count
            );
        }
        Command::Simulate {
            phantom,
            count,
            noiseless,
        } => {
            let mut pc: PhantomConfig = match phantom {
                Some(p) => read_json(p).map_err(|e| Error::Config(e.to_string()))?,
                None => PhantomConfig::default(),
            };
            if let Some(s) = cli.global.seed {
                pc.seed = s;
            }
            if noiseless {
                pc = pc.noiseless();
            }
            pc.validate().map_err(|e| Error::Config(e.to_string()))?;
            for i in 0..count {
                let c = PhantomConfig {
                    seed: pc.seed + i,
                    ..pc.clone()
                };
                let dir = if count == 1 {
                    out.clone()
                } else {
                    out.join(format!("phantom_{:04}", c.seed))
                };
                let bundle = generate_phantom(&c)?;
                bundle.write(&dir)?;
                println!(
                    "{}: {} tumors, {} fp blobs",
                    dir.display(),
                    bundle.manifest.tumors.len(),
                    bundle.manifest.fp_blobs.len()
                );
            }
        }
        Command::Run => {
            let runs = if cfg.batch.is_empty() {
                vec![run_pipeline(&cfg)?]
            } else {
                run_batch(&cfg)?
            };
            for r in &runs {
                let kept = r.final_mask.count_nonzero();
                match &r.metrics {
                    Some(m) => println!(
                        "{}: {} candidates, DSC {:.4}, F1 {:.4}",
                        r.manifest.scan_id,
                        r.candidates.candidates.len(),
                        m.dsc,
                        m.f1
                    ),
                    None => println!(
                        "{}: {} candidates, {kept} mask voxels",
                        r.manifest.scan_id,
                        r.candidates.candidates.len()
                    ),
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("NF_PIPELINE_LOG", "warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Config => 2,
                ErrorClass::Data => 3,
                ErrorClass::Stage => 4,
            })
        }
    }
}
