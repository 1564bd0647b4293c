//! Python bindings: volumes, the post-processing stages, radiomics, the
//! region classifier bundle, evaluation statistics and the phantom generator.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use serde::Serialize;

use nfseg_core::anatomy::{AnatomicalRegion, BodyRegionPartition, LabelMappingConfig};
use nfseg_core::candidates::{self, ThresholdPolicy};
use nfseg_core::evaluation;
use nfseg_core::forest::{self, RegionClassifierBundle};
use nfseg_core::phantom::{self, PhantomConfig};
use nfseg_core::pipeline::{self, PipelineConfig};
use nfseg_core::radiomics::{self, FeatureVector, RadiomicsParams};
use nfseg_core::volume::{self, binary_dictionary, nifti, VolumeGeometry};
use nfseg_core::{Error, ErrorClass};

create_exception!(nfseg, NfsegError, PyException);
create_exception!(nfseg, ConfigError, NfsegError);
create_exception!(nfseg, DataError, NfsegError);
create_exception!(nfseg, StageError, NfsegError);

fn err(e: Error) -> PyErr {
    let msg = e.to_string();
    match e.class() {
        ErrorClass::Config => ConfigError::new_err(msg),
        ErrorClass::Data => DataError::new_err(msg),
        ErrorClass::Stage => StageError::new_err(msg),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for nfseg_core::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(err)
    }
}

/// Serializable value to plain Python objects through the json module.
fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| NfsegError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py<T: serde::de::DeserializeOwned>(value: &Bound<'_, PyAny>) -> PyResult<T> {
    let py = value.py();
    let text: String = py.import("json")?.call_method1("dumps", (value,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| ConfigError::new_err(e.to_string()))
}

fn geometry(dims: [usize; 3], spacing: [f64; 3]) -> PyResult<VolumeGeometry> {
    VolumeGeometry::canonical(dims, spacing).py()
}

fn region(name: &str) -> PyResult<AnatomicalRegion> {
    name.parse().py()
}

fn policy(threshold: &str, tau: Option<f64>) -> PyResult<ThresholdPolicy> {
    match (threshold, tau) {
        ("high", None) => Ok(ThresholdPolicy::high()),
        ("low", None) => Ok(ThresholdPolicy::low()),
        ("custom", Some(t)) => ThresholdPolicy::custom(t).py(),
        _ => Err(ConfigError::new_err(format!(
            "threshold must be high, low, or custom with tau (got {threshold}, tau {tau:?})"
        ))),
    }
}

/// Integer label volume in canonical orientation, flat index `(i*ny + j)*nz + k`.
#[pyclass(name = "LabelVolume", module = "nfseg", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyLabelVolume(volume::LabelVolume);

#[pymethods]
impl PyLabelVolume {
    #[new]
    #[pyo3(signature = (dims, spacing, data, labels=None))]
    fn new(dims: [usize; 3], spacing: [f64; 3], data: Vec<u32>, labels: Option<BTreeMap<u32, String>>) -> PyResult<Self> {
        let dictionary = labels.unwrap_or_else(|| {
            let mut d = binary_dictionary();
            for &v in &data {
                d.entry(v).or_insert_with(|| format!("label_{v}"));
            }
            d
        });
        Ok(Self(volume::LabelVolume::new(geometry(dims, spacing)?, data, dictionary).py()?))
    }

    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(Self(nifti::read_labels(path).py()?))
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        nifti::write_volume(&self.0, path).py()
    }

    #[getter]
    fn dims(&self) -> [usize; 3] {
        self.0.geometry().dims()
    }

    #[getter]
    fn spacing(&self) -> [f64; 3] {
        self.0.geometry().spacing()
    }

    #[getter]
    fn data(&self) -> Vec<u32> {
        self.0.data().to_vec()
    }

    #[getter]
    fn labels(&self) -> BTreeMap<u32, String> {
        self.0.dictionary().clone()
    }

    fn count_nonzero(&self) -> usize {
        self.0.count_nonzero()
    }

    fn __len__(&self) -> usize {
        self.0.data().len()
    }

    fn __repr__(&self) -> String {
        format!(
            "LabelVolume(dims={:?}, spacing={:?}, labels={})",
            self.dims(),
            self.spacing(),
            self.0.dictionary().len()
        )
    }
}

macro_rules! float_volume {
    ($py:ident, $inner:ty, $name:literal, $read:path) => {
        #[pyclass(name = $name, module = "nfseg", frozen, skip_from_py_object)]
        #[derive(Clone)]
        struct $py($inner);

        #[pymethods]
        impl $py {
            #[new]
            fn new(dims: [usize; 3], spacing: [f64; 3], data: Vec<f32>) -> PyResult<Self> {
                Ok(Self(<$inner>::new(geometry(dims, spacing)?, data).py()?))
            }

            #[staticmethod]
            fn read(path: PathBuf) -> PyResult<Self> {
                Ok(Self($read(path).py()?))
            }

            fn write(&self, path: PathBuf) -> PyResult<()> {
                nifti::write_volume(&self.0, path).py()
            }

            #[getter]
            fn dims(&self) -> [usize; 3] {
                self.0.geometry().dims()
            }

            #[getter]
            fn spacing(&self) -> [f64; 3] {
                self.0.geometry().spacing()
            }

            #[getter]
            fn data(&self) -> Vec<f32> {
                self.0.data().to_vec()
            }

            fn __len__(&self) -> usize {
                self.0.data().len()
            }

            fn __repr__(&self) -> String {
                format!(concat!($name, "(dims={:?}, spacing={:?})"), self.dims(), self.spacing())
            }
        }
    };
}

float_volume!(PyImageVolume, volume::ImageVolume, "ImageVolume", nifti::read_image);
float_volume!(PyConfidenceVolume, volume::ConfidenceVolume, "ConfidenceVolume", nifti::read_confidence);

/// Per-region random forests with the fallback policy for unmodeled regions.
#[pyclass(name = "ClassifierBundle", module = "nfseg", frozen, skip_from_py_object)]
struct PyBundle(RegionClassifierBundle);

#[pymethods]
impl PyBundle {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self(forest::load_model(path).py()?))
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        forest::save_model(&self.0, path).py()
    }

    #[getter]
    fn regions(&self) -> Vec<String> {
        self.0.models.keys().map(|r| r.name().to_string()).collect()
    }

    fn feature_names(&self, region_name: &str) -> PyResult<Option<Vec<String>>> {
        Ok(self.0.model(region(region_name)?).map(|m| m.feature_names.clone()))
    }

    /// Positive-class probability, or None when the region has no model.
    fn predict(&self, region_name: &str, features: BTreeMap<String, f64>) -> PyResult<Option<f64>> {
        let Some(model) = self.0.model(region(region_name)?) else {
            return Ok(None);
        };
        let fv = FeatureVector::new(features.into_iter().collect()).py()?;
        forest::predict_proba(model, &fv).py().map(Some)
    }

    fn importances(&self, py: Python<'_>, region_name: &str) -> PyResult<Option<Py<PyAny>>> {
        match self.0.model(region(region_name)?) {
            Some(m) => {
                let map: BTreeMap<String, f64> = forest::importances(m).iter().map(|(k, v)| (k.to_string(), v)).collect();
                Ok(Some(to_py(py, &map)?.unbind()))
            }
            None => Ok(None),
        }
    }
}

#[pyfunction]
fn overlap_metrics<'py>(py: Python<'py>, pred: &PyLabelVolume, gt: &PyLabelVolume) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &evaluation::overlap_metrics(&pred.0, &gt.0).py()?)
}

/// 26-connected components; returns the id volume and the component count.
#[pyfunction]
fn label_components(mask: &PyLabelVolume) -> PyResult<(PyLabelVolume, u32)> {
    let c = candidates::label_components(&mask.0).py()?;
    Ok((PyLabelVolume(c.labels), c.count))
}

#[pyfunction]
fn fuse_ensemble(members: Vec<PyRef<'_, PyConfidenceVolume>>) -> PyResult<PyConfidenceVolume> {
    let members: Vec<_> = members.iter().map(|m| m.0.clone()).collect();
    Ok(PyConfidenceVolume(candidates::fuse_ensemble(&members).py()?))
}

#[pyfunction]
#[pyo3(signature = (confidence, threshold="high", tau=None))]
fn binarize(confidence: &PyConfidenceVolume, threshold: &str, tau: Option<f64>) -> PyResult<PyLabelVolume> {
    Ok(PyLabelVolume(candidates::binarize(&confidence.0, &policy(threshold, tau)?).py()?))
}

/// Refined anatomy, prior with the high-risk zone, landmarks and mapping report.
#[pyfunction]
#[pyo3(signature = (anatomy_raw, mapping=None, zone_radius_mm=nfseg_core::anatomy::DEFAULT_ZONE_RADIUS_MM))]
fn refine_anatomy<'py>(
    py: Python<'py>,
    anatomy_raw: &PyLabelVolume,
    mapping: Option<PathBuf>,
    zone_radius_mm: f64,
) -> PyResult<(PyLabelVolume, PyLabelVolume, Bound<'py, PyAny>, Bound<'py, PyAny>)> {
    let mapping = match mapping {
        Some(p) => LabelMappingConfig::from_file(p).py()?,
        None => LabelMappingConfig::default(),
    };
    let a = pipeline::anatomy_stage(&anatomy_raw.0, &mapping, zone_radius_mm).py()?;
    Ok((PyLabelVolume(a.refined), PyLabelVolume(a.prior), to_py(py, &a.partition)?, to_py(py, &a.report)?))
}

/// Fuse, threshold and label the ensemble; returns the candidate list and
/// the component id volume the candidate ids refer to.
#[pyfunction]
#[pyo3(signature = (members, partition, threshold="high", tau=None, min_voxels=candidates::DEFAULT_MIN_VOXELS))]
fn extract_candidates<'py>(
    py: Python<'py>,
    members: Vec<PyRef<'_, PyConfidenceVolume>>,
    partition: &Bound<'py, PyAny>,
    threshold: &str,
    tau: Option<f64>,
    min_voxels: usize,
) -> PyResult<(Bound<'py, PyAny>, PyLabelVolume)> {
    let members: Vec<_> = members.iter().map(|m| m.0.clone()).collect();
    let partition: BodyRegionPartition = from_py(partition)?;
    let stage = pipeline::candidate_stage(&members, &policy(threshold, tau)?, min_voxels, &partition).py()?;
    Ok((to_py(py, &stage.candidates)?, PyLabelVolume(stage.components.labels)))
}

/// Radiomics of the nonzero voxels of `mask` over `image`.
#[pyfunction]
#[pyo3(signature = (mask, image, bins=32, distance=1))]
fn extract_features(mask: &PyLabelVolume, image: &PyImageVolume, bins: usize, distance: usize) -> PyResult<BTreeMap<String, f64>> {
    let g = mask.0.geometry();
    let voxels: Vec<[usize; 3]> = (0..g.len()).filter(|&i| mask.0.data()[i] != 0).map(|i| g.coords(i)).collect();
    let fv = radiomics::extract_features(&voxels, &image.0, &RadiomicsParams { bins, distance }).py()?;
    Ok(fv.iter().map(|(k, v)| (k.to_string(), v)).collect())
}

#[pyfunction]
fn feature_catalog() -> Vec<String> {
    radiomics::feature_catalog()
}

#[pyfunction]
#[pyo3(signature = (a, b, n_comparisons=1))]
fn wilcoxon_signed_rank<'py>(py: Python<'py>, a: Vec<f64>, b: Vec<f64>, n_comparisons: usize) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &evaluation::wilcoxon_signed_rank(&a, &b, n_comparisons).py()?)
}

/// Pearson r and its two-sided p-value.
#[pyfunction]
fn pearson_r(x: Vec<f64>, y: Vec<f64>) -> PyResult<(f64, f64)> {
    evaluation::pearson_r(&x, &y).py()
}

/// Write a phantom bundle to `output_dir`; returns its manifest.
#[pyfunction]
#[pyo3(signature = (output_dir, config=None))]
fn simulate<'py>(py: Python<'py>, output_dir: PathBuf, config: Option<&Bound<'py, PyAny>>) -> PyResult<Bound<'py, PyAny>> {
    let cfg: PhantomConfig = match config {
        Some(c) => from_py(c)?,
        None => PhantomConfig::default(),
    };
    let manifest = py.detach(|| phantom::simulate(&cfg, &output_dir)).py()?;
    to_py(py, &manifest)
}

fn load_config(config: &Bound<'_, PyAny>) -> PyResult<PipelineConfig> {
    if let Ok(path) = config.extract::<PathBuf>() {
        return PipelineConfig::load(path).py();
    }
    from_py(config)
}

/// Run the pipeline for the scan or batch in `config` (a path or a dict).
/// Returns one summary per scan with metrics, partition and kept ids.
#[pyfunction]
#[pyo3(signature = (config, output_dir=None, classify=None))]
fn run_pipeline<'py>(
    py: Python<'py>,
    config: &Bound<'py, PyAny>,
    output_dir: Option<PathBuf>,
    classify: Option<bool>,
) -> PyResult<Bound<'py, PyAny>> {
    let mut cfg = load_config(config)?;
    if let Some(o) = output_dir {
        cfg.paths.output_dir = o;
    }
    if let Some(c) = classify {
        cfg.classify = c;
    }
    let runs = py
        .detach(|| {
            if cfg.batch.is_empty() {
                pipeline::run_pipeline(&cfg).map(|r| vec![r])
            } else {
                pipeline::run_batch(&cfg)
            }
        })
        .py()?;
    #[derive(Serialize)]
    struct Summary<'a> {
        scan_id: &'a str,
        partition: &'a BodyRegionPartition,
        candidates: usize,
        kept: Vec<u32>,
        metrics: &'a Option<evaluation::ScanMetrics>,
    }
    let summaries: Vec<Summary> = runs
        .iter()
        .map(|r| Summary {
            scan_id: &r.manifest.scan_id,
            partition: &r.partition,
            candidates: r.candidates.candidates.len(),
            kept: r.decisions.iter().flatten().filter(|d| d.kept).map(|d| d.candidate_id).collect(),
            metrics: &r.metrics,
        })
        .collect();
    to_py(py, &summaries)
}

/// Feature selection plus per-region forests from feature tables.
#[pyfunction]
#[pyo3(signature = (feature_tables, seed=0, n_trees=None))]
fn train_classifier<'py>(
    py: Python<'py>,
    feature_tables: Vec<PathBuf>,
    seed: u64,
    n_trees: Option<usize>,
) -> PyResult<(PyBundle, Bound<'py, PyAny>)> {
    let mut cfg = PipelineConfig {
        seed,
        ..PipelineConfig::default()
    };
    if let Some(n) = n_trees {
        cfg.forest.n_trees = n;
    }
    let (selection, bundle) = py
        .detach(|| {
            let tables = feature_tables
                .iter()
                .map(radiomics::FeatureMatrix::read_csv)
                .collect::<nfseg_core::Result<Vec<_>>>()?;
            pipeline::train_stage(&radiomics::FeatureMatrix::concat(&tables)?, &cfg)
        })
        .py()?;
    Ok((PyBundle(bundle), to_py(py, &selection)?))
}

#[pymodule]
pub fn nfseg(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("NfsegError", py.get_type::<NfsegError>())?;
    m.add("ConfigError", py.get_type::<ConfigError>())?;
    m.add("DataError", py.get_type::<DataError>())?;
    m.add("StageError", py.get_type::<StageError>())?;
    m.add_class::<PyLabelVolume>()?;
    m.add_class::<PyImageVolume>()?;
    m.add_class::<PyConfidenceVolume>()?;
    m.add_class::<PyBundle>()?;
    m.add_function(wrap_pyfunction!(overlap_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(label_components, m)?)?;
    m.add_function(wrap_pyfunction!(fuse_ensemble, m)?)?;
    m.add_function(wrap_pyfunction!(binarize, m)?)?;
    m.add_function(wrap_pyfunction!(refine_anatomy, m)?)?;
    m.add_function(wrap_pyfunction!(extract_candidates, m)?)?;
    m.add_function(wrap_pyfunction!(extract_features, m)?)?;
    m.add_function(wrap_pyfunction!(feature_catalog, m)?)?;
    m.add_function(wrap_pyfunction!(wilcoxon_signed_rank, m)?)?;
    m.add_function(wrap_pyfunction!(pearson_r, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(train_classifier, m)?)?;
    Ok(())
}
