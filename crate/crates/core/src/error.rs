use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Stage,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed NIfTI header: {0}")]
    MalformedHeader(String),

    #[error("unsupported NIfTI datatype code {0}")]
    UnsupportedDatatype(i16),

    #[error("non-integral label value {0} in label volume")]
    NonIntegralLabel(f64),

    #[error("confidence out of range: {0}")]
    ConfidenceOutOfRange(f64),

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),

    #[error("invalid volume: {0}")]
    InvalidVolume(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no foreground labels")]
    NoForegroundLabels,

    #[error("label mapping: {0}")]
    Mapping(String),

    #[error("no seed structures (neither lungs nor spine present)")]
    NoSeedStructures,

    #[error("missing anatomical structure: {0}")]
    MissingStructure(&'static str),

    #[error("empty candidate")]
    EmptyCandidate,

    #[error("no co-occurrence pairs")]
    NoCooccurrencePairs,

    #[error("no features survive")]
    NoFeaturesSurvive,

    #[error("feature matrix: {0}")]
    FeatureMatrix(String),

    #[error("single-class training labels")]
    SingleClass,

    #[error("feature mismatch: {0}")]
    FeatureMismatch(String),

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("statistics: {0}")]
    Statistics(String),

    #[error("phantom: {0}")]
    Phantom(String),

    #[error("config: {0}")]
    Config(String),

    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// Classifies by root cause; a stage wrapper defers to what it wraps.
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::Mapping(_) => ErrorClass::Config,
            Error::Io { .. }
            | Error::MalformedHeader(_)
            | Error::UnsupportedDatatype(_)
            | Error::NonIntegralLabel(_)
            | Error::ConfidenceOutOfRange(_)
            | Error::InvalidGeometry(_)
            | Error::GeometryMismatch(_)
            | Error::InvalidVolume(_)
            | Error::Json { .. }
            | Error::Csv(_)
            | Error::ModelFormat(_)
            | Error::FeatureMismatch(_)
            | Error::MissingStructure(_)
            | Error::NoSeedStructures => ErrorClass::Data,
            Error::Stage { source, .. } => source.class(),
            _ => ErrorClass::Stage,
        }
    }
}

pub trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.in_stage(stage))
    }
}
