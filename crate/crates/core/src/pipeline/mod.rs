//! Dataset I/O and the batch driver: pose-tensor files, source datasets,
//! run configuration, manifests, the end-to-end runner and training-set
//! export.

mod config;
mod export;
mod manifest;
mod run;
mod source;
pub mod tensor;

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

pub use config::{DetectorConfig, GeneratorConfig, PipelineConfig};
pub use export::{
    export_training_set, load_regime_sequences, load_training_set, run_regimes, ExportIndex,
    ExportPair, EXPORT_INDEX,
};
pub use manifest::{
    FileRef, Manifest, ManifestSample, SampleFiles, SampleStatus, SourceDatasetMeta,
    ValidationIssue, MANIFEST_FILE, MANIFEST_VERSION, REPORTS_FILE,
};
pub use run::{run_pipeline, RunSummary};
pub use source::{CameraSpec, LoadedDataset, MotionEntry, SceneEntry, SourceDataset, SOURCE_VERSION};

use crate::fusion::FusionError;
use crate::geometry::GeometryError;
use crate::lifter::{InputKind, LifterError};
use crate::quality::QualityError;
use crate::skeleton::SkeletonError;
use crate::synth::SynthError;
use tensor::TensorError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid source dataset {path}: {reason}")]
    Source { path: PathBuf, reason: String },
    #[error("all {0} samples failed")]
    AllFailed(usize),
    #[error("{failed} of {attempted} samples failed")]
    PartialFailure { failed: usize, attempted: usize },
    #[error("manifest validation failed with {} issue(s); first: {}", .0.len(), .0[0])]
    Validation(Vec<ValidationIssue>),
    #[error("sample {sample} has no {channel} channel")]
    MissingChannel { sample: String, channel: InputKind },
    #[error("sample `{0}` not found in manifest")]
    UnknownSample(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Skeleton(#[from] SkeletonError),
    #[error(transparent)]
    Quality(#[from] QualityError),
    #[error(transparent)]
    Lifter(#[from] LifterError),
    #[error("malformed {path}: {reason}")]
    Parse { path: PathBuf, reason: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub(crate) fn parse_err(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Parse {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| parse_err(path, e))
}

pub fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| parse_err(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path).map_err(io_err(path))?))
}

/// File-system-safe directory name for a sample id.
pub fn sample_dir_name(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-' | '+') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// `path` relative to `root`, with `/` separators.
pub(crate) fn relative(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path);
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}
