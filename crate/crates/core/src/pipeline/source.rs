//! Source dataset descriptors.
//!
//! A source dataset is a JSON file listing scenes (reference frames, camera,
//! person placement) and motions (world-frame 3D pose tensors). Relative
//! paths resolve against the descriptor's directory.
//!
//! ```json
//! {
//!   "dataset_id": "studio",
//!   "schema": "h36m-17",
//!   "handedness": { "flip_axis": null },
//!   "scenes": [{
//!     "id": "s0",
//!     "reference_frames": ["scenes/s0/ref.png"],
//!     "camera": "scenes/s0/camera.json",
//!     "root_position": [0, 0, 900],
//!     "facing": [0, -1, 0],
//!     "ground_height": 0
//!   }],
//!   "motions": [{ "id": "m0", "file": "motions/m0.pseq" }]
//! }
//! ```

use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::tensor::read_pose_with;
use super::{read_json, PipelineError, Result};
use crate::fusion::{MotionSample, SceneSample};
use crate::geometry::{CameraModel, HandednessCorrection};
use crate::skeleton::{FrameTag, JointSchema};

pub const SOURCE_VERSION: u32 = 1;

/// A camera given inline or as a path to a camera JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CameraSpec {
    Inline(CameraModel),
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneEntry {
    pub id: String,
    pub reference_frames: Vec<PathBuf>,
    pub camera: CameraSpec,
    pub root_position: [f64; 3],
    pub facing: [f64; 3],
    #[serde(default)]
    pub ground_height: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionEntry {
    pub id: String,
    pub file: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceDataset {
    #[serde(default = "default_version")]
    pub version: u32,
    pub dataset_id: String,
    /// Built-in schema name or path to a schema JSON file.
    pub schema: String,
    #[serde(default)]
    pub handedness: HandednessCorrection,
    #[serde(default)]
    pub scenes: Vec<SceneEntry>,
    #[serde(default)]
    pub motions: Vec<MotionEntry>,
}

fn default_version() -> u32 {
    SOURCE_VERSION
}

/// A parsed source dataset with its samples materialized.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub path: PathBuf,
    pub descriptor: SourceDataset,
    pub schema: Arc<JointSchema>,
    pub scenes: Vec<SceneSample>,
    pub motions: Vec<MotionSample>,
}

impl SourceDataset {
    pub fn load(path: &Path) -> Result<LoadedDataset> {
        let descriptor: SourceDataset = read_json(path)?;
        descriptor.materialize(path)
    }

    fn materialize(self, path: &Path) -> Result<LoadedDataset> {
        let base = path.parent().unwrap_or(Path::new("."));
        let fail = |reason: String| PipelineError::Source {
            path: path.to_path_buf(),
            reason,
        };
        if self.version != SOURCE_VERSION {
            return Err(fail(format!("unsupported version {}", self.version)));
        }
        let schema_ref = if JointSchema::builtin(&self.schema).is_some() {
            self.schema.clone()
        } else {
            base.join(&self.schema).display().to_string()
        };
        let schema = Arc::new(JointSchema::resolve(&schema_ref)?);
        let mut scenes = Vec::with_capacity(self.scenes.len());
        for s in &self.scenes {
            let camera = match &s.camera {
                CameraSpec::Inline(c) => c.clone(),
                CameraSpec::File(p) => CameraModel::from_file(&base.join(p))?,
            };
            let facing = Vector3::from(s.facing);
            let norm = facing.norm();
            if !(norm.is_finite() && norm > 0.0) {
                return Err(fail(format!("scene {}: zero facing", s.id)));
            }
            scenes.push(SceneSample::new(
                self.dataset_id.clone(),
                s.id.clone(),
                s.reference_frames.iter().map(|p| base.join(p)).collect(),
                camera,
                Vector3::from(s.root_position),
                facing / norm,
                s.ground_height,
            )?);
        }
        let mut motions = Vec::with_capacity(self.motions.len());
        for m in &self.motions {
            let file = base.join(&m.file);
            let s = schema.clone();
            let pose = read_pose_with(&file, move |name| (name == s.name()).then(|| s.clone()))?
                .into_3d()?;
            if pose.frame_tag() != FrameTag::World {
                return Err(fail(format!("motion {} is not world-frame", m.id)));
            }
            motions.push(MotionSample::new(
                self.dataset_id.clone(),
                m.id.clone(),
                pose,
                self.handedness,
            )?);
        }
        Ok(LoadedDataset {
            path: path.to_path_buf(),
            descriptor: self,
            schema,
            scenes,
            motions,
        })
    }
}
