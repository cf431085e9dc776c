//! Corpus manifest: the JSON index of a pipeline run.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::tensor::read_pose_with;
use super::{read_json, sha256_file, write_json, PipelineError, Result};
use crate::fusion::{Domain, FusedSample, SampleRef};
use crate::geometry::{CameraModel, HandednessCorrection, CONVENTION};
use crate::skeleton::{JointSchema, SchemaMapping};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const REPORTS_FILE: &str = "reports.jsonl";

/// Largest tolerated gap between stored guidance and guidance re-derived
/// from stored ground truth, after both are rounded to `f32`.
const GUIDANCE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRef {
    /// Relative to the manifest directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleFiles {
    pub camera: FileRef,
    pub gt_3d_world: FileRef,
    pub gt_3d_camera: FileRef,
    pub guidance_2d: FileRef,
    pub detected_2d: FileRef,
    /// Directory holding `frame_%06d.png`.
    pub frames_dir: String,
    pub frames: Vec<FileRef>,
}

impl SampleFiles {
    pub fn all(&self) -> impl Iterator<Item = &FileRef> {
        [
            &self.camera,
            &self.gt_3d_world,
            &self.gt_3d_camera,
            &self.guidance_2d,
            &self.detected_2d,
        ]
        .into_iter()
        .chain(self.frames.iter())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleStatus {
    /// Passed the quality filter.
    Kept,
    /// Completed but scored outside the kept fraction.
    Rejected,
    /// Failed during fusion, generation or detection.
    Failed,
}

impl fmt::Display for SampleStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SampleStatus::Kept => "kept",
            SampleStatus::Rejected => "rejected",
            SampleStatus::Failed => "failed",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestSample {
    pub id: String,
    pub scene_ref: SampleRef,
    pub motion_ref: SampleRef,
    pub domain: Domain,
    pub status: SampleStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quality_score: Option<f64>,
    #[serde(default)]
    pub frames: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub files: Option<SampleFiles>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceDatasetMeta {
    pub dataset_id: String,
    pub handedness: HandednessCorrection,
    pub schema: String,
    pub scenes: usize,
    pub motions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub convention: String,
    /// Seconds since the Unix epoch; the only non-deterministic field.
    pub created_unix: u64,
    pub seed: u64,
    pub filter_fraction: f64,
    pub source_datasets: Vec<SourceDatasetMeta>,
    /// Motion (3D) and guidance (2D) schema definitions.
    pub motion_schema: JointSchema,
    pub guidance_schema: JointSchema,
    /// Motion-to-guidance mapping in mapping-file form.
    pub guidance_mapping: serde_json::Value,
    /// Sorted by id.
    pub samples: Vec<ManifestSample>,
}

/// One problem found by [`Manifest::validate`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationIssue {
    /// Offending sample, or `None` for manifest-level problems.
    pub sample: Option<String>,
    pub problem: String,
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.sample {
            Some(s) => write!(f, "sample {s}: {}", self.problem),
            None => write!(f, "{}", self.problem),
        }
    }
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    /// Copy with the timestamp cleared, for run-to-run comparison.
    pub fn without_timestamp(&self) -> Self {
        Manifest {
            created_unix: 0,
            ..self.clone()
        }
    }

    pub fn count(&self, status: SampleStatus) -> usize {
        self.samples.iter().filter(|s| s.status == status).count()
    }

    pub fn kept(&self) -> impl Iterator<Item = &ManifestSample> {
        self.samples.iter().filter(|s| s.status == SampleStatus::Kept)
    }

    pub fn sample(&self, id: &str) -> Result<&ManifestSample> {
        self.samples
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| PipelineError::UnknownSample(id.to_string()))
    }

    fn resolver(&self) -> impl Fn(&str) -> Option<Arc<JointSchema>> {
        let motion = Arc::new(self.motion_schema.clone());
        let guidance = Arc::new(self.guidance_schema.clone());
        move |name| {
            if name == motion.name() {
                Some(motion.clone())
            } else if name == guidance.name() {
                Some(guidance.clone())
            } else {
                JointSchema::builtin(name).map(Arc::new)
            }
        }
    }

    pub fn mapping(&self) -> Result<SchemaMapping> {
        Ok(SchemaMapping::from_json(
            &self.guidance_mapping.to_string(),
            Arc::new(self.motion_schema.clone()),
            Arc::new(self.guidance_schema.clone()),
        )?)
    }

    /// Reloads a completed sample from disk.
    pub fn load_sample(&self, root: &Path, sample: &ManifestSample) -> Result<FusedSample> {
        let files = sample.files.as_ref().ok_or_else(|| PipelineError::MissingChannel {
            sample: sample.id.clone(),
            channel: crate::lifter::InputKind::Gt,
        })?;
        let resolve = self.resolver();
        let read = |f: &FileRef| read_pose_with(&root.join(&f.path), &resolve);
        let camera = CameraModel::from_file(&root.join(&files.camera.path))?;
        Ok(FusedSample {
            id: sample.id.clone(),
            scene_ref: sample.scene_ref.clone(),
            motion_ref: sample.motion_ref.clone(),
            camera,
            gt_3d_world: read(&files.gt_3d_world)?.into_3d()?,
            gt_3d_camera: read(&files.gt_3d_camera)?.into_3d()?,
            guidance_2d: read(&files.guidance_2d)?.into_2d()?,
            generated_frames_path: Some(root.join(&files.frames_dir)),
            detected_2d: Some(read(&files.detected_2d)?.into_2d()?),
            quality_score: sample.quality_score,
        })
    }

    /// Checks ids, statuses, file presence and hashes, and for kept samples
    /// the guidance-consistency invariant. Every issue names its sample.
    pub fn validate(&self, root: &Path) -> Vec<ValidationIssue> {
        let mut issues = Vec::new();
        let mut global = |problem: String| {
            issues.push(ValidationIssue {
                sample: None,
                problem,
            })
        };
        if self.version != MANIFEST_VERSION {
            global(format!("unsupported manifest version {}", self.version));
        }
        if self.convention != CONVENTION {
            global(format!("unsupported convention `{}`", self.convention));
        }
        let mapping = match self.mapping() {
            Ok(m) => Some(m),
            Err(e) => {
                global(format!("bad guidance mapping: {e}"));
                None
            }
        };
        let mut seen = HashSet::new();
        for s in &self.samples {
            let mut push = |problem: String| {
                issues.push(ValidationIssue {
                    sample: Some(s.id.clone()),
                    problem,
                })
            };
            if !seen.insert(s.id.as_str()) {
                push("duplicate sample id".into());
            }
            match (s.status, &s.files) {
                (SampleStatus::Failed, _) => {
                    if s.reason.is_none() {
                        push("failed sample without a reason".into());
                    }
                    continue;
                }
                (_, None) => {
                    push(format!("{} sample lists no files", s.status));
                    continue;
                }
                (_, Some(_)) if s.quality_score.is_none() => push("missing quality score".into()),
                _ => {}
            }
            let files = s.files.as_ref().expect("checked above");
            let mut intact = true;
            for f in files.all() {
                let path = root.join(&f.path);
                if !path.exists() {
                    push(format!("missing file {}", f.path));
                    intact = false;
                    continue;
                }
                match sha256_file(&path) {
                    Ok(h) if h == f.sha256 => {}
                    Ok(_) => {
                        push(format!("hash mismatch for {}", f.path));
                        intact = false;
                    }
                    Err(e) => {
                        push(format!("unreadable {}: {e}", f.path));
                        intact = false;
                    }
                }
            }
            if files.frames.len() != s.frames {
                push(format!("{} frames listed, {} expected", files.frames.len(), s.frames));
            }
            if s.status != SampleStatus::Kept || !intact {
                continue;
            }
            let Some(mapping) = &mapping else { continue };
            match self.guidance_gap(root, s, mapping) {
                Ok(gap) if gap <= GUIDANCE_TOLERANCE => {}
                Ok(gap) => push(format!("guidance deviates from ground truth by {gap:.3e} px")),
                Err(e) => push(format!("cannot reload: {e}")),
            }
        }
        issues
    }

    /// Largest gap between stored guidance and guidance re-derived from
    /// the stored world-frame ground truth, compared at `f32` precision.
    pub fn guidance_gap(&self, root: &Path, s: &ManifestSample, mapping: &SchemaMapping) -> Result<f64> {
        let sample = self.load_sample(root, s)?;
        let fresh = crate::fusion::make_guidance(&sample.gt_3d_world, &sample.camera, mapping)?;
        Ok(fresh
            .data()
            .iter()
            .zip(sample.guidance_2d.data())
            .flat_map(|(a, b)| [(a.x as f32 as f64 - b.x).abs(), (a.y as f32 as f64 - b.y).abs()])
            .fold(0.0, f64::max))
    }

    /// Fails with every issue when validation finds problems.
    pub fn ensure_valid(&self, root: &Path) -> Result<()> {
        let issues = self.validate(root);
        if issues.is_empty() {
            Ok(())
        } else {
            Err(PipelineError::Validation(issues))
        }
    }
}
