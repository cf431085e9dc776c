//! Lifter-ready corpus export and the regime harness over manifests.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::manifest::{Manifest, SampleFiles};
use super::tensor::read_pose_with;
use super::{io_err, read_json, sample_dir_name, write_json, PipelineError, Result};
use crate::lifter::{run_regimes_on, InputKind, RegimeSequence, RegimeTable};
use crate::skeleton::{JointSchema, Pose2DSequence, Pose3DSequence};

pub const EXPORT_INDEX: &str = "index.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportPair {
    pub id: String,
    /// 2D input tensor, relative to the export directory.
    pub input: String,
    /// Camera-frame 3D target tensor, relative to the export directory.
    pub target: String,
    pub frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportIndex {
    pub channel: InputKind,
    pub input_schema: JointSchema,
    pub output_schema: JointSchema,
    pub pairs: Vec<ExportPair>,
}

fn channel_file(files: &SampleFiles, channel: InputKind) -> &str {
    match channel {
        InputKind::Gt => &files.guidance_2d.path,
        InputKind::Hpe => &files.detected_2d.path,
    }
}

/// Copies the chosen 2D channel and the camera-frame 3D ground truth of
/// every kept sample into `out_dir` and writes `index.json`.
pub fn export_training_set(manifest_path: &Path, channel: InputKind, out_dir: &Path) -> Result<ExportIndex> {
    let manifest = Manifest::load(manifest_path)?;
    let root = manifest_path.parent().unwrap_or(Path::new("."));
    let kept: Vec<_> = manifest.kept().collect();
    for s in &kept {
        let present = s
            .files
            .as_ref()
            .is_some_and(|f| root.join(channel_file(f, channel)).is_file());
        if !present {
            return Err(PipelineError::MissingChannel {
                sample: s.id.clone(),
                channel,
            });
        }
    }
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut pairs = Vec::with_capacity(kept.len());
    for s in kept {
        let files = s.files.as_ref().expect("checked above");
        let stem = sample_dir_name(&s.id);
        let input = format!("{stem}.input.pseq");
        let target = format!("{stem}.target.pseq");
        let copy = |from: &str, to: &str| -> Result<()> {
            let src = root.join(from);
            fs::copy(&src, out_dir.join(to)).map_err(io_err(&src))?;
            Ok(())
        };
        copy(channel_file(files, channel), &input)?;
        copy(&files.gt_3d_camera.path, &target)?;
        pairs.push(ExportPair {
            id: s.id.clone(),
            input,
            target,
            frames: s.frames,
        });
    }
    let index = ExportIndex {
        channel,
        input_schema: manifest.guidance_schema.clone(),
        output_schema: manifest.motion_schema.clone(),
        pairs,
    };
    write_json(&out_dir.join(EXPORT_INDEX), &index)?;
    Ok(index)
}

fn resolver(index: &ExportIndex) -> impl Fn(&str) -> Option<Arc<JointSchema>> {
    let a = Arc::new(index.input_schema.clone());
    let b = Arc::new(index.output_schema.clone());
    move |name| {
        [&a, &b]
            .into_iter()
            .find(|s| s.name() == name)
            .cloned()
            .or_else(|| JointSchema::builtin(name).map(Arc::new))
    }
}

/// Loads an exported corpus as `(inputs, targets)` ready for `lifter::fit`.
pub fn load_training_set(dir: &Path) -> Result<(ExportIndex, Vec<Pose2DSequence>, Vec<Pose3DSequence>)> {
    let index: ExportIndex = read_json(&dir.join(EXPORT_INDEX))?;
    let resolve = resolver(&index);
    let mut inputs = Vec::with_capacity(index.pairs.len());
    let mut targets = Vec::with_capacity(index.pairs.len());
    for p in &index.pairs {
        inputs.push(read_pose_with(&dir.join(&p.input), &resolve)?.into_2d()?);
        targets.push(read_pose_with(&dir.join(&p.target), &resolve)?.into_3d()?);
    }
    Ok((index, inputs, targets))
}

/// Kept samples of a manifest with both 2D channels and camera-frame 3D.
pub fn load_regime_sequences(manifest_path: &Path) -> Result<Vec<RegimeSequence>> {
    let manifest = Manifest::load(manifest_path)?;
    let root = manifest_path.parent().unwrap_or(Path::new("."));
    manifest
        .kept()
        .map(|s| {
            let f = manifest.load_sample(root, s)?;
            Ok(RegimeSequence {
                id: f.id,
                gt_2d: f.guidance_2d,
                hpe_2d: f.detected_2d,
                gt_3d: f.gt_3d_camera,
            })
        })
        .collect()
}

/// Four-regime GT/HPE comparison between a training and a test manifest.
pub fn run_regimes(train_manifest: &Path, test_manifest: &Path, lambda: f64, seeds: &[u64]) -> Result<RegimeTable> {
    let train = load_regime_sequences(train_manifest)?;
    let test = load_regime_sequences(test_manifest)?;
    Ok(run_regimes_on(&train, &test, lambda, seeds)?)
}
