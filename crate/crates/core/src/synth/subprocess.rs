//! External adapters run as child processes.
//!
//! The adapter receives one argument, the path of a JSON request file, and
//! signals success through its exit code.
//!
//! Generator request:
//! `{"reference_frames": [..], "guidance_file": "..", "output_dir": "..",
//!   "seed": n, "image_width": w, "image_height": h}`; frames go to
//! `output_dir/frame_%06d.png`.
//!
//! Detector request:
//! `{"frames_dir": "..", "output_file": "..", "seed": n, "schema": ".."}`;
//! keypoints go to `output_file` as a 2D pose tensor.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;

use serde::Serialize;

use super::mock::ensure_dir;
use super::{io_err, DetectorAdapter, GeneratorAdapter, GeneratorRequest, Result, SynthError};
use crate::pipeline::tensor::{read_pose_with, write_pose, PoseTensor};
use crate::skeleton::{JointSchema, Pose2DSequence};

pub const GUIDANCE_FILE: &str = "guidance_2d.pseq";
pub const GENERATE_REQUEST: &str = "generate_request.json";
pub const DETECT_REQUEST: &str = "detect_request.json";
pub const DETECT_OUTPUT: &str = "detected_2d.pseq";

#[derive(Serialize)]
struct GenerateJson<'a> {
    reference_frames: &'a [PathBuf],
    guidance_file: PathBuf,
    output_dir: &'a Path,
    seed: u64,
    image_width: u32,
    image_height: u32,
}

#[derive(Serialize)]
struct DetectJson<'a> {
    frames_dir: &'a Path,
    output_file: PathBuf,
    seed: u64,
    schema: &'a str,
}

fn run_child(name: &str, program: &Path, args: &[String], request: &Path) -> Result<()> {
    let out = Command::new(program)
        .args(args)
        .arg(request)
        .output()
        .map_err(|e| SynthError::AdapterFailed {
            adapter: name.into(),
            reason: format!("cannot start {}: {e}", program.display()),
        })?;
    if out.status.success() {
        return Ok(());
    }
    let stderr = String::from_utf8_lossy(&out.stderr);
    let tail: String = stderr.lines().rev().take(5).collect::<Vec<_>>().join(" | ");
    Err(SynthError::AdapterFailed {
        adapter: name.into(),
        reason: format!("{} ({tail})", out.status),
    })
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| SynthError::InvalidConfig(e.to_string()))?;
    std::fs::write(path, text).map_err(io_err(path))
}

#[derive(Debug, Clone)]
pub struct SubprocessGenerator {
    pub program: PathBuf,
    pub args: Vec<String>,
    schema: Arc<JointSchema>,
}

impl SubprocessGenerator {
    pub fn new(program: PathBuf, args: Vec<String>, schema: Arc<JointSchema>) -> Self {
        SubprocessGenerator {
            program,
            args,
            schema,
        }
    }
}

impl GeneratorAdapter for SubprocessGenerator {
    fn name(&self) -> &str {
        "subprocess-generator"
    }

    fn schema(&self) -> &Arc<JointSchema> {
        &self.schema
    }

    fn run(&self, req: &GeneratorRequest) -> Result<()> {
        ensure_dir(&req.output_dir)?;
        let guidance_file = req.output_dir.join(GUIDANCE_FILE);
        write_pose(&guidance_file, &PoseTensor::Pose2D(req.guidance.clone()))?;
        let request = req.output_dir.join(GENERATE_REQUEST);
        write_json(
            &request,
            &GenerateJson {
                reference_frames: &req.reference_frame_paths,
                guidance_file,
                output_dir: &req.output_dir,
                seed: req.seed,
                image_width: req.image_width,
                image_height: req.image_height,
            },
        )?;
        run_child(self.name(), &self.program, &self.args, &request)
    }
}

#[derive(Debug, Clone)]
pub struct SubprocessDetector {
    pub program: PathBuf,
    pub args: Vec<String>,
    schema: Arc<JointSchema>,
}

impl SubprocessDetector {
    pub fn new(program: PathBuf, args: Vec<String>, schema: Arc<JointSchema>) -> Self {
        SubprocessDetector {
            program,
            args,
            schema,
        }
    }
}

impl DetectorAdapter for SubprocessDetector {
    fn name(&self) -> &str {
        "subprocess-detector"
    }

    fn schema(&self) -> &Arc<JointSchema> {
        &self.schema
    }

    fn run(&self, frames_dir: &Path, seed: u64) -> Result<Pose2DSequence> {
        let output_file = frames_dir.join(DETECT_OUTPUT);
        let request = frames_dir.join(DETECT_REQUEST);
        write_json(
            &request,
            &DetectJson {
                frames_dir,
                output_file: output_file.clone(),
                seed,
                schema: self.schema.name(),
            },
        )?;
        run_child(self.name(), &self.program, &self.args, &request)?;
        let schema = self.schema.clone();
        let tensor = read_pose_with(&output_file, move |name| {
            if name == schema.name() {
                Some(schema.clone())
            } else {
                JointSchema::builtin(name).map(Arc::new)
            }
        })
        .map_err(|e| SynthError::UnreadableOutput {
            path: output_file.clone(),
            reason: e.to_string(),
        })?;
        Ok(tensor.into_2d()?)
    }
}
