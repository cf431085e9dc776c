//! End-to-end batch driver: fuse, generate, detect, score, filter, record.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::PipelineConfig;
use super::manifest::{
    FileRef, Manifest, ManifestSample, SampleFiles, SampleStatus, SourceDatasetMeta, MANIFEST_FILE,
    MANIFEST_VERSION, REPORTS_FILE,
};
use super::source::{LoadedDataset, SourceDataset};
use super::tensor::{quantize, write_pose, PoseTensor};
use super::{
    io_err, read_json, relative, sample_dir_name, sha256_file, sha256_hex, write_json,
    PipelineError, Result,
};
use crate::fusion::{cross_fuse, fuse_pair, make_guidance, Domain, MotionSample, PairSpec, SceneSample};
use crate::geometry::{world_to_camera, CONVENTION};
use crate::quality::{filter_top, score_sample, QualityReport};
use crate::skeleton::{JointSchema, SchemaMapping};
use crate::synth::{
    derive_seed, detect, generate, list_frames, DetectorAdapter, GeneratorAdapter, GeneratorRequest,
};

const RECORD_FILE: &str = "record.json";

/// Outcome counts of one run alongside the written manifest.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub manifest: Manifest,
    pub manifest_path: PathBuf,
    pub attempted: usize,
    pub completed: usize,
    pub failed: usize,
    /// Samples reused from a previous run with identical inputs.
    pub resumed: usize,
    pub kept: usize,
}

/// Per-sample completion record, used to resume interrupted runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct SampleRecord {
    id: String,
    fingerprint: String,
    frames: usize,
    quality_score: f64,
    per_frame_scores: Vec<f64>,
    files: SampleFiles,
}

#[derive(Serialize)]
struct ReportLine<'a> {
    sample_id: &'a str,
    domain: Domain,
    score: f64,
    kept: bool,
    per_frame_scores: &'a [f64],
}

struct Context<'a> {
    out: &'a Path,
    cfg: &'a PipelineConfig,
    fingerprint: String,
    scenes: Vec<SceneSample>,
    motions: Vec<MotionSample>,
    mapping: SchemaMapping,
    generator: Box<dyn GeneratorAdapter>,
    detector: Box<dyn DetectorAdapter>,
}

enum Outcome {
    Done { record: Box<SampleRecord>, resumed: bool },
    Failed(String),
}

fn file_ref(root: &Path, path: &Path) -> Result<FileRef> {
    Ok(FileRef {
        path: relative(root, path),
        sha256: sha256_file(path)?,
    })
}

fn load_sources(cfg: &PipelineConfig) -> Result<Vec<LoadedDataset>> {
    let mut datasets: Vec<LoadedDataset> = Vec::new();
    for src in &cfg.sources {
        let ds = SourceDataset::load(&cfg.resolve(src))?;
        if datasets.iter().any(|d| d.descriptor.dataset_id == ds.descriptor.dataset_id) {
            return Err(PipelineError::Config(format!(
                "dataset id `{}` listed twice",
                ds.descriptor.dataset_id
            )));
        }
        datasets.push(ds);
    }
    Ok(datasets)
}

fn motion_schema(datasets: &[LoadedDataset]) -> Result<Arc<JointSchema>> {
    let mut with_motion = datasets.iter().filter(|d| !d.motions.is_empty());
    let first = with_motion
        .next()
        .ok_or_else(|| PipelineError::Config("no source provides motions".into()))?;
    if let Some(other) = with_motion.find(|d| d.schema.name() != first.schema.name()) {
        return Err(PipelineError::Config(format!(
            "motion schemas differ: `{}` in {} vs `{}` in {}",
            first.schema.name(),
            first.descriptor.dataset_id,
            other.schema.name(),
            other.descriptor.dataset_id
        )));
    }
    Ok(first.schema.clone())
}

/// Digest of the source descriptors and motion files, so edited sources
/// invalidate resumable records.
fn sources_digest(datasets: &[LoadedDataset]) -> Result<String> {
    let mut parts = Vec::new();
    for d in datasets {
        parts.push(sha256_file(&d.path)?);
        let base = d.path.parent().unwrap_or(Path::new("."));
        for m in &d.descriptor.motions {
            parts.push(sha256_file(&base.join(&m.file))?);
        }
    }
    Ok(sha256_hex(parts.join(",").as_bytes()))
}

impl Context<'_> {
    fn sample_dir(&self, id: &str) -> PathBuf {
        self.out.join("samples").join(sample_dir_name(id))
    }

    fn sample_fingerprint(&self, pair: &PairSpec) -> String {
        sha256_hex(format!("{}|{}", self.fingerprint, pair.id).as_bytes())
    }

    /// A previous record whose fingerprint and file hashes still match.
    fn reusable(&self, pair: &PairSpec) -> Option<SampleRecord> {
        let path = self.sample_dir(&pair.id).join(RECORD_FILE);
        let record: SampleRecord = read_json(&path).ok()?;
        if record.fingerprint != self.sample_fingerprint(pair) || record.id != pair.id {
            return None;
        }
        let intact = record.files.all().all(|f| {
            sha256_file(&self.out.join(&f.path)).is_ok_and(|h| h == f.sha256)
        });
        intact.then_some(record)
    }

    fn process(&self, pair: &PairSpec) -> Outcome {
        if let Some(record) = self.reusable(pair) {
            log::debug!("{}: reusing previous outputs", pair.id);
            return Outcome::Done {
                record: Box::new(record),
                resumed: true,
            };
        }
        match self.produce(pair) {
            Ok(record) => Outcome::Done {
                record: Box::new(record),
                resumed: false,
            },
            Err(e) => {
                log::warn!("{}: {e}", pair.id);
                Outcome::Failed(e.to_string())
            }
        }
    }

    fn produce(&self, pair: &PairSpec) -> Result<SampleRecord> {
        let dir = self.sample_dir(&pair.id);
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(io_err(&dir))?;
        }
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let seed = derive_seed(self.cfg.seed, &pair.id);
        let scene = &self.scenes[pair.scene_index];
        let motion = &self.motions[pair.motion_index];

        let (fused, warnings) = fuse_pair(scene, motion, &self.mapping, &self.cfg.fusion)?;
        for w in warnings {
            log::warn!("{}: {w:?}", pair.id);
        }
        // Everything downstream derives from the f32-rounded world pose so
        // that reloaded samples reproduce their guidance exactly.
        let camera = fused.camera;
        let world = quantize(&fused.gt_3d_world.into())?.into_3d()?;
        let cam3d = world_to_camera(&world, &camera)?;
        let guidance = quantize(&make_guidance(&world, &camera, &self.mapping)?.into())?.into_2d()?;

        let camera_path = dir.join("camera.json");
        fs::write(&camera_path, camera.to_json()).map_err(io_err(&camera_path))?;
        let world_path = dir.join("gt_3d_world.pseq");
        let cam_path = dir.join("gt_3d_camera.pseq");
        let guidance_path = dir.join("guidance_2d.pseq");
        write_pose(&world_path, &PoseTensor::Pose3D(world))?;
        write_pose(&cam_path, &PoseTensor::Pose3D(cam3d))?;
        write_pose(&guidance_path, &PoseTensor::Pose2D(guidance.clone()))?;

        let frames_dir = dir.join("frames");
        let req = GeneratorRequest {
            reference_frame_paths: scene.reference_frame_paths.clone(),
            guidance: guidance.clone(),
            output_dir: frames_dir.clone(),
            seed,
            image_width: camera.image_width,
            image_height: camera.image_height,
        };
        generate(&req, self.generator.as_ref())?;
        let detected = detect(&frames_dir, self.detector.as_ref(), seed)?;
        let detected = quantize(&detected.into())?.into_2d()?;
        let detected_path = dir.join("detected_2d.pseq");
        write_pose(&detected_path, &PoseTensor::Pose2D(detected.clone()))?;
        let report = score_sample(&pair.id, &detected, &guidance, &camera)?;

        let frames = list_frames(&frames_dir)?
            .iter()
            .map(|p| file_ref(self.out, p))
            .collect::<Result<Vec<_>>>()?;
        let files = SampleFiles {
            camera: file_ref(self.out, &camera_path)?,
            gt_3d_world: file_ref(self.out, &world_path)?,
            gt_3d_camera: file_ref(self.out, &cam_path)?,
            guidance_2d: file_ref(self.out, &guidance_path)?,
            detected_2d: file_ref(self.out, &detected_path)?,
            frames_dir: relative(self.out, &frames_dir),
            frames,
        };
        let record = SampleRecord {
            id: pair.id.clone(),
            fingerprint: self.sample_fingerprint(pair),
            frames: guidance.num_frames(),
            quality_score: report.score,
            per_frame_scores: report.per_frame_scores,
            files,
        };
        write_json(&dir.join(RECORD_FILE), &record)?;
        Ok(record)
    }
}

/// Runs the whole chain for every configured pairing and writes
/// `manifest.json` and `reports.jsonl` into `out`.
///
/// Individual sample failures are recorded in the manifest; the run itself
/// fails only when no sample completes.
pub fn run_pipeline(cfg: &PipelineConfig, out: &Path) -> Result<RunSummary> {
    cfg.validate()?;
    fs::create_dir_all(out).map_err(io_err(out))?;
    let datasets = load_sources(cfg)?;
    let motion_schema = motion_schema(&datasets)?;
    let guidance_schema = cfg.guidance_schema()?;
    let mapping = cfg.mapping(motion_schema.clone(), guidance_schema.clone())?;
    let scenes: Vec<SceneSample> = datasets.iter().flat_map(|d| d.scenes.clone()).collect();
    let motions: Vec<MotionSample> = datasets.iter().flat_map(|d| d.motions.clone()).collect();
    let pairs = cross_fuse(&scenes, &motions, cfg.pairing)?;
    let fingerprint = sha256_hex(format!("{}|{}", cfg.fingerprint(), sources_digest(&datasets)?).as_bytes());

    let ctx = Context {
        out,
        cfg,
        fingerprint,
        scenes,
        motions,
        generator: cfg.generator(guidance_schema.clone())?,
        detector: cfg.detector(guidance_schema.clone())?,
        mapping,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    log::info!("processing {} samples", pairs.len());
    let outcomes: Vec<Outcome> = pool.install(|| pairs.par_iter().map(|p| ctx.process(p)).collect());

    let mut rows: Vec<(&PairSpec, Outcome)> = pairs.iter().zip(outcomes).collect();
    rows.sort_by(|a, b| a.0.id.cmp(&b.0.id));

    let mut reports: Vec<QualityReport> = rows
        .iter()
        .filter_map(|(_, o)| match o {
            Outcome::Done { record, .. } => Some(QualityReport {
                sample_id: record.id.clone(),
                score: record.quality_score,
                per_frame_scores: record.per_frame_scores.clone(),
                kept: false,
            }),
            Outcome::Failed(_) => None,
        })
        .collect();
    if !reports.is_empty() {
        filter_top(&mut reports, cfg.filter_fraction)?;
    }
    let kept_ids: std::collections::HashSet<&str> = reports
        .iter()
        .filter(|r| r.kept)
        .map(|r| r.sample_id.as_str())
        .collect();

    let mut samples = Vec::with_capacity(rows.len());
    let (mut failed, mut resumed) = (0, 0);
    for (pair, outcome) in &rows {
        let base = ManifestSample {
            id: pair.id.clone(),
            scene_ref: pair.scene_ref.clone(),
            motion_ref: pair.motion_ref.clone(),
            domain: pair.domain,
            status: SampleStatus::Failed,
            reason: None,
            quality_score: None,
            frames: 0,
            files: None,
        };
        samples.push(match outcome {
            Outcome::Failed(reason) => {
                failed += 1;
                ManifestSample {
                    reason: Some(reason.clone()),
                    ..base
                }
            }
            Outcome::Done { record, resumed: r } => {
                resumed += usize::from(*r);
                ManifestSample {
                    status: if kept_ids.contains(pair.id.as_str()) {
                        SampleStatus::Kept
                    } else {
                        SampleStatus::Rejected
                    },
                    quality_score: Some(record.quality_score),
                    frames: record.frames,
                    files: Some(record.files.clone()),
                    ..base
                }
            }
        });
    }

    let manifest = Manifest {
        version: MANIFEST_VERSION,
        convention: CONVENTION.to_string(),
        created_unix: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        seed: cfg.seed,
        filter_fraction: cfg.filter_fraction,
        source_datasets: datasets
            .iter()
            .map(|d| SourceDatasetMeta {
                dataset_id: d.descriptor.dataset_id.clone(),
                handedness: d.descriptor.handedness,
                schema: d.schema.name().to_string(),
                scenes: d.scenes.len(),
                motions: d.motions.len(),
            })
            .collect(),
        motion_schema: (*motion_schema).clone(),
        guidance_schema: (*guidance_schema).clone(),
        guidance_mapping: serde_json::from_str(&ctx.mapping.to_json())
            .expect("mapping json is valid"),
        samples,
    };
    let manifest_path = out.join(MANIFEST_FILE);
    manifest.save(&manifest_path)?;
    write_reports(&out.join(REPORTS_FILE), &rows, &reports)?;

    let attempted = rows.len();
    let completed = attempted - failed;
    log::info!("{completed}/{attempted} samples completed, {} kept", kept_ids.len());
    if completed == 0 {
        return Err(PipelineError::AllFailed(attempted));
    }
    Ok(RunSummary {
        kept: kept_ids.len(),
        manifest,
        manifest_path,
        attempted,
        completed,
        failed,
        resumed,
    })
}

fn write_reports(path: &Path, rows: &[(&PairSpec, Outcome)], reports: &[QualityReport]) -> Result<()> {
    let mut text = String::new();
    for r in reports {
        let domain = rows
            .iter()
            .find(|(p, _)| p.id == r.sample_id)
            .map(|(p, _)| p.domain)
            .expect("report belongs to a pair");
        let line = ReportLine {
            sample_id: &r.sample_id,
            domain,
            score: r.score,
            kept: r.kept,
            per_frame_scores: &r.per_frame_scores,
        };
        text += &serde_json::to_string(&line).expect("report serializes");
        text.push('\n');
    }
    fs::write(path, text).map_err(io_err(path))
}
