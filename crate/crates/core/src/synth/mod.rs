//! Generator and detector adapters.
//!
//! A generator turns reference frames plus 2D guidance into
//! `frame_%06d.png` files; a detector turns a frame directory back into
//! keypoints. The built-in mocks render stick figures and simulate a
//! heavy-tailed keypoint detector, and external models plug in as
//! subprocesses speaking a small JSON protocol.

mod mock;
pub mod raster;
mod subprocess;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geometry::NORMALIZED_WIDTH;
use crate::pipeline::tensor::TensorError;
use crate::skeleton::{JointSchema, Pose2DSequence, SkeletonError};

pub use mock::{MockGenerator, PixelDetector, SyntheticDetector, TRUTH_SIDECAR};
pub use subprocess::{SubprocessDetector, SubprocessGenerator};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("guidance schema `{found}` does not match adapter schema `{expected}`")]
    SchemaMismatch { expected: String, found: String },
    #[error("reference frame {path} is not readable: {reason}")]
    UnreadableReference { path: PathBuf, reason: String },
    #[error("adapter `{adapter}` failed: {reason}")]
    AdapterFailed { adapter: String, reason: String },
    #[error("adapter produced {found} frames, expected {expected}")]
    FrameCount { expected: usize, found: usize },
    #[error("unreadable output {path}: {reason}")]
    UnreadableOutput { path: PathBuf, reason: String },
    #[error("no frames found in {0}")]
    MissingInput(PathBuf),
    #[error("image {path}: {reason}")]
    Image { path: PathBuf, reason: String },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Skeleton(#[from] SkeletonError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

pub type Result<T, E = SynthError> = std::result::Result<T, E>;

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SynthError + '_ {
    move |source| SynthError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Everything a generator needs to synthesize one clip.
#[derive(Debug, Clone)]
pub struct GeneratorRequest {
    pub reference_frame_paths: Vec<PathBuf>,
    /// Pixel-space guidance in the generator's schema.
    pub guidance: Pose2DSequence,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub image_width: u32,
    pub image_height: u32,
}

/// Simulated detector noise. Distances are pixels on the 2000-px-wide
/// normalized plane and are rescaled to the actual image width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorNoiseConfig {
    pub gaussian_sigma: f64,
    pub outlier_prob: f64,
    pub outlier_radius: (f64, f64),
    pub miss_prob: f64,
    pub seed: u64,
}

impl Default for DetectorNoiseConfig {
    fn default() -> Self {
        DetectorNoiseConfig {
            gaussian_sigma: 12.0,
            outlier_prob: 0.05,
            outlier_radius: (30.0, 120.0),
            miss_prob: 0.01,
            seed: 0,
        }
    }
}

impl DetectorNoiseConfig {
    /// No noise at all: output equals input.
    pub fn noiseless() -> Self {
        DetectorNoiseConfig {
            gaussian_sigma: 0.0,
            outlier_prob: 0.0,
            outlier_radius: (30.0, 120.0),
            miss_prob: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        let (lo, hi) = self.outlier_radius;
        if !(self.gaussian_sigma.is_finite() && self.gaussian_sigma >= 0.0) {
            return Err(SynthError::InvalidConfig("gaussian_sigma must be >= 0".into()));
        }
        if !prob(self.outlier_prob) || !prob(self.miss_prob) {
            return Err(SynthError::InvalidConfig("probabilities must lie in [0, 1]".into()));
        }
        if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo < hi) {
            return Err(SynthError::InvalidConfig(format!(
                "outlier radius ({lo}, {hi}) needs 0 <= min < max"
            )));
        }
        Ok(())
    }
}

/// Artifact model of the mock generator: with probability `failure_prob`
/// a clip drifts away from its guidance following a per-joint AR(1)
/// process (normalized pixels).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct CorruptionKnob {
    pub pose_drift_sigma: f64,
    pub drift_correlation: f64,
    pub failure_prob: f64,
}

impl CorruptionKnob {
    pub fn validate(&self) -> Result<()> {
        if !(self.pose_drift_sigma.is_finite() && self.pose_drift_sigma >= 0.0) {
            return Err(SynthError::InvalidConfig("pose_drift_sigma must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.drift_correlation) {
            return Err(SynthError::InvalidConfig("drift_correlation must lie in [0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.failure_prob) {
            return Err(SynthError::InvalidConfig("failure_prob must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Stable 64-bit seed derived from a base seed and a label.
pub fn derive_seed(base: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update(label.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

pub fn frame_file_name(t: usize) -> String {
    format!("frame_{t:06}.png")
}

/// Sorted `frame_%06d.png` files of a directory.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|_| SynthError::MissingInput(dir.to_path_buf()))?;
    let mut frames: Vec<PathBuf> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(is_frame_name)
        })
        .collect();
    frames.sort();
    Ok(frames)
}

fn is_frame_name(name: &str) -> bool {
    name.len() == 16
        && name.starts_with("frame_")
        && name.ends_with(".png")
        && name[6..12].bytes().all(|b| b.is_ascii_digit())
}

pub trait GeneratorAdapter: Send + Sync {
    fn name(&self) -> &str;
    /// Schema the guidance must be expressed in.
    fn schema(&self) -> &Arc<JointSchema>;
    /// Writes frames into `req.output_dir`.
    fn run(&self, req: &GeneratorRequest) -> Result<()>;
}

pub trait DetectorAdapter: Send + Sync {
    fn name(&self) -> &str;
    fn schema(&self) -> &Arc<JointSchema>;
    fn run(&self, frames_dir: &Path, seed: u64) -> Result<Pose2DSequence>;
}

/// Runs a generator and checks its output contract.
pub fn generate(req: &GeneratorRequest, adapter: &dyn GeneratorAdapter) -> Result<PathBuf> {
    if adapter.schema().name() != req.guidance.schema().name() {
        return Err(SynthError::SchemaMismatch {
            expected: adapter.schema().name().to_string(),
            found: req.guidance.schema().name().to_string(),
        });
    }
    for path in &req.reference_frame_paths {
        fs::File::open(path).map_err(|e| SynthError::UnreadableReference {
            path: path.clone(),
            reason: e.to_string(),
        })?;
    }
    fs::create_dir_all(&req.output_dir).map_err(io_err(&req.output_dir))?;
    adapter.run(req)?;
    let frames = list_frames(&req.output_dir)?;
    let expected = req.guidance.num_frames();
    if frames.len() != expected {
        return Err(SynthError::FrameCount {
            expected,
            found: frames.len(),
        });
    }
    for (t, path) in frames.iter().enumerate() {
        if path.file_name().and_then(|n| n.to_str()) != Some(frame_file_name(t).as_str()) {
            return Err(SynthError::UnreadableOutput {
                path: path.clone(),
                reason: format!("expected {}", frame_file_name(t)),
            });
        }
        raster::png_dimensions(path).map_err(|e| SynthError::UnreadableOutput {
            path: path.clone(),
            reason: e.to_string(),
        })?;
    }
    Ok(req.output_dir.clone())
}

/// The mock generator with the given corruption knob and the generator's
/// schema taken from the guidance.
pub fn mock_generate(req: &GeneratorRequest, knob: CorruptionKnob) -> Result<PathBuf> {
    let adapter = MockGenerator::new(req.guidance.schema().clone(), knob)?;
    generate(req, &adapter)
}

/// Runs a detector on a frame directory and checks its output contract.
pub fn detect(frames_dir: &Path, adapter: &dyn DetectorAdapter, seed: u64) -> Result<Pose2DSequence> {
    let frames = list_frames(frames_dir)?;
    if frames.is_empty() {
        return Err(SynthError::MissingInput(frames_dir.to_path_buf()));
    }
    let kps = adapter.run(frames_dir, seed)?;
    if kps.schema().name() != adapter.schema().name() {
        return Err(SynthError::SchemaMismatch {
            expected: adapter.schema().name().to_string(),
            found: kps.schema().name().to_string(),
        });
    }
    if kps.num_frames() != frames.len() {
        return Err(SynthError::FrameCount {
            expected: frames.len(),
            found: kps.num_frames(),
        });
    }
    Ok(kps)
}

fn gaussian2(rng: &mut ChaCha8Rng) -> Vector2<f64> {
    Vector2::new(StandardNormal.sample(rng), StandardNormal.sample(rng))
}

/// Applies the corruption knob's drift to pixel-space guidance. Joints with
/// zero confidence are left untouched.
pub fn apply_drift(
    guidance: &Pose2DSequence,
    knob: &CorruptionKnob,
    image_width: u32,
    seed: u64,
) -> Result<Pose2DSequence> {
    knob.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let failed = rng.random::<f64>() < knob.failure_prob;
    if !failed || knob.pose_drift_sigma == 0.0 {
        return Ok(guidance.clone());
    }
    let scale = image_width as f64 / NORMALIZED_WIDTH;
    let sigma = knob.pose_drift_sigma * scale;
    let rho = knob.drift_correlation;
    let stationary = sigma / (1.0 - rho * rho).sqrt();
    let joints = guidance.num_joints();
    let mut drift: Vec<Vector2<f64>> = (0..joints).map(|_| gaussian2(&mut rng) * stationary).collect();
    let mut data = Vec::with_capacity(guidance.data().len());
    for t in 0..guidance.num_frames() {
        if t > 0 {
            for d in drift.iter_mut() {
                *d = *d * rho + gaussian2(&mut rng) * sigma;
            }
        }
        for (j, d) in drift.iter().enumerate() {
            let p = guidance.joint(t, j);
            data.push(if guidance.joint_confidence(t, j) > 0.0 { p + d } else { p });
        }
    }
    Ok(Pose2DSequence::new(
        guidance.schema().clone(),
        data,
        guidance.confidence().to_vec(),
    )?)
}

/// Simulated keypoint detector: Gaussian jitter, uniform-direction outliers
/// and frozen misses, scaled from the normalized plane to `image_width`.
/// Joints with zero truth confidence stay undetected.
pub fn synth_detect(
    truth: &Pose2DSequence,
    cfg: &DetectorNoiseConfig,
    image_width: u32,
) -> Result<Pose2DSequence> {
    cfg.validate()?;
    let scale = image_width as f64 / NORMALIZED_WIDTH;
    let sigma = cfg.gaussian_sigma * scale;
    let radius = (cfg.outlier_radius.0 * scale, cfg.outlier_radius.1 * scale);
    let angle = rand_distr::Uniform::new(0.0, std::f64::consts::TAU)
        .map_err(|e| SynthError::InvalidConfig(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let joints = truth.num_joints();
    let mut data: Vec<Vector2<f64>> = Vec::with_capacity(truth.data().len());
    let mut conf = Vec::with_capacity(truth.data().len());
    for t in 0..truth.num_frames() {
        for j in 0..joints {
            // Fixed draw count per joint-frame keeps streams aligned across configs.
            let jitter = gaussian2(&mut rng) * sigma;
            let u_out: f64 = rng.random();
            let r = radius.0 + (radius.1 - radius.0) * rng.random::<f64>();
            let theta = angle.sample(&mut rng);
            let u_miss: f64 = rng.random();

            let p = truth.joint(t, j);
            let c = truth.joint_confidence(t, j);
            if c == 0.0 {
                data.push(p);
                conf.push(0.0);
                continue;
            }
            if t > 0 && u_miss < cfg.miss_prob {
                data.push(data[(t - 1) * joints + j]);
                conf.push(0.1);
                continue;
            }
            let mut q = p + jitter;
            if u_out < cfg.outlier_prob {
                q += Vector2::new(theta.cos(), theta.sin()) * r;
            }
            data.push(q);
            conf.push(1.0);
        }
    }
    Ok(Pose2DSequence::new(truth.schema().clone(), data, conf)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::coco_body;

    fn guidance(frames: usize) -> Pose2DSequence {
        let s = Arc::new(coco_body());
        let data = (0..frames * s.len())
            .map(|i| Vector2::new(100.0 + (i % 17) as f64 * 3.0, 50.0 + (i / 17) as f64))
            .collect();
        Pose2DSequence::with_full_confidence(s, data).unwrap()
    }

    fn errors(a: &Pose2DSequence, b: &Pose2DSequence, scale: f64) -> Vec<f64> {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(p, q)| (p - q).norm() * scale)
            .collect()
    }

    #[test]
    fn noiseless_detector_is_identity() {
        let g = guidance(10);
        assert_eq!(synth_detect(&g, &DetectorNoiseConfig::noiseless(), 640).unwrap(), g);
    }

    #[test]
    fn detector_deterministic_and_bounded() {
        let g = guidance(20);
        let cfg = DetectorNoiseConfig::default();
        let a = synth_detect(&g, &cfg, 640).unwrap();
        assert_eq!(a, synth_detect(&g, &cfg, 640).unwrap());
        assert!(a.confidence().iter().all(|c| (0.0..=1.0).contains(c)));
    }

    #[test]
    fn detector_error_is_width_invariant_after_normalization() {
        let g = guidance(30);
        let cfg = DetectorNoiseConfig::default();
        let small = synth_detect(&g.scaled(0.25).unwrap(), &cfg, 500).unwrap();
        let big = synth_detect(&g, &cfg, 2000).unwrap();
        let e_small = errors(&small, &g.scaled(0.25).unwrap(), 4.0);
        let e_big = errors(&big, &g, 1.0);
        for (a, b) in e_small.iter().zip(&e_big) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        let cfg = DetectorNoiseConfig {
            outlier_radius: (50.0, 10.0),
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let knob = CorruptionKnob {
            drift_correlation: 1.0,
            ..Default::default()
        };
        assert!(knob.validate().is_err());
    }

    #[test]
    fn zero_knob_leaves_guidance() {
        let g = guidance(5);
        assert_eq!(apply_drift(&g, &CorruptionKnob::default(), 640, 3).unwrap(), g);
    }

    #[test]
    fn frame_names() {
        assert_eq!(frame_file_name(12), "frame_000012.png");
        assert!(is_frame_name("frame_000012.png"));
        assert!(!is_frame_name("frame_12.png"));
    }

    #[test]
    fn derived_seeds_differ_by_label() {
        assert_ne!(derive_seed(1, "a"), derive_seed(1, "b"));
        assert_eq!(derive_seed(1, "a"), derive_seed(1, "a"));
    }
}
