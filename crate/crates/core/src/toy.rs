//! Procedural toy datasets: walking figures, look-at cameras and gradient
//! backdrops. Used by the examples, the CLI `toy` command and the test
//! suites; nothing here is meant to be realistic.

use std::f64::consts::{PI, TAU};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::fusion::{fuse_pair, FusionConfig, FusionError, MotionSample, SceneSample, UP};
use crate::geometry::{CameraModel, HandednessCorrection};
use crate::lifter::RegimeSequence;
use crate::pipeline::tensor::{write_pose, PoseTensor};
use crate::pipeline::{MotionEntry, PipelineError, SceneEntry, SourceDataset};
use crate::skeleton::{coco_body, h36m_17, h36m_to_coco_body, FrameTag, Pose3DSequence};
use crate::synth::raster::{write_png, RgbImage};
use crate::synth::{derive_seed, synth_detect, DetectorNoiseConfig};

/// Gait and body parameters of one toy walker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WalkParams {
    /// Uniform body scale around a 1.75 m adult.
    pub scale: f64,
    /// mm per frame along the heading.
    pub speed: f64,
    /// Gait cycles per frame.
    pub cadence: f64,
    /// Peak hip swing, radians.
    pub swing: f64,
    pub phase: f64,
    /// Heading angle about the vertical axis, radians.
    pub heading: f64,
    pub start: [f64; 2],
}

impl WalkParams {
    pub fn random(rng: &mut impl Rng) -> Self {
        WalkParams {
            scale: rng.random_range(0.85..1.15),
            speed: rng.random_range(0.0..14.0),
            cadence: rng.random_range(0.02..0.06),
            swing: rng.random_range(0.15..0.55),
            phase: rng.random_range(0.0..TAU),
            heading: rng.random_range(0.0..TAU),
            start: [rng.random_range(-300.0..300.0), rng.random_range(-300.0..300.0)],
        }
    }
}

/// World-frame (Z-up, mm) `h36m-17` walking sequence.
pub fn walking_motion(frames: usize, p: &WalkParams) -> Pose3DSequence {
    let s = p.scale;
    let (thigh, shin, hip_w) = (450.0 * s, 430.0 * s, 130.0 * s);
    let (spine, thorax, neck, head) = (230.0 * s, 240.0 * s, 170.0 * s, 110.0 * s);
    let (shoulder_w, upper_arm, forearm) = (170.0 * s, 280.0 * s, 250.0 * s);
    let heading = Rotation3::from_axis_angle(&Vector3::z_axis(), p.heading);
    let forward = heading * Vector3::y();
    let mut data = Vec::with_capacity(frames * 17);
    for t in 0..frames {
        let a = TAU * p.cadence * t as f64 + p.phase;
        let pelvis_h = thigh + shin + 15.0 * s * (2.0 * a).cos();
        // Body frame: x right, y forward, z up.
        let leg = |side: f64, swing: f64| {
            let hip = Vector3::new(side * hip_w, 0.0, pelvis_h);
            let bend = 0.6 * swing.max(0.0) + 0.1;
            let knee = hip + thigh * Vector3::new(0.0, swing.sin(), -swing.cos());
            let shin_angle = swing - bend;
            let ankle = knee + shin * Vector3::new(0.0, shin_angle.sin(), -shin_angle.cos());
            [hip, knee, ankle]
        };
        let right = leg(1.0, p.swing * a.sin());
        let left = leg(-1.0, -p.swing * a.sin());
        let pelvis = Vector3::new(0.0, 0.0, pelvis_h);
        let spine_j = pelvis + Vector3::new(0.0, 10.0 * s, spine);
        let thorax_j = spine_j + Vector3::new(0.0, 5.0 * s, thorax);
        let neck_j = thorax_j + Vector3::new(0.0, 40.0 * s, neck);
        let head_j = neck_j + Vector3::new(0.0, -20.0 * s, head);
        let arm = |side: f64, swing: f64| {
            let sh = thorax_j + Vector3::new(side * shoulder_w, 0.0, 0.0);
            let el = sh + upper_arm * Vector3::new(0.1 * side, swing.sin(), -swing.cos());
            let fa = swing + 0.3;
            let wr = el + forearm * Vector3::new(0.05 * side, fa.sin(), -fa.cos());
            [sh, el, wr]
        };
        let r_arm = arm(1.0, -0.8 * p.swing * a.sin());
        let l_arm = arm(-1.0, 0.8 * p.swing * a.sin());
        let body = [
            pelvis, right[0], right[1], right[2], left[0], left[1], left[2], spine_j, thorax_j,
            neck_j, head_j, l_arm[0], l_arm[1], l_arm[2], r_arm[0], r_arm[1], r_arm[2],
        ];
        let offset = Vector3::new(p.start[0], p.start[1], 0.0) + forward * (p.speed * t as f64);
        data.extend(body.iter().map(|b| heading * b + offset));
    }
    Pose3DSequence::new(Arc::new(h36m_17()), FrameTag::World, data).expect("finite toy motion")
}

/// Scene placement plus a camera looking at it from the side the person
/// faces.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyScene {
    pub camera: CameraModel,
    pub root_position: Vector3<f64>,
    pub facing: Vector3<f64>,
    pub ground_height: f64,
}

pub fn random_scene(rng: &mut impl Rng, width: u32, height: u32) -> ToyScene {
    let root_position = Vector3::new(rng.random_range(-500.0..500.0), rng.random_range(-500.0..500.0), 950.0);
    let yaw: f64 = rng.random_range(0.0..TAU);
    let facing = Vector3::new(yaw.cos(), yaw.sin(), 0.0);
    let view = yaw + rng.random_range(-PI / 3.0..PI / 3.0);
    let distance = rng.random_range(4200.0..5500.0);
    let cam_height = rng.random_range(900.0..1700.0);
    let position = root_position + Vector3::new(view.cos(), view.sin(), 0.0) * distance
        + UP * (cam_height - root_position.z);
    let target = root_position + UP * rng.random_range(-150.0..50.0);
    let f = width as f64 * rng.random_range(1.0..1.25);
    let camera = CameraModel::look_at(position, target, UP, f, f, width, height)
        .expect("toy camera is never vertical");
    ToyScene {
        camera,
        root_position,
        facing,
        ground_height: 0.0,
    }
}

/// Vertical gradient backdrop with a seeded tint.
pub fn backdrop(rng: &mut impl Rng, width: u32, height: u32) -> RgbImage {
    let top: [f64; 3] = [rng.random_range(40.0..110.0), rng.random_range(40.0..110.0), rng.random_range(40.0..110.0)];
    let bottom: [f64; 3] = [rng.random_range(60.0..130.0), rng.random_range(60.0..130.0), rng.random_range(60.0..130.0)];
    let mut img = RgbImage::filled(width, height, [0; 3]);
    for y in 0..height {
        let w = y as f64 / height.max(2).saturating_sub(1) as f64;
        let c = [0, 1, 2].map(|k| (top[k] * (1.0 - w) + bottom[k] * w).round() as u8);
        for x in 0..width {
            img.set(x, y, c);
        }
    }
    img
}

/// Shape of a generated toy dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ToySpec {
    pub dataset_id: String,
    pub scenes: usize,
    pub motions: usize,
    pub frames: usize,
    pub width: u32,
    pub height: u32,
    /// Store motions mirrored along this axis and declare the correction.
    pub flip_axis: Option<usize>,
    pub seed: u64,
}

impl ToySpec {
    pub fn new(dataset_id: &str, scenes: usize, motions: usize, seed: u64) -> Self {
        ToySpec {
            dataset_id: dataset_id.to_string(),
            scenes,
            motions,
            frames: 16,
            width: 320,
            height: 240,
            flip_axis: None,
            seed,
        }
    }
}

/// Writes a source dataset (descriptor, backdrops, cameras, motion tensors)
/// under `dir` and returns the descriptor path.
pub fn write_dataset(dir: &Path, spec: &ToySpec) -> Result<PathBuf, PipelineError> {
    let io = |p: &Path| {
        let p = p.to_path_buf();
        move |source| PipelineError::Io { path: p, source }
    };
    fs::create_dir_all(dir.join("scenes")).map_err(io(dir))?;
    fs::create_dir_all(dir.join("motions")).map_err(io(dir))?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &spec.dataset_id));
    let mut scenes = Vec::new();
    for i in 0..spec.scenes {
        let id = format!("s{i}");
        let scene = random_scene(&mut rng, spec.width, spec.height);
        let img = backdrop(&mut rng, spec.width, spec.height);
        let ref_rel = PathBuf::from(format!("scenes/{id}_ref.png"));
        let cam_rel = PathBuf::from(format!("scenes/{id}_camera.json"));
        write_png(&dir.join(&ref_rel), &img)?;
        let cam_path = dir.join(&cam_rel);
        fs::write(&cam_path, scene.camera.to_json()).map_err(io(&cam_path))?;
        scenes.push(SceneEntry {
            id,
            reference_frames: vec![ref_rel],
            camera: crate::pipeline::CameraSpec::File(cam_rel),
            root_position: scene.root_position.into(),
            facing: scene.facing.into(),
            ground_height: scene.ground_height,
        });
    }
    let mut motions = Vec::new();
    for i in 0..spec.motions {
        let id = format!("m{i}");
        let params = WalkParams::random(&mut rng);
        let mut motion = walking_motion(spec.frames, &params);
        if let Some(axis) = spec.flip_axis {
            motion = crate::geometry::apply_handedness(&motion, HandednessCorrection::flip(axis)?);
        }
        let rel = PathBuf::from(format!("motions/{id}.pseq"));
        write_pose(&dir.join(&rel), &PoseTensor::Pose3D(motion))?;
        motions.push(MotionEntry { id, file: rel });
    }
    let descriptor = SourceDataset {
        version: crate::pipeline::SOURCE_VERSION,
        dataset_id: spec.dataset_id.clone(),
        schema: crate::skeleton::H36M_17.to_string(),
        handedness: match spec.flip_axis {
            Some(a) => HandednessCorrection::flip(a)?,
            None => HandednessCorrection::none(),
        },
        scenes,
        motions,
    };
    let path = dir.join("dataset.json");
    crate::pipeline::write_json(&path, &descriptor)?;
    Ok(path)
}

/// In-memory corpus for the GT/HPE regime harness: `n` random walker and
/// camera pairs with guidance as the GT channel and simulated detections
/// as the HPE channel. Placements rejected by fusion are redrawn.
pub fn regime_corpus(
    n: usize,
    frames: usize,
    seed: u64,
    noise: &DetectorNoiseConfig,
) -> Result<Vec<RegimeSequence>, PipelineError> {
    let h36m = Arc::new(h36m_17());
    let coco = Arc::new(coco_body());
    let mapping = h36m_to_coco_body(h36m, coco)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    let mut attempt = 0u64;
    while out.len() < n {
        attempt += 1;
        if attempt > 20 * n as u64 + 100 {
            return Err(PipelineError::Config("toy placements keep failing".into()));
        }
        let id = format!("seq{:04}", out.len());
        let motion = walking_motion(frames, &WalkParams::random(&mut rng));
        let scene = random_scene(&mut rng, 640, 480);
        let scene = SceneSample::new(
            "toy-scenes",
            id.clone(),
            vec![PathBuf::from("unused.png")],
            scene.camera,
            scene.root_position,
            scene.facing,
            scene.ground_height,
        )?;
        let motion = MotionSample::new("toy-motions", id.clone(), motion, HandednessCorrection::none())?;
        let fused = match fuse_pair(&scene, &motion, &mapping, &FusionConfig::default()) {
            Ok((f, _)) => f,
            Err(FusionError::OutOfFrame { .. } | FusionError::BehindCamera { .. }) => continue,
            Err(e) => return Err(e.into()),
        };
        let cfg = DetectorNoiseConfig {
            seed: derive_seed(noise.seed, &id),
            ..noise.clone()
        };
        let hpe = synth_detect(&fused.guidance_2d, &cfg, fused.camera.image_width)?;
        out.push(RegimeSequence {
            id,
            gt_2d: fused.guidance_2d,
            hpe_2d: Some(hpe),
            gt_3d: fused.gt_3d_camera,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::motion_facing;
    use crate::skeleton::bone_lengths;

    #[test]
    fn walker_faces_its_heading_and_keeps_bones() {
        let p = WalkParams {
            heading: 0.0,
            ..WalkParams::random(&mut ChaCha8Rng::seed_from_u64(1))
        };
        let m = walking_motion(20, &p);
        let f = motion_facing(&m).unwrap();
        assert!((f - Vector3::y()).norm() < 1e-9);
        let b0 = bone_lengths(&m, 0).unwrap();
        let b9 = bone_lengths(&m, 9).unwrap();
        for (a, b) in b0.iter().zip(&b9) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn dataset_round_trips_through_loader() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = ToySpec::new("mirror", 2, 3, 4);
        spec.flip_axis = Some(0);
        let path = write_dataset(dir.path(), &spec).unwrap();
        let ds = SourceDataset::load(&path).unwrap();
        assert_eq!((ds.scenes.len(), ds.motions.len()), (2, 3));
        assert_eq!(ds.motions[0].handedness.flip_axis(), Some(0));
        // Correction restores a proper walker (left hip on the left).
        let fixed = ds.motions[0].corrected();
        assert!(motion_facing(fixed.motion()).is_ok());
    }

    #[test]
    fn regime_corpus_zero_noise_channels_match() {
        let c = regime_corpus(3, 8, 2, &DetectorNoiseConfig::noiseless()).unwrap();
        assert_eq!(c.len(), 3);
        for s in &c {
            assert_eq!(s.hpe_2d.as_ref().unwrap(), &s.gt_2d);
        }
    }
}
