//! Placing a motion sequence from one dataset into the scene of another.
//!
//! World frames are Z-up: gravity runs along -Z and ground heights are Z
//! values. A motion is re-rooted at the scene's root position, turned about
//! the vertical axis to the scene's facing direction, and dropped so its
//! lowest foot touches the scene's ground plane:
//!
//! `p' = W (p - root_motion[0]) + root_scene + (0, 0, ground_offset)`
//!
//! `W` is a rotation about the vertical axis only, so bone lengths survive.

use std::fmt;
use std::path::PathBuf;

use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    apply_handedness, is_rotation, project, world_to_camera, CameraModel, GeometryError,
    HandednessCorrection,
};
use crate::skeleton::{map_schema_2d, FrameTag, Pose2DSequence, Pose3DSequence, SchemaMapping, SkeletonError};

/// World up direction.
pub const UP: Vector3<f64> = Vector3::new(0.0, 0.0, 1.0);

const DEGENERATE_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("no scenes or no motions to pair")]
    EmptyInput,
    #[error("pairing policy `{0}` produced an empty corpus")]
    EmptyCorpus(String),
    #[error("invalid scene {id}: {reason}")]
    InvalidScene { id: String, reason: String },
    #[error("invalid motion {id}: {reason}")]
    InvalidMotion { id: String, reason: String },
    #[error("invalid alignment transform: {0}")]
    InvalidTransform(String),
    #[error("placement rejected: joint behind camera at frame {frame}, joint {joint}")]
    BehindCamera { frame: usize, joint: usize },
    #[error("placement rejected: {fraction:.3} of joints project outside the image (limit {limit})")]
    OutOfFrame { fraction: f64, limit: f64 },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Skeleton(#[from] SkeletonError),
}

pub type Result<T, E = FusionError> = std::result::Result<T, E>;

/// `(dataset, sample)` identifier pair.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SampleRef {
    pub dataset: String,
    pub sample: String,
}

impl fmt::Display for SampleRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.dataset, self.sample)
    }
}

/// Appearance and camera source: reference images, a camera, and the root
/// placement a fused person should take.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSample {
    pub dataset_id: String,
    pub sample_id: String,
    pub reference_frame_paths: Vec<PathBuf>,
    pub camera: CameraModel,
    pub root_position: Vector3<f64>,
    facing: Vector3<f64>,
    pub ground_height: f64,
}

impl SceneSample {
    pub fn new(
        dataset_id: impl Into<String>,
        sample_id: impl Into<String>,
        reference_frame_paths: Vec<PathBuf>,
        camera: CameraModel,
        root_position: Vector3<f64>,
        facing: Vector3<f64>,
        ground_height: f64,
    ) -> Result<Self> {
        let scene = SceneSample {
            dataset_id: dataset_id.into(),
            sample_id: sample_id.into(),
            reference_frame_paths,
            camera,
            root_position,
            facing,
            ground_height,
        };
        let fail = |reason: &str| FusionError::InvalidScene {
            id: scene.reference().to_string(),
            reason: reason.to_string(),
        };
        if scene.reference_frame_paths.is_empty() {
            return Err(fail("no reference frames"));
        }
        if (scene.facing.norm() - 1.0).abs() > 1e-6 {
            return Err(fail("facing direction is not unit-norm"));
        }
        if !root_position.iter().all(|v| v.is_finite()) || !ground_height.is_finite() {
            return Err(fail("non-finite placement"));
        }
        Ok(scene)
    }

    pub fn facing(&self) -> &Vector3<f64> {
        &self.facing
    }

    pub fn reference(&self) -> SampleRef {
        SampleRef {
            dataset: self.dataset_id.clone(),
            sample: self.sample_id.clone(),
        }
    }
}

/// A world-frame motion sequence and the handedness fix its dataset needs.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSample {
    pub dataset_id: String,
    pub sample_id: String,
    motion: Pose3DSequence,
    pub handedness: HandednessCorrection,
}

impl MotionSample {
    pub fn new(
        dataset_id: impl Into<String>,
        sample_id: impl Into<String>,
        motion: Pose3DSequence,
        handedness: HandednessCorrection,
    ) -> Result<Self> {
        let sample = MotionSample {
            dataset_id: dataset_id.into(),
            sample_id: sample_id.into(),
            motion,
            handedness,
        };
        if sample.motion.frame_tag() != FrameTag::World {
            return Err(FusionError::InvalidMotion {
                id: sample.reference().to_string(),
                reason: "motion must be world-frame".into(),
            });
        }
        Ok(sample)
    }

    pub fn motion(&self) -> &Pose3DSequence {
        &self.motion
    }

    /// Root joint track; always equal to the root column of `motion`.
    pub fn root_trajectory(&self) -> Vec<Vector3<f64>> {
        self.motion.root_track()
    }

    /// The same sample with its handedness correction baked in.
    pub fn corrected(&self) -> MotionSample {
        MotionSample {
            dataset_id: self.dataset_id.clone(),
            sample_id: self.sample_id.clone(),
            motion: apply_handedness(&self.motion, self.handedness),
            handedness: HandednessCorrection::none(),
        }
    }

    pub fn reference(&self) -> SampleRef {
        SampleRef {
            dataset: self.dataset_id.clone(),
            sample: self.sample_id.clone(),
        }
    }
}

/// Vertical-axis rotation plus the residual translation applied after
/// re-rooting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentTransform {
    rotation_w: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl AlignmentTransform {
    pub fn new(rotation_w: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !is_rotation(&rotation_w, 1e-6) {
            return Err(FusionError::InvalidTransform(
                "rotation is not orthonormal with determinant +1".into(),
            ));
        }
        if (rotation_w * UP - UP).norm() > 1e-6 {
            return Err(FusionError::InvalidTransform(
                "rotation does not fix the vertical axis".into(),
            ));
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(FusionError::InvalidTransform("non-finite translation".into()));
        }
        Ok(Self {
            rotation_w,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation_w: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Rotation by `angle` radians about the vertical axis.
    pub fn about_vertical(angle: f64, translation: Vector3<f64>) -> Result<Self> {
        Self::new(
            Rotation3::from_axis_angle(&Vector3::z_axis(), angle).into_inner(),
            translation,
        )
    }

    pub fn rotation_w(&self) -> &Matrix3<f64> {
        &self.rotation_w
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum FusionWarning {
    /// Facing could not be derived; the identity rotation was used.
    DegenerateFacing { motion: String, reason: String },
}

impl fmt::Display for FusionWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FusionWarning::DegenerateFacing { motion, reason } => {
                write!(f, "{motion}: degenerate facing ({reason}); using identity rotation")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub transform: AlignmentTransform,
    pub warnings: Vec<FusionWarning>,
}

fn horizontal(v: &Vector3<f64>) -> Vector3<f64> {
    v - UP * v.dot(&UP)
}

/// Body forward direction at frame 0: `(left_hip - right_hip) x up`.
pub fn motion_facing(pose: &Pose3DSequence) -> std::result::Result<Vector3<f64>, String> {
    let (l, r) = pose
        .schema()
        .hips()
        .ok_or_else(|| format!("schema `{}` declares no hips", pose.schema().name()))?;
    let hip = pose.joint(0, l) - pose.joint(0, r);
    let flat = horizontal(&hip);
    if hip.norm() < DEGENERATE_TOL || flat.norm() <= DEGENERATE_TOL * hip.norm() {
        return Err("hip vector is vertical".into());
    }
    Ok(flat.cross(&UP).normalize())
}

/// Signed angle about the vertical axis taking `from` onto `to`.
fn vertical_angle(from: &Vector3<f64>, to: &Vector3<f64>) -> f64 {
    from.cross(to).dot(&UP).atan2(from.dot(to))
}

fn lowest_foot(pose: &Pose3DSequence) -> f64 {
    let feet = pose.schema().foot_indices();
    if feet.is_empty() {
        pose.data().iter().map(|p| p.dot(&UP)).fold(f64::INFINITY, f64::min)
    } else {
        pose.frames()
            .flat_map(|f| feet.iter().map(move |&j| f[j].dot(&UP)))
            .fold(f64::INFINITY, f64::min)
    }
}

fn place(motion: &Pose3DSequence, scene: &SceneSample, xf: &AlignmentTransform) -> Pose3DSequence {
    let root0 = motion.joint(0, motion.schema().root_index());
    // Written as R p + (offset - R root0) so the identity case is exact.
    let shift = scene.root_position + xf.translation - xf.rotation_w * root0;
    motion
        .map_points(FrameTag::World, |p| xf.rotation_w * p + shift)
        .expect("rigid placement of finite points stays finite")
}

/// Facing and ground-plane alignment of `motion` into `scene`.
pub fn compute_alignment(motion: &MotionSample, scene: &SceneSample) -> Alignment {
    let mut warnings = Vec::new();
    let target = horizontal(scene.facing());
    let angle = match motion_facing(&motion.motion) {
        Ok(_) if target.norm() <= DEGENERATE_TOL => {
            warnings.push(FusionWarning::DegenerateFacing {
                motion: motion.reference().to_string(),
                reason: "scene facing is vertical".into(),
            });
            0.0
        }
        Ok(facing) => vertical_angle(&facing, &target.normalize()),
        Err(reason) => {
            warnings.push(FusionWarning::DegenerateFacing {
                motion: motion.reference().to_string(),
                reason,
            });
            0.0
        }
    };
    for w in &warnings {
        log::warn!("{w}");
    }
    let rotation = Rotation3::from_axis_angle(&Vector3::z_axis(), angle).into_inner();
    let rooted = place(
        &motion.motion,
        scene,
        &AlignmentTransform {
            rotation_w: rotation,
            translation: Vector3::zeros(),
        },
    );
    let lift = scene.ground_height - lowest_foot(&rooted);
    Alignment {
        transform: AlignmentTransform {
            rotation_w: rotation,
            translation: UP * lift,
        },
        warnings,
    }
}

/// Applies `xf` to the (handedness-corrected) motion and rejects placements
/// with any joint behind the scene camera.
pub fn align(
    motion: &MotionSample,
    scene: &SceneSample,
    xf: &AlignmentTransform,
) -> Result<Pose3DSequence> {
    let placed = place(&motion.motion, scene, xf);
    let j = placed.num_joints();
    if let Some(i) = placed
        .data()
        .iter()
        .position(|p| scene.camera.to_camera(p).z <= 0.0)
    {
        return Err(FusionError::BehindCamera {
            frame: i / j,
            joint: i % j,
        });
    }
    Ok(placed)
}

/// Projected guidance keypoints in the generator schema.
pub fn make_guidance(
    gt_3d_world: &Pose3DSequence,
    cam: &CameraModel,
    mapping: &SchemaMapping,
) -> Result<Pose2DSequence> {
    let projected = project(&world_to_camera(gt_3d_world, cam)?, cam)?;
    Ok(map_schema_2d(&projected, mapping)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum PairingPolicy {
    All,
    CrossOnly,
    InDomainOnly,
    /// Seeded subsample of `k` pairs drawn from all non-self pairs.
    Random { k: usize, seed: u64 },
}

impl fmt::Display for PairingPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PairingPolicy::All => f.write_str("all"),
            PairingPolicy::CrossOnly => f.write_str("cross-only"),
            PairingPolicy::InDomainOnly => f.write_str("in-domain-only"),
            PairingPolicy::Random { k, seed } => write!(f, "random(k={k}, seed={seed})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Domain {
    Cross,
    InDomain,
}

/// One scene/motion pairing to be fused.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSpec {
    pub id: String,
    pub scene_index: usize,
    pub motion_index: usize,
    pub scene_ref: SampleRef,
    pub motion_ref: SampleRef,
    pub domain: Domain,
}

pub fn pair_id(scene: &SampleRef, motion: &SampleRef) -> String {
    format!("{scene}+{motion}")
}

/// Enumerates scene/motion pairings under `policy`. Self-pairs are never
/// produced.
pub fn cross_fuse(
    scenes: &[SceneSample],
    motions: &[MotionSample],
    policy: PairingPolicy,
) -> Result<Vec<PairSpec>> {
    if scenes.is_empty() || motions.is_empty() {
        return Err(FusionError::EmptyInput);
    }
    let mut candidates = Vec::new();
    for (si, s) in scenes.iter().enumerate() {
        let sr = s.reference();
        for (mi, m) in motions.iter().enumerate() {
            let mr = m.reference();
            if sr == mr {
                continue;
            }
            let domain = if sr.dataset == mr.dataset {
                Domain::InDomain
            } else {
                Domain::Cross
            };
            candidates.push(PairSpec {
                id: pair_id(&sr, &mr),
                scene_index: si,
                motion_index: mi,
                scene_ref: sr.clone(),
                motion_ref: mr,
                domain,
            });
        }
    }
    let selected: Vec<PairSpec> = match policy {
        PairingPolicy::All => candidates,
        PairingPolicy::CrossOnly => candidates
            .into_iter()
            .filter(|p| p.domain == Domain::Cross)
            .collect(),
        PairingPolicy::InDomainOnly => candidates
            .into_iter()
            .filter(|p| p.domain == Domain::InDomain)
            .collect(),
        PairingPolicy::Random { k, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut picked = sample(&mut rng, candidates.len(), k.min(candidates.len())).into_vec();
            picked.sort_unstable();
            picked.into_iter().map(|i| candidates[i].clone()).collect()
        }
    };
    if selected.is_empty() {
        return Err(FusionError::EmptyCorpus(policy.to_string()));
    }
    Ok(selected)
}

/// One synthetic datum: aligned ground truth, its camera-frame copy, the
/// projected guidance and, once available, generation and detection outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedSample {
    pub id: String,
    pub scene_ref: SampleRef,
    pub motion_ref: SampleRef,
    pub camera: CameraModel,
    pub gt_3d_world: Pose3DSequence,
    pub gt_3d_camera: Pose3DSequence,
    pub guidance_2d: Pose2DSequence,
    pub generated_frames_path: Option<PathBuf>,
    pub detected_2d: Option<Pose2DSequence>,
    pub quality_score: Option<f64>,
}

impl FusedSample {
    pub fn domain(&self) -> Domain {
        if self.scene_ref.dataset == self.motion_ref.dataset {
            Domain::InDomain
        } else {
            Domain::Cross
        }
    }

    /// Largest pixel gap between stored guidance and guidance re-derived
    /// from the world-frame ground truth.
    pub fn guidance_residual(&self, mapping: &SchemaMapping) -> Result<f64> {
        let fresh = make_guidance(&self.gt_3d_world, &self.camera, mapping)?;
        Ok(fresh
            .data()
            .iter()
            .zip(self.guidance_2d.data())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    /// Largest tolerated fraction of joint-frames projecting outside the
    /// image.
    pub max_outside_fraction: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            max_outside_fraction: 0.2,
        }
    }
}

/// Aligns, projects and frustum-checks one scene/motion pair.
pub fn fuse_pair(
    scene: &SceneSample,
    motion: &MotionSample,
    mapping: &SchemaMapping,
    cfg: &FusionConfig,
) -> Result<(FusedSample, Vec<FusionWarning>)> {
    let motion = motion.corrected();
    let Alignment {
        transform,
        warnings,
    } = compute_alignment(&motion, scene);
    let gt_3d_world = align(&motion, scene, &transform)?;
    let gt_3d_camera = world_to_camera(&gt_3d_world, &scene.camera)?;
    let projected = project(&gt_3d_camera, &scene.camera)?;
    let outside = projected
        .data()
        .iter()
        .filter(|uv| !scene.camera.contains(uv))
        .count();
    let fraction = outside as f64 / projected.data().len() as f64;
    if fraction > cfg.max_outside_fraction {
        return Err(FusionError::OutOfFrame {
            fraction,
            limit: cfg.max_outside_fraction,
        });
    }
    let guidance_2d = map_schema_2d(&projected, mapping)?;
    let (scene_ref, motion_ref) = (scene.reference(), motion.reference());
    Ok((
        FusedSample {
            id: pair_id(&scene_ref, &motion_ref),
            scene_ref,
            motion_ref,
            camera: scene.camera.clone(),
            gt_3d_world,
            gt_3d_camera,
            guidance_2d,
            generated_frames_path: None,
            detected_2d: None,
            quality_score: None,
        },
        warnings,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::{bone_lengths, h36m_17, JointSchema};
    use nalgebra::Unit;
    use std::sync::Arc;

    fn schema() -> Arc<JointSchema> {
        Arc::new(h36m_17())
    }

    /// Standing h36m pose near the origin, facing -Y, feet at z = 60.
    fn standing(frames: usize) -> Pose3DSequence {
        let base = [
            [0.0, 0.0, 900.0],
            [-100.0, 0.0, 900.0],
            [-100.0, 0.0, 480.0],
            [-100.0, 0.0, 60.0],
            [100.0, 0.0, 900.0],
            [100.0, 0.0, 480.0],
            [100.0, 0.0, 60.0],
            [0.0, 0.0, 1150.0],
            [0.0, 0.0, 1400.0],
            [0.0, 30.0, 1500.0],
            [0.0, 0.0, 1620.0],
            [180.0, 0.0, 1400.0],
            [200.0, 0.0, 1120.0],
            [210.0, 0.0, 880.0],
            [-180.0, 0.0, 1400.0],
            [-200.0, 0.0, 1120.0],
            [-210.0, 0.0, 880.0],
        ];
        let data = (0..frames)
            .flat_map(|t| {
                base.iter()
                    .map(move |p| Vector3::new(p[0] + 10.0 * t as f64, p[1], p[2] + (t as f64).sin() * 20.0))
            })
            .collect();
        Pose3DSequence::new(schema(), FrameTag::World, data).unwrap()
    }

    fn camera() -> CameraModel {
        CameraModel::look_at(
            Vector3::new(0.0, 5000.0, 1200.0),
            Vector3::new(0.0, 0.0, 900.0),
            UP,
            400.0,
            400.0,
            640,
            480,
        )
        .unwrap()
    }

    fn scene(root: Vector3<f64>, facing: Vector3<f64>, ground: f64) -> SceneSample {
        SceneSample::new("A", "s0", vec!["bg.png".into()], camera(), root, facing, ground).unwrap()
    }

    fn motion(pose: Pose3DSequence) -> MotionSample {
        MotionSample::new("B", "m0", pose, HandednessCorrection::none()).unwrap()
    }

    #[test]
    fn facing_of_standing_pose() {
        let f = motion_facing(&standing(1)).unwrap();
        assert!((f - Vector3::new(0.0, -1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn already_aligned_needs_only_ground_shift() {
        let m = motion(standing(3));
        let root = m.motion().joint(0, 0);
        let s = scene(root, Vector3::new(0.0, -1.0, 0.0), -25.0);
        let a = compute_alignment(&m, &s);
        assert!(a.warnings.is_empty());
        assert!((a.transform.rotation_w() - Matrix3::identity()).norm() < 1e-12);
        let t = a.transform.translation();
        assert_eq!((t.x, t.y), (0.0, 0.0));
        let min_foot = lowest_foot(m.motion());
        assert!((t.z - (-25.0 - min_foot)).abs() < 1e-9);
    }

    #[test]
    fn quarter_turn_matches_axis_angle() {
        let m = motion(standing(2));
        // Motion faces -Y; the scene wants +X: +90 degrees about +Z.
        let s = scene(Vector3::new(300.0, 0.0, 900.0), Vector3::new(1.0, 0.0, 0.0), 0.0);
        let a = compute_alignment(&m, &s);
        let oracle = Rotation3::from_axis_angle(&Unit::new_normalize(Vector3::new(0.0, 0.0, 1.0)), std::f64::consts::FRAC_PI_2);
        assert!((a.transform.rotation_w() - oracle.matrix()).norm() < 1e-9);
        let placed = align(&m, &s, &a.transform).unwrap();
        let f = motion_facing(&placed).unwrap();
        assert!((f - Vector3::new(1.0, 0.0, 0.0)).norm() < 1e-9);
    }

    #[test]
    fn vertical_hips_fall_back_to_identity() {
        let mut data = standing(1).data().to_vec();
        data[4] = data[1] + Vector3::new(0.0, 0.0, 100.0);
        let m = motion(Pose3DSequence::new(schema(), FrameTag::World, data).unwrap());
        let s = scene(Vector3::new(0.0, 0.0, 900.0), Vector3::new(1.0, 0.0, 0.0), 0.0);
        let a = compute_alignment(&m, &s);
        assert_eq!(a.transform.rotation_w(), &Matrix3::identity());
        assert!(matches!(a.warnings.as_slice(), [FusionWarning::DegenerateFacing { .. }]));
    }

    #[test]
    fn identity_collapse_is_exact() {
        let m = motion(standing(4));
        let s = scene(m.motion().joint(0, 0), Vector3::new(0.0, -1.0, 0.0), 0.0);
        let out = align(&m, &s, &AlignmentTransform::identity()).unwrap();
        assert_eq!(out.data(), m.motion().data());
    }

    #[test]
    fn pure_translation() {
        let m = motion(standing(2));
        let target = Vector3::new(250.0, -300.0, 870.0);
        let s = scene(target, Vector3::new(0.0, 1.0, 0.0), 0.0);
        let out = align(&m, &s, &AlignmentTransform::identity()).unwrap();
        let shift = target - m.motion().joint(0, 0);
        for (a, b) in out.data().iter().zip(m.motion().data()) {
            assert!((a - (b + shift)).norm() < 1e-9);
        }
    }

    #[test]
    fn alignment_keeps_bones_and_touches_ground() {
        let m = motion(standing(5));
        let s = scene(Vector3::new(-400.0, 500.0, 1000.0), Unit::new_normalize(Vector3::new(1.0, -2.0, 0.0)).into_inner(), 35.0);
        let a = compute_alignment(&m, &s);
        let out = align(&m, &s, &a.transform).unwrap();
        for t in 0..5 {
            let before = bone_lengths(m.motion(), t).unwrap();
            let after = bone_lengths(&out, t).unwrap();
            for (x, y) in before.iter().zip(&after) {
                assert!((x - y).abs() < 1e-9);
            }
        }
        assert!((lowest_foot(&out) - 35.0).abs() < 1e-6);
    }

    #[test]
    fn behind_camera_rejected() {
        let m = motion(standing(1));
        let s = scene(Vector3::new(0.0, 8000.0, 900.0), Vector3::new(0.0, 1.0, 0.0), 0.0);
        assert!(matches!(
            align(&m, &s, &AlignmentTransform::identity()),
            Err(FusionError::BehindCamera { .. })
        ));
    }

    #[test]
    fn transform_must_fix_vertical() {
        let tilt = Rotation3::from_axis_angle(&Vector3::x_axis(), 0.2).into_inner();
        assert!(AlignmentTransform::new(tilt, Vector3::zeros()).is_err());
        assert!(AlignmentTransform::about_vertical(1.0, Vector3::zeros()).is_ok());
    }

    fn named(dataset: &str, id: &str) -> (SceneSample, MotionSample) {
        let mut s = scene(Vector3::new(0.0, 0.0, 900.0), Vector3::new(0.0, 1.0, 0.0), 0.0);
        s.dataset_id = dataset.into();
        s.sample_id = id.into();
        let m = MotionSample::new(dataset, id, standing(2), HandednessCorrection::none()).unwrap();
        (s, m)
    }

    #[test]
    fn pairing_counts() {
        let scenes: Vec<_> = ["0", "1"].iter().map(|i| named("A", i).0).collect();
        let motions: Vec<_> = ["0", "1"].iter().map(|i| named("B", i).1).collect();
        let pairs = cross_fuse(&scenes, &motions, PairingPolicy::CrossOnly).unwrap();
        assert_eq!(pairs.len(), 4);
        assert_eq!(pairs[0].id, "A.0+B.0");
        assert!(matches!(
            cross_fuse(&scenes, &motions, PairingPolicy::InDomainOnly),
            Err(FusionError::EmptyCorpus(_))
        ));

        let (s3, m3): (Vec<_>, Vec<_>) = ["0", "1", "2"].iter().map(|i| named("A", i)).unzip();
        let pairs = cross_fuse(&s3, &m3, PairingPolicy::InDomainOnly).unwrap();
        assert_eq!(pairs.len(), 6);
        assert!(pairs.iter().all(|p| p.scene_ref != p.motion_ref));
        assert_eq!(cross_fuse(&s3, &m3, PairingPolicy::All).unwrap().len(), 6);
        assert!(matches!(cross_fuse(&[], &m3, PairingPolicy::All), Err(FusionError::EmptyInput)));
    }

    #[test]
    fn random_policy_is_reproducible() {
        let (mut s, mut m): (Vec<_>, Vec<_>) = (0..5).map(|i| named("A", &i.to_string())).unzip();
        let (s2, m2): (Vec<_>, Vec<_>) = (0..5).map(|i| named("B", &i.to_string())).unzip();
        s.extend(s2);
        m.extend(m2);
        let policy = PairingPolicy::Random { k: 17, seed: 42 };
        let a: Vec<String> = cross_fuse(&s, &m, policy).unwrap().into_iter().map(|p| p.id).collect();
        let b: Vec<String> = cross_fuse(&s, &m, policy).unwrap().into_iter().map(|p| p.id).collect();
        assert_eq!(a, b);
        assert_eq!(a.len(), 17);
        let c: Vec<String> = cross_fuse(&s, &m, PairingPolicy::Random { k: 17, seed: 43 })
            .unwrap()
            .into_iter()
            .map(|p| p.id)
            .collect();
        assert_ne!(a, c);
    }

    #[test]
    fn fused_guidance_is_consistent() {
        let coco = Arc::new(crate::skeleton::coco_body());
        let mapping = crate::skeleton::h36m_to_coco_body(schema(), coco).unwrap();
        let (s, _) = named("A", "0");
        let (_, m) = named("B", "0");
        let (fused, _) = fuse_pair(&s, &m, &mapping, &FusionConfig::default()).unwrap();
        assert_eq!(fused.id, "A.0+B.0");
        assert_eq!(fused.domain(), Domain::Cross);
        assert!(fused.guidance_residual(&mapping).unwrap() < 1e-6);
    }

    #[test]
    fn out_of_frame_rejected() {
        let mapping = crate::skeleton::SchemaMapping::identity(schema());
        let (mut s, _) = named("A", "0");
        s.root_position = Vector3::new(6000.0, 0.0, 900.0);
        let (_, m) = named("B", "0");
        assert!(matches!(
            fuse_pair(&s, &m, &mapping, &FusionConfig::default()),
            Err(FusionError::OutOfFrame { .. })
        ));
    }

    #[test]
    fn guidance_composes_step_by_step() {
        let mapping = crate::skeleton::SchemaMapping::identity(schema());
        let m = standing(3);
        let cam = camera();
        let g = make_guidance(&m, &cam, &mapping).unwrap();
        let manual = map_schema_2d(&project(&world_to_camera(&m, &cam).unwrap(), &cam).unwrap(), &mapping).unwrap();
        assert_eq!(g, manual);
    }
}
