//! Pinhole cameras and the world -> camera -> image chain.
//!
//! Convention: right-handed, +Z forward, image origin top-left with v
//! growing downward. 3D in millimeters, 2D in pixels. No lens distortion.

use std::path::Path;

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::skeleton::{FrameTag, Pose2DSequence, Pose3DSequence, SkeletonError};

/// The only camera convention understood by the file format.
pub const CONVENTION: &str = "rh-z-forward";

/// Width of the reference camera plane used for 2D error normalization.
pub const NORMALIZED_WIDTH: f64 = 2000.0;

const ORTHO_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("expected a {expected}-frame pose, got {found}")]
    WrongFrame { expected: FrameTag, found: FrameTag },
    #[error("invalid input at frame {frame}, joint {joint}: non-finite coordinate")]
    NonFinite { frame: usize, joint: usize },
    #[error("joint behind camera at frame {frame}, joint {joint} (depth {depth} mm)")]
    BehindCamera { frame: usize, joint: usize, depth: f64 },
    #[error("handedness axis {0} out of range")]
    BadAxis(usize),
    #[error(transparent)]
    Pose(#[from] SkeletonError),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed camera json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = GeometryError> = std::result::Result<T, E>;

/// Pinhole intrinsics plus a rigid world -> camera transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CameraFile", into = "CameraFile")]
pub struct CameraModel {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub image_width: u32,
    pub image_height: u32,
}

/// On-disk camera layout. `rotation` is row-major.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct CameraFile {
    rotation: [f64; 9],
    translation: [f64; 3],
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    image_width: u32,
    image_height: u32,
    convention: String,
}

impl TryFrom<CameraFile> for CameraModel {
    type Error = GeometryError;

    fn try_from(f: CameraFile) -> Result<Self> {
        if f.convention != CONVENTION {
            return Err(GeometryError::InvalidCamera(format!(
                "unsupported convention `{}`",
                f.convention
            )));
        }
        CameraModel::new(
            Matrix3::from_row_slice(&f.rotation),
            Vector3::from(f.translation),
            f.fx,
            f.fy,
            f.cx,
            f.cy,
            f.image_width,
            f.image_height,
        )
    }
}

impl From<CameraModel> for CameraFile {
    fn from(c: CameraModel) -> Self {
        let r = c.rotation;
        CameraFile {
            rotation: [
                r[(0, 0)],
                r[(0, 1)],
                r[(0, 2)],
                r[(1, 0)],
                r[(1, 1)],
                r[(1, 2)],
                r[(2, 0)],
                r[(2, 1)],
                r[(2, 2)],
            ],
            translation: c.translation.into(),
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            image_width: c.image_width,
            image_height: c.image_height,
            convention: CONVENTION.to_string(),
        }
    }
}

/// True when `r` is orthonormal with determinant +1 within `tol`.
pub fn is_rotation(r: &Matrix3<f64>, tol: f64) -> bool {
    let gram = r.transpose() * r - Matrix3::identity();
    gram.iter().all(|v| v.abs() <= tol) && (r.determinant() - 1.0).abs() <= tol
}

impl CameraModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        image_width: u32,
        image_height: u32,
    ) -> Result<Self> {
        let bad = |m: &str| Err(GeometryError::InvalidCamera(m.to_string()));
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite())
            || ![fx, fy, cx, cy].iter().all(|v| v.is_finite())
        {
            return bad("non-finite parameter");
        }
        if !is_rotation(&rotation, ORTHO_TOL) {
            return bad("rotation is not orthonormal with determinant +1");
        }
        if fx <= 0.0 || fy <= 0.0 {
            return bad("focal lengths must be positive");
        }
        if image_width == 0 || image_height == 0 {
            return bad("image size must be positive");
        }
        if !(0.0..image_width as f64).contains(&cx) || !(0.0..image_height as f64).contains(&cy) {
            return bad("principal point outside the image");
        }
        Ok(CameraModel {
            rotation,
            translation,
            fx,
            fy,
            cx,
            cy,
            image_width,
            image_height,
        })
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Pinhole projection of a camera-frame point; `None` when `z <= 0`.
    pub fn project_point(&self, p: &Vector3<f64>) -> Option<Vector2<f64>> {
        if p.z <= 0.0 {
            return None;
        }
        Some(Vector2::new(
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        ))
    }

    pub fn contains(&self, uv: &Vector2<f64>) -> bool {
        uv.x >= 0.0
            && uv.y >= 0.0
            && uv.x < self.image_width as f64
            && uv.y < self.image_height as f64
    }

    /// Camera centre in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    /// Scale taking image pixels to the 2000-px-wide reference plane.
    pub fn normalization_scale(&self) -> f64 {
        NORMALIZED_WIDTH / self.image_width as f64
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("camera serializes")
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| GeometryError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Camera at `position` (world, mm) looking at `target`, with `up` as the
    /// world's up direction. Image v grows along -up.
    #[allow(clippy::too_many_arguments)]
    pub fn look_at(
        position: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        fx: f64,
        fy: f64,
        image_width: u32,
        image_height: u32,
    ) -> Result<Self> {
        let forward = (target - position).normalize();
        let right = forward.cross(&up);
        if right.norm() < 1e-9 {
            return Err(GeometryError::InvalidCamera(
                "viewing direction parallel to up".into(),
            ));
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * position);
        Self::new(
            rotation,
            translation,
            fx,
            fy,
            image_width as f64 / 2.0,
            image_height as f64 / 2.0,
            image_width,
            image_height,
        )
    }
}

/// Optional axis negation reconciling left- and right-handed datasets.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HandednessCorrection {
    flip_axis: Option<usize>,
}

impl HandednessCorrection {
    pub fn none() -> Self {
        Self { flip_axis: None }
    }

    pub fn flip(axis: usize) -> Result<Self> {
        if axis > 2 {
            return Err(GeometryError::BadAxis(axis));
        }
        Ok(Self {
            flip_axis: Some(axis),
        })
    }

    pub fn flip_axis(&self) -> Option<usize> {
        self.flip_axis
    }
}

/// `X = R·Y + t` for every joint.
pub fn world_to_camera(pose: &Pose3DSequence, cam: &CameraModel) -> Result<Pose3DSequence> {
    if pose.frame_tag() != FrameTag::World {
        return Err(GeometryError::WrongFrame {
            expected: FrameTag::World,
            found: pose.frame_tag(),
        });
    }
    let j = pose.num_joints();
    let mut out = Vec::with_capacity(pose.data().len());
    for (i, p) in pose.data().iter().enumerate() {
        let q = cam.to_camera(p);
        if !q.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite {
                frame: i / j,
                joint: i % j,
            });
        }
        out.push(q);
    }
    Ok(Pose3DSequence::new(pose.schema().clone(), FrameTag::Camera, out)?)
}

/// Pinhole projection of a camera-frame sequence; every confidence is 1.
pub fn project(pose: &Pose3DSequence, cam: &CameraModel) -> Result<Pose2DSequence> {
    if pose.frame_tag() != FrameTag::Camera {
        return Err(GeometryError::WrongFrame {
            expected: FrameTag::Camera,
            found: pose.frame_tag(),
        });
    }
    let j = pose.num_joints();
    let uv = pose
        .data()
        .iter()
        .enumerate()
        .map(|(i, p)| {
            cam.project_point(p).ok_or(GeometryError::BehindCamera {
                frame: i / j,
                joint: i % j,
                depth: p.z,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Pose2DSequence::with_full_confidence(pose.schema().clone(), uv)?)
}

pub fn apply_handedness(pose: &Pose3DSequence, corr: HandednessCorrection) -> Pose3DSequence {
    match corr.flip_axis {
        None => pose.clone(),
        Some(axis) => pose
            .map_points(pose.frame_tag(), |p| {
                let mut q = *p;
                q[axis] = -q[axis];
                q
            })
            .expect("negation preserves finiteness"),
    }
}

/// Rescales keypoints to the 2000-px-wide reference plane, preserving
/// aspect ratio.
pub fn normalize_2d(kps: &Pose2DSequence, cam: &CameraModel) -> Pose2DSequence {
    kps.scaled(cam.normalization_scale())
        .expect("positive scaling preserves validity")
}
