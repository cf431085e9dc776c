//! Joint schemas, pose-sequence containers and the keypoint-format mapper.
//!
//! Two schemas ship built in: `h36m-17` (the Human3.6M 17-joint layout used
//! for 3D ground truth) and `coco-body` (the 17 body points of the
//! COCO-WholeBody guidance format). Face points of the guidance format are
//! carried as drop entries in the built-in mapping.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SkeletonError {
    #[error("invalid schema `{name}`: {reason}")]
    InvalidSchema { name: String, reason: String },
    #[error("non-finite coordinate at frame {frame}, joint {joint}")]
    NonFinite { frame: usize, joint: usize },
    #[error("confidence {value} out of [0, 1] at frame {frame}, joint {joint}")]
    InvalidConfidence { frame: usize, joint: usize, value: f64 },
    #[error("pose data length {len} is not a positive multiple of joint count {joints}")]
    BadShape { len: usize, joints: usize },
    #[error("schema mismatch: expected `{expected}`, found `{found}`")]
    SchemaMismatch { expected: String, found: String },
    #[error("invalid mapping: {0}")]
    InvalidMapping(String),
    #[error("3D mapping drops target joint {target}; 3D ground truth must stay complete")]
    DroppedJoint3d { target: usize },
    #[error("frame index {frame} out of range for a {len}-frame sequence")]
    FrameOutOfRange { frame: usize, len: usize },
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed json in {path}: {source}")]
    Json { path: String, source: serde_json::Error },
}

pub type Result<T, E = SkeletonError> = std::result::Result<T, E>;

/// Ordered joint list with its kinematic tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SchemaFile", into = "SchemaFile")]
pub struct JointSchema {
    name: String,
    joints: Vec<String>,
    root_index: usize,
    bones: Vec<(usize, usize)>,
    left_right_pairs: Vec<(usize, usize)>,
    foot_indices: Vec<usize>,
    hips: Option<(usize, usize)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SchemaFile {
    name: String,
    joints: Vec<String>,
    root: usize,
    bones: Vec<(usize, usize)>,
    #[serde(default)]
    pairs: Vec<(usize, usize)>,
    #[serde(default)]
    feet: Vec<usize>,
    /// `[left_hip, right_hip]`, used to derive a body facing direction.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hips: Option<(usize, usize)>,
}

impl TryFrom<SchemaFile> for JointSchema {
    type Error = SkeletonError;

    fn try_from(f: SchemaFile) -> Result<Self> {
        JointSchema::new(f.name, f.joints, f.root, f.bones, f.pairs, f.feet, f.hips)
    }
}

impl From<JointSchema> for SchemaFile {
    fn from(s: JointSchema) -> Self {
        SchemaFile {
            name: s.name,
            joints: s.joints,
            root: s.root_index,
            bones: s.bones,
            pairs: s.left_right_pairs,
            feet: s.foot_indices,
            hips: s.hips,
        }
    }
}

impl JointSchema {
    pub fn new(
        name: impl Into<String>,
        joints: Vec<String>,
        root_index: usize,
        bones: Vec<(usize, usize)>,
        left_right_pairs: Vec<(usize, usize)>,
        foot_indices: Vec<usize>,
        hips: Option<(usize, usize)>,
    ) -> Result<Self> {
        let schema = JointSchema {
            name: name.into(),
            joints,
            root_index,
            bones,
            left_right_pairs,
            foot_indices,
            hips,
        };
        schema.validate()?;
        Ok(schema)
    }

    fn validate(&self) -> Result<()> {
        let fail = |reason: String| SkeletonError::InvalidSchema {
            name: self.name.clone(),
            reason,
        };
        let n = self.joints.len();
        if n == 0 {
            return Err(fail("no joints".into()));
        }
        let mut seen = HashSet::new();
        for j in &self.joints {
            if !seen.insert(j.as_str()) {
                return Err(fail(format!("duplicate joint name `{j}`")));
            }
        }
        let in_range = |i: usize| i < n;
        if !in_range(self.root_index) {
            return Err(fail(format!("root index {} out of range", self.root_index)));
        }
        let pair_ok = |&(a, b): &(usize, usize)| in_range(a) && in_range(b);
        if !self.bones.iter().all(pair_ok) {
            return Err(fail("bone index out of range".into()));
        }
        if !self.left_right_pairs.iter().all(pair_ok) {
            return Err(fail("left/right pair index out of range".into()));
        }
        if !self.foot_indices.iter().all(|&i| in_range(i)) {
            return Err(fail("foot index out of range".into()));
        }
        if let Some(h) = self.hips {
            if !pair_ok(&h) || h.0 == h.1 {
                return Err(fail("invalid hip pair".into()));
            }
        }

        // A tree over n joints has n-1 edges, every non-root joint has one
        // parent, and everything is reachable from the root.
        if self.bones.len() != n - 1 {
            return Err(fail(format!(
                "{} bones for {} joints; a tree needs {}",
                self.bones.len(),
                n,
                n - 1
            )));
        }
        let mut parent = vec![None; n];
        for &(p, c) in &self.bones {
            if c == self.root_index {
                return Err(fail("root joint has a parent".into()));
            }
            if parent[c].replace(p).is_some() {
                return Err(fail(format!("joint {c} has two parents")));
            }
        }
        let mut reached = vec![false; n];
        reached[self.root_index] = true;
        let mut stack = vec![self.root_index];
        while let Some(j) = stack.pop() {
            for &(p, c) in &self.bones {
                if p == j && !reached[c] {
                    reached[c] = true;
                    stack.push(c);
                }
            }
        }
        if let Some(j) = reached.iter().position(|r| !r) {
            return Err(fail(format!("joint {j} unreachable from root")));
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn joints(&self) -> &[String] {
        &self.joints
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    pub fn root_index(&self) -> usize {
        self.root_index
    }

    pub fn bones(&self) -> &[(usize, usize)] {
        &self.bones
    }

    pub fn left_right_pairs(&self) -> &[(usize, usize)] {
        &self.left_right_pairs
    }

    pub fn foot_indices(&self) -> &[usize] {
        &self.foot_indices
    }

    /// `(left_hip, right_hip)` when the schema declares them.
    pub fn hips(&self) -> Option<(usize, usize)> {
        self.hips
    }

    pub fn index_of(&self, joint: &str) -> Option<usize> {
        self.joints.iter().position(|j| j == joint)
    }

    pub fn builtin(name: &str) -> Option<JointSchema> {
        match name {
            H36M_17 => Some(h36m_17()),
            COCO_BODY => Some(coco_body()),
            _ => None,
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| SkeletonError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| SkeletonError::Json {
            path: path.display().to_string(),
            source,
        })
    }

    /// Resolves a built-in name, falling back to a schema file path.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        match Self::builtin(name_or_path) {
            Some(s) => Ok(s),
            None => Self::from_file(Path::new(name_or_path)),
        }
    }
}

impl fmt::Display for JointSchema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({} joints)", self.name, self.joints.len())
    }
}

pub const H36M_17: &str = "h36m-17";
pub const COCO_BODY: &str = "coco-body";

fn names(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

/// Human3.6M 17-joint layout, rooted at the pelvis.
pub fn h36m_17() -> JointSchema {
    JointSchema::new(
        H36M_17,
        names(&[
            "pelvis",
            "right_hip",
            "right_knee",
            "right_ankle",
            "left_hip",
            "left_knee",
            "left_ankle",
            "spine",
            "thorax",
            "neck_nose",
            "head",
            "left_shoulder",
            "left_elbow",
            "left_wrist",
            "right_shoulder",
            "right_elbow",
            "right_wrist",
        ]),
        0,
        vec![
            (0, 1),
            (1, 2),
            (2, 3),
            (0, 4),
            (4, 5),
            (5, 6),
            (0, 7),
            (7, 8),
            (8, 9),
            (9, 10),
            (8, 11),
            (11, 12),
            (12, 13),
            (8, 14),
            (14, 15),
            (15, 16),
        ],
        vec![(4, 1), (5, 2), (6, 3), (11, 14), (12, 15), (13, 16)],
        vec![3, 6],
        Some((4, 1)),
    )
    .expect("built-in schema is valid")
}

/// The 17 body keypoints of COCO-WholeBody. There is no pelvis, so the tree
/// is rooted at the nose.
pub fn coco_body() -> JointSchema {
    JointSchema::new(
        COCO_BODY,
        names(&[
            "nose",
            "left_eye",
            "right_eye",
            "left_ear",
            "right_ear",
            "left_shoulder",
            "right_shoulder",
            "left_elbow",
            "right_elbow",
            "left_wrist",
            "right_wrist",
            "left_hip",
            "right_hip",
            "left_knee",
            "right_knee",
            "left_ankle",
            "right_ankle",
        ]),
        0,
        vec![
            (0, 1),
            (0, 2),
            (1, 3),
            (2, 4),
            (0, 5),
            (0, 6),
            (5, 7),
            (7, 9),
            (6, 8),
            (8, 10),
            (5, 11),
            (6, 12),
            (11, 13),
            (13, 15),
            (12, 14),
            (14, 16),
        ],
        vec![
            (1, 2),
            (3, 4),
            (5, 6),
            (7, 8),
            (9, 10),
            (11, 12),
            (13, 14),
            (15, 16),
        ],
        vec![15, 16],
        Some((11, 12)),
    )
    .expect("built-in schema is valid")
}

/// Whether a sequence lives in world or camera coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameTag {
    World,
    Camera,
}

impl fmt::Display for FrameTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FrameTag::World => f.write_str("world"),
            FrameTag::Camera => f.write_str("camera"),
        }
    }
}

fn check_shape(len: usize, joints: usize) -> Result<usize> {
    if joints == 0 || len == 0 || !len.is_multiple_of(joints) {
        return Err(SkeletonError::BadShape { len, joints });
    }
    Ok(len / joints)
}

fn same_schema(a: &Arc<JointSchema>, b: &Arc<JointSchema>) -> bool {
    Arc::ptr_eq(a, b) || a == b
}

pub(crate) fn ensure_schema(expected: &Arc<JointSchema>, found: &Arc<JointSchema>) -> Result<()> {
    if same_schema(expected, found) {
        Ok(())
    } else {
        Err(SkeletonError::SchemaMismatch {
            expected: expected.name().to_string(),
            found: found.name().to_string(),
        })
    }
}

/// `T x J` joint positions in millimeters, frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose3DSequence {
    schema: Arc<JointSchema>,
    frame_tag: FrameTag,
    frames: usize,
    data: Vec<Vector3<f64>>,
}

impl Pose3DSequence {
    pub fn new(
        schema: Arc<JointSchema>,
        frame_tag: FrameTag,
        data: Vec<Vector3<f64>>,
    ) -> Result<Self> {
        let joints = schema.len();
        let frames = check_shape(data.len(), joints)?;
        for (i, p) in data.iter().enumerate() {
            if !p.iter().all(|v| v.is_finite()) {
                return Err(SkeletonError::NonFinite {
                    frame: i / joints,
                    joint: i % joints,
                });
            }
        }
        Ok(Pose3DSequence {
            schema,
            frame_tag,
            frames,
            data,
        })
    }

    pub fn from_frames(
        schema: Arc<JointSchema>,
        frame_tag: FrameTag,
        frames: Vec<Vec<Vector3<f64>>>,
    ) -> Result<Self> {
        let joints = schema.len();
        if let Some(f) = frames.iter().find(|f| f.len() != joints) {
            return Err(SkeletonError::BadShape {
                len: f.len(),
                joints,
            });
        }
        Self::new(schema, frame_tag, frames.into_iter().flatten().collect())
    }

    pub fn schema(&self) -> &Arc<JointSchema> {
        &self.schema
    }

    pub fn frame_tag(&self) -> FrameTag {
        self.frame_tag
    }

    pub fn num_frames(&self) -> usize {
        self.frames
    }

    pub fn num_joints(&self) -> usize {
        self.schema.len()
    }

    pub fn data(&self) -> &[Vector3<f64>] {
        &self.data
    }

    pub fn frame(&self, t: usize) -> &[Vector3<f64>] {
        let j = self.num_joints();
        &self.data[t * j..(t + 1) * j]
    }

    pub fn joint(&self, t: usize, j: usize) -> Vector3<f64> {
        self.data[t * self.num_joints() + j]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[Vector3<f64>]> {
        self.data.chunks_exact(self.num_joints())
    }

    /// Root joint position per frame.
    pub fn root_track(&self) -> Vec<Vector3<f64>> {
        let r = self.schema.root_index();
        self.frames().map(|f| f[r]).collect()
    }

    /// Same geometry, relabelled frame.
    pub fn retagged(mut self, frame_tag: FrameTag) -> Self {
        self.frame_tag = frame_tag;
        self
    }

    /// Applies `f` to every joint, revalidating finiteness.
    pub fn map_points(
        &self,
        frame_tag: FrameTag,
        mut f: impl FnMut(&Vector3<f64>) -> Vector3<f64>,
    ) -> Result<Self> {
        Self::new(
            self.schema.clone(),
            frame_tag,
            self.data.iter().map(&mut f).collect(),
        )
    }

    /// Subtracts the root joint from every joint, frame by frame.
    pub fn root_relative(&self) -> Self {
        let r = self.schema.root_index();
        let data = self
            .frames()
            .flat_map(|f| {
                let root = f[r];
                f.iter().map(move |p| p - root)
            })
            .collect();
        Pose3DSequence {
            schema: self.schema.clone(),
            frame_tag: self.frame_tag,
            frames: self.frames,
            data,
        }
    }
}

/// `T x J` image-plane keypoints in pixels, with per-joint confidence.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose2DSequence {
    schema: Arc<JointSchema>,
    frames: usize,
    data: Vec<Vector2<f64>>,
    confidence: Vec<f64>,
}

impl Pose2DSequence {
    pub fn new(
        schema: Arc<JointSchema>,
        data: Vec<Vector2<f64>>,
        confidence: Vec<f64>,
    ) -> Result<Self> {
        let joints = schema.len();
        let frames = check_shape(data.len(), joints)?;
        if confidence.len() != data.len() {
            return Err(SkeletonError::BadShape {
                len: confidence.len(),
                joints,
            });
        }
        for (i, (p, &c)) in data.iter().zip(&confidence).enumerate() {
            if !p.iter().all(|v| v.is_finite()) {
                return Err(SkeletonError::NonFinite {
                    frame: i / joints,
                    joint: i % joints,
                });
            }
            if !(0.0..=1.0).contains(&c) {
                return Err(SkeletonError::InvalidConfidence {
                    frame: i / joints,
                    joint: i % joints,
                    value: c,
                });
            }
        }
        Ok(Pose2DSequence {
            schema,
            frames,
            data,
            confidence,
        })
    }

    /// All confidences set to one.
    pub fn with_full_confidence(schema: Arc<JointSchema>, data: Vec<Vector2<f64>>) -> Result<Self> {
        let confidence = vec![1.0; data.len()];
        Self::new(schema, data, confidence)
    }

    pub fn schema(&self) -> &Arc<JointSchema> {
        &self.schema
    }

    pub fn num_frames(&self) -> usize {
        self.frames
    }

    pub fn num_joints(&self) -> usize {
        self.schema.len()
    }

    pub fn data(&self) -> &[Vector2<f64>] {
        &self.data
    }

    pub fn confidence(&self) -> &[f64] {
        &self.confidence
    }

    pub fn frame(&self, t: usize) -> &[Vector2<f64>] {
        let j = self.num_joints();
        &self.data[t * j..(t + 1) * j]
    }

    pub fn frame_confidence(&self, t: usize) -> &[f64] {
        let j = self.num_joints();
        &self.confidence[t * j..(t + 1) * j]
    }

    pub fn joint(&self, t: usize, j: usize) -> Vector2<f64> {
        self.data[t * self.num_joints() + j]
    }

    pub fn joint_confidence(&self, t: usize, j: usize) -> f64 {
        self.confidence[t * self.num_joints() + j]
    }

    /// Scales every coordinate by `s`, keeping confidences.
    pub fn scaled(&self, s: f64) -> Result<Self> {
        Self::new(
            self.schema.clone(),
            self.data.iter().map(|p| p * s).collect(),
            self.confidence.clone(),
        )
    }
}

/// How one target joint is produced from the source schema.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Assignment {
    Copy(usize),
    Midpoint(usize, usize),
    Drop,
}

/// Per-target-joint rules taking poses from one schema into another.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemaMapping {
    source: Arc<JointSchema>,
    target: Arc<JointSchema>,
    assignments: Vec<Assignment>,
}

#[derive(Debug, Serialize, Deserialize)]
struct MappingFile {
    source: String,
    target: String,
    assignments: Vec<MappingEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct MappingEntry {
    target: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    copy: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    midpoint: Option<(usize, usize)>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    drop: bool,
}

impl SchemaMapping {
    /// `assignments[i]` produces target joint `i`.
    pub fn new(
        source: Arc<JointSchema>,
        target: Arc<JointSchema>,
        assignments: Vec<Assignment>,
    ) -> Result<Self> {
        if assignments.len() != target.len() {
            return Err(SkeletonError::InvalidMapping(format!(
                "{} assignments for {} target joints",
                assignments.len(),
                target.len()
            )));
        }
        let n = source.len();
        for (t, a) in assignments.iter().enumerate() {
            let ok = match *a {
                Assignment::Copy(s) => s < n,
                Assignment::Midpoint(a, b) => a < n && b < n,
                Assignment::Drop => true,
            };
            if !ok {
                return Err(SkeletonError::InvalidMapping(format!(
                    "target {t} references a source joint outside `{}`",
                    source.name()
                )));
            }
        }
        Ok(SchemaMapping {
            source,
            target,
            assignments,
        })
    }

    /// Copies every target joint from the source joint with the same name.
    pub fn by_name(source: Arc<JointSchema>, target: Arc<JointSchema>) -> Result<Self> {
        let assignments = target
            .joints()
            .iter()
            .map(|name| {
                source.index_of(name).map(Assignment::Copy).ok_or_else(|| {
                    SkeletonError::InvalidMapping(format!(
                        "`{name}` has no counterpart in `{}`",
                        source.name()
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(source, target, assignments)
    }

    pub fn identity(schema: Arc<JointSchema>) -> Self {
        let assignments = (0..schema.len()).map(Assignment::Copy).collect();
        SchemaMapping {
            source: schema.clone(),
            target: schema,
            assignments,
        }
    }

    pub fn source(&self) -> &Arc<JointSchema> {
        &self.source
    }

    pub fn target(&self) -> &Arc<JointSchema> {
        &self.target
    }

    pub fn assignments(&self) -> &[Assignment] {
        &self.assignments
    }

    /// Mapping equivalent to applying `self` and then `next`.
    pub fn then(&self, next: &SchemaMapping) -> Result<SchemaMapping> {
        ensure_schema(&next.source, &self.target)?;
        let assignments = next
            .assignments
            .iter()
            .map(|a| match *a {
                Assignment::Copy(m) => Ok(self.assignments[m]),
                Assignment::Drop => Ok(Assignment::Drop),
                Assignment::Midpoint(a, b) => match (self.assignments[a], self.assignments[b]) {
                    (Assignment::Copy(x), Assignment::Copy(y)) => Ok(Assignment::Midpoint(x, y)),
                    (Assignment::Drop, _) | (_, Assignment::Drop) => Ok(Assignment::Drop),
                    _ => Err(SkeletonError::InvalidMapping(
                        "midpoint of a midpoint is not a single-rule assignment".into(),
                    )),
                },
            })
            .collect::<Result<Vec<_>>>()?;
        SchemaMapping::new(self.source.clone(), next.target.clone(), assignments)
    }

    pub fn from_json(text: &str, source: Arc<JointSchema>, target: Arc<JointSchema>) -> Result<Self> {
        let file: MappingFile = serde_json::from_str(text).map_err(|source| SkeletonError::Json {
            path: "<mapping>".into(),
            source,
        })?;
        if file.source != source.name() || file.target != target.name() {
            return Err(SkeletonError::InvalidMapping(format!(
                "file maps `{}` -> `{}`, expected `{}` -> `{}`",
                file.source,
                file.target,
                source.name(),
                target.name()
            )));
        }
        let mut slots: Vec<Option<Assignment>> = vec![None; target.len()];
        for e in file.assignments {
            let rule = match (e.copy, e.midpoint, e.drop) {
                (Some(s), None, false) => Assignment::Copy(s),
                (None, Some((a, b)), false) => Assignment::Midpoint(a, b),
                (None, None, true) => Assignment::Drop,
                _ => {
                    return Err(SkeletonError::InvalidMapping(format!(
                        "target {} needs exactly one of copy/midpoint/drop",
                        e.target
                    )))
                }
            };
            let slot = slots.get_mut(e.target).ok_or_else(|| {
                SkeletonError::InvalidMapping(format!("target index {} out of range", e.target))
            })?;
            if slot.replace(rule).is_some() {
                return Err(SkeletonError::InvalidMapping(format!(
                    "target {} assigned twice",
                    e.target
                )));
            }
        }
        let assignments = slots
            .into_iter()
            .enumerate()
            .map(|(t, s)| {
                s.ok_or_else(|| SkeletonError::InvalidMapping(format!("target {t} unassigned")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(source, target, assignments)
    }

    pub fn to_json(&self) -> String {
        let file = MappingFile {
            source: self.source.name().to_string(),
            target: self.target.name().to_string(),
            assignments: self
                .assignments
                .iter()
                .enumerate()
                .map(|(target, a)| MappingEntry {
                    target,
                    copy: match a {
                        Assignment::Copy(s) => Some(*s),
                        _ => None,
                    },
                    midpoint: match a {
                        Assignment::Midpoint(x, y) => Some((*x, *y)),
                        _ => None,
                    },
                    drop: matches!(a, Assignment::Drop),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("mapping serializes")
    }

    pub fn from_file(path: &Path, source: Arc<JointSchema>, target: Arc<JointSchema>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| SkeletonError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::from_json(&text, source, target)
    }
}

/// Built-in `h36m-17` -> `coco-body` guidance mapping. The nose takes the
/// H36M neck/nose joint; eyes and ears are dropped.
pub fn h36m_to_coco_body(h36m: Arc<JointSchema>, coco: Arc<JointSchema>) -> Result<SchemaMapping> {
    let assignments = coco
        .joints()
        .iter()
        .map(|name| match name.as_str() {
            "nose" => h36m.index_of("neck_nose").map(Assignment::Copy),
            "left_eye" | "right_eye" | "left_ear" | "right_ear" => Some(Assignment::Drop),
            other => h36m.index_of(other).map(Assignment::Copy),
        })
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| SkeletonError::InvalidMapping("source is not h36m-17".into()))?;
    SchemaMapping::new(h36m, coco, assignments)
}

/// Built-in `coco-body` -> `h36m-17` mapping. Pelvis and thorax are hip and
/// shoulder midpoints; spine is approximated by the left-hip/right-shoulder
/// midpoint and head by the ear midpoint.
pub fn coco_body_to_h36m(coco: Arc<JointSchema>, h36m: Arc<JointSchema>) -> Result<SchemaMapping> {
    let idx = |n: &str| coco.index_of(n);
    let mid = |a: &str, b: &str| Some(Assignment::Midpoint(idx(a)?, idx(b)?));
    let assignments = h36m
        .joints()
        .iter()
        .map(|name| match name.as_str() {
            "pelvis" => mid("left_hip", "right_hip"),
            "spine" => mid("left_hip", "right_shoulder"),
            "thorax" => mid("left_shoulder", "right_shoulder"),
            "neck_nose" => idx("nose").map(Assignment::Copy),
            "head" => mid("left_ear", "right_ear"),
            other => idx(other).map(Assignment::Copy),
        })
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| SkeletonError::InvalidMapping("source is not coco-body".into()))?;
    SchemaMapping::new(coco, h36m, assignments)
}

pub fn map_schema_2d(kps: &Pose2DSequence, mapping: &SchemaMapping) -> Result<Pose2DSequence> {
    ensure_schema(&mapping.source, &kps.schema)?;
    let mut data = Vec::with_capacity(kps.num_frames() * mapping.target.len());
    let mut confidence = Vec::with_capacity(data.capacity());
    for t in 0..kps.num_frames() {
        let pts = kps.frame(t);
        let conf = kps.frame_confidence(t);
        for a in &mapping.assignments {
            let (p, c) = match *a {
                Assignment::Copy(s) => (pts[s], conf[s]),
                Assignment::Midpoint(x, y) => ((pts[x] + pts[y]) * 0.5, conf[x].min(conf[y])),
                Assignment::Drop => (Vector2::zeros(), 0.0),
            };
            data.push(p);
            confidence.push(c);
        }
    }
    Pose2DSequence::new(mapping.target.clone(), data, confidence)
}

pub fn map_schema_3d(pose: &Pose3DSequence, mapping: &SchemaMapping) -> Result<Pose3DSequence> {
    ensure_schema(&mapping.source, &pose.schema)?;
    if let Some(target) = mapping
        .assignments
        .iter()
        .position(|a| *a == Assignment::Drop)
    {
        return Err(SkeletonError::DroppedJoint3d { target });
    }
    let mut data = Vec::with_capacity(pose.num_frames() * mapping.target.len());
    for frame in pose.frames() {
        for a in &mapping.assignments {
            data.push(match *a {
                Assignment::Copy(s) => frame[s],
                Assignment::Midpoint(x, y) => (frame[x] + frame[y]) * 0.5,
                Assignment::Drop => unreachable!(),
            });
        }
    }
    Pose3DSequence::new(mapping.target.clone(), pose.frame_tag, data)
}

/// Euclidean length of every schema bone at frame `frame` (mm).
pub fn bone_lengths(pose: &Pose3DSequence, frame: usize) -> Result<Vec<f64>> {
    if frame >= pose.num_frames() {
        return Err(SkeletonError::FrameOutOfRange {
            frame,
            len: pose.num_frames(),
        });
    }
    let f = pose.frame(frame);
    Ok(pose
        .schema
        .bones()
        .iter()
        .map(|&(p, c)| (f[c] - f[p]).norm())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h36m() -> Arc<JointSchema> {
        Arc::new(h36m_17())
    }

    fn coco() -> Arc<JointSchema> {
        Arc::new(coco_body())
    }

    fn ramp_2d(schema: Arc<JointSchema>, frames: usize) -> Pose2DSequence {
        let n = schema.len() * frames;
        let data = (0..n)
            .map(|i| Vector2::new(i as f64 * 1.5, 100.0 - i as f64))
            .collect();
        let conf = (0..n).map(|i| (i % 10) as f64 / 10.0).collect();
        Pose2DSequence::new(schema, data, conf).unwrap()
    }

    #[test]
    fn builtins_validate() {
        assert_eq!(h36m_17().len(), 17);
        assert_eq!(coco_body().len(), 17);
        assert!(JointSchema::builtin("nope").is_none());
    }

    #[test]
    fn rejects_cycles_and_duplicates() {
        let j = names(&["a", "b", "c"]);
        let err = JointSchema::new("x", j.clone(), 0, vec![(0, 1), (1, 2), (2, 1)], vec![], vec![], None);
        assert!(err.is_err());
        let err = JointSchema::new("x", j.clone(), 0, vec![(0, 1), (1, 0)], vec![], vec![], None);
        assert!(err.is_err());
        let err = JointSchema::new("x", names(&["a", "a"]), 0, vec![(0, 1)], vec![], vec![], None);
        assert!(err.is_err());
        let err = JointSchema::new("x", j.clone(), 0, vec![(0, 1), (1, 5)], vec![], vec![], None);
        assert!(err.is_err());
        assert!(JointSchema::new("x", j, 0, vec![(0, 1), (0, 2)], vec![], vec![2], None).is_ok());
    }

    #[test]
    fn schema_json_round_trip() {
        let s = h36m_17();
        let text = serde_json::to_string(&s).unwrap();
        assert!(text.contains("\"root\""));
        let back: JointSchema = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
        let bad = text.replace("\"root\":0", "\"root\":40");
        assert!(serde_json::from_str::<JointSchema>(&bad).is_err());
    }

    #[test]
    fn identity_mapping_is_noop() {
        let kps = ramp_2d(h36m(), 3);
        let m = SchemaMapping::identity(h36m());
        assert_eq!(map_schema_2d(&kps, &m).unwrap(), kps);
    }

    #[test]
    fn midpoint_neck() {
        let s = Arc::new(
            JointSchema::new(
                "shoulders",
                names(&["left_shoulder", "right_shoulder"]),
                0,
                vec![(0, 1)],
                vec![(0, 1)],
                vec![],
                None,
            )
            .unwrap(),
        );
        let t = Arc::new(JointSchema::new("neck", names(&["neck"]), 0, vec![], vec![], vec![], None).unwrap());
        let m = SchemaMapping::new(s.clone(), t, vec![Assignment::Midpoint(0, 1)]).unwrap();
        let kps = Pose2DSequence::with_full_confidence(
            s,
            vec![Vector2::new(100.0, 200.0), Vector2::new(300.0, 200.0)],
        )
        .unwrap();
        let out = map_schema_2d(&kps, &m).unwrap();
        assert_eq!(out.joint(0, 0), Vector2::new(200.0, 200.0));
    }

    #[test]
    fn dropped_joints_zeroed() {
        let m = h36m_to_coco_body(h36m(), coco()).unwrap();
        let out = map_schema_2d(&ramp_2d(h36m(), 2), &m).unwrap();
        for t in 0..2 {
            for name in ["left_eye", "right_eye", "left_ear", "right_ear"] {
                let j = out.schema().index_of(name).unwrap();
                assert_eq!(out.joint(t, j), Vector2::zeros());
                assert_eq!(out.joint_confidence(t, j), 0.0);
            }
        }
    }

    #[test]
    fn round_trip_through_guidance_schema_recovers_shared_joints() {
        let (h, c) = (h36m(), coco());
        let shared: Vec<&String> = h.joints().iter().filter(|n| c.index_of(n).is_some()).collect();
        assert_eq!(shared.len(), 12);

        let fwd = h36m_to_coco_body(h.clone(), c.clone()).unwrap();
        let back = coco_body_to_h36m(c, h.clone()).unwrap();
        let kps = ramp_2d(h.clone(), 4);
        let rt = map_schema_2d(&map_schema_2d(&kps, &fwd).unwrap(), &back).unwrap();
        for name in shared {
            let j = h.index_of(name).unwrap();
            for t in 0..4 {
                assert_eq!(rt.joint(t, j), kps.joint(t, j), "{name}");
                assert_eq!(rt.joint_confidence(t, j), kps.joint_confidence(t, j));
            }
        }
    }

    #[test]
    fn mismatched_schema_rejected() {
        let m = SchemaMapping::identity(coco());
        match map_schema_2d(&ramp_2d(h36m(), 1), &m) {
            Err(SkeletonError::SchemaMismatch { expected, found }) => {
                assert_eq!(expected, COCO_BODY);
                assert_eq!(found, H36M_17);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unused_source_joints_are_never_read() {
        let m = h36m_to_coco_body(h36m(), coco()).unwrap();
        let used: HashSet<usize> = m
            .assignments()
            .iter()
            .flat_map(|a| match *a {
                Assignment::Copy(s) => vec![s],
                Assignment::Midpoint(a, b) => vec![a, b],
                Assignment::Drop => vec![],
            })
            .collect();
        let clean = ramp_2d(h36m(), 2);
        let mut data = clean.data().to_vec();
        let mut conf = clean.confidence().to_vec();
        for (i, (p, c)) in data.iter_mut().zip(conf.iter_mut()).enumerate() {
            if !used.contains(&(i % 17)) {
                *p = Vector2::new(-9.99e8, 9.99e8);
                *c = 0.123;
            }
        }
        let poisoned = Pose2DSequence::new(h36m(), data, conf).unwrap();
        assert_eq!(
            map_schema_2d(&poisoned, &m).unwrap(),
            map_schema_2d(&clean, &m).unwrap()
        );
    }

    #[test]
    fn map_3d_midpoint_and_drop() {
        let s = Arc::new(JointSchema::new("ab", names(&["a", "b"]), 0, vec![(0, 1)], vec![], vec![], None).unwrap());
        let t = Arc::new(JointSchema::new("m", names(&["m"]), 0, vec![], vec![], vec![], None).unwrap());
        let pose = Pose3DSequence::new(
            s.clone(),
            FrameTag::World,
            vec![Vector3::zeros(), Vector3::new(2.0, 4.0, 6.0)],
        )
        .unwrap();
        let m = SchemaMapping::new(s.clone(), t.clone(), vec![Assignment::Midpoint(0, 1)]).unwrap();
        assert_eq!(map_schema_3d(&pose, &m).unwrap().joint(0, 0), Vector3::new(1.0, 2.0, 3.0));
        let d = SchemaMapping::new(s, t, vec![Assignment::Drop]).unwrap();
        assert!(matches!(
            map_schema_3d(&pose, &d),
            Err(SkeletonError::DroppedJoint3d { target: 0 })
        ));
    }

    #[test]
    fn mapping_file_round_trip_and_validation() {
        let m = h36m_to_coco_body(h36m(), coco()).unwrap();
        let text = m.to_json();
        assert_eq!(SchemaMapping::from_json(&text, h36m(), coco()).unwrap(), m);
        assert!(SchemaMapping::from_json(&text, coco(), h36m()).is_err());
        let twice = r#"{"source":"h36m-17","target":"coco-body","assignments":[{"target":0,"copy":1},{"target":0,"drop":true}]}"#;
        assert!(SchemaMapping::from_json(twice, h36m(), coco()).is_err());
        let both = r#"{"source":"h36m-17","target":"coco-body","assignments":[{"target":0,"copy":1,"drop":true}]}"#;
        assert!(SchemaMapping::from_json(both, h36m(), coco()).is_err());
    }

    #[test]
    fn bone_lengths_basic() {
        let s = Arc::new(JointSchema::new("ab", names(&["a", "b"]), 0, vec![(0, 1)], vec![], vec![], None).unwrap());
        let zero = Pose3DSequence::new(s.clone(), FrameTag::World, vec![Vector3::zeros(); 2]).unwrap();
        assert_eq!(bone_lengths(&zero, 0).unwrap(), vec![0.0]);
        let p = Pose3DSequence::new(s, FrameTag::World, vec![Vector3::zeros(), Vector3::new(3.0, 4.0, 0.0)]).unwrap();
        assert_eq!(bone_lengths(&p, 0).unwrap(), vec![5.0]);
        assert!(bone_lengths(&p, 1).is_err());
    }

    #[test]
    fn non_finite_rejected_with_location() {
        let mut data = vec![Vector3::zeros(); 34];
        data[20] = Vector3::new(f64::NAN, 0.0, 0.0);
        match Pose3DSequence::new(h36m(), FrameTag::World, data) {
            Err(SkeletonError::NonFinite { frame: 1, joint: 3 }) => {}
            other => panic!("{other:?}"),
        }
    }
}
