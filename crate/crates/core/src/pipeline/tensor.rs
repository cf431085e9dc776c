//! Binary pose-tensor files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "PSEQ" | version u16 | kind u8 (2|3) | flags u8 | T u32 | J u32
//! | name_len u16 | schema name (UTF-8)
//! | T*J*kind f32 coordinates, frame-major, joint-major, coordinate
//! | T*J f32 confidences (2D only, flag bit 0)
//! ```
//!
//! Flag bit 1 marks a 3D tensor expressed in camera coordinates.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{Vector2, Vector3};
use thiserror::Error;

use crate::skeleton::{FrameTag, JointSchema, Pose2DSequence, Pose3DSequence, SkeletonError};

pub const MAGIC: &[u8; 4] = b"PSEQ";
pub const VERSION: u16 = 1;
pub const FLAG_CONFIDENCE: u8 = 0b01;
pub const FLAG_CAMERA_FRAME: u8 = 0b10;

const FIXED_HEADER: usize = 4 + 2 + 1 + 1 + 4 + 4 + 2;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("bad magic: expected \"PSEQ\", found {found:?}")]
    BadMagic { found: Vec<u8> },
    #[error("unsupported tensor version {0}")]
    UnsupportedVersion(u16),
    #[error("invalid tensor kind {0}; expected 2 or 3")]
    BadKind(u8),
    #[error("unknown flag bits {0:#04x}")]
    BadFlags(u8),
    #[error("truncated tensor: need {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("{0} trailing bytes after the payload")]
    TrailingBytes(usize),
    #[error("non-finite value at payload index {index}")]
    NonFinite { index: usize },
    #[error("schema name is not valid UTF-8")]
    BadSchemaName,
    #[error("unknown schema `{0}`")]
    UnknownSchema(String),
    #[error("dimension mismatch: header says {header} joints, schema `{schema}` has {actual}")]
    JointCount {
        header: usize,
        schema: String,
        actual: usize,
    },
    #[error("expected a {expected}D tensor, found {found}D")]
    WrongKind { expected: u8, found: u8 },
    #[error("tensor too large for the file format")]
    TooLarge,
    #[error(transparent)]
    Skeleton(#[from] SkeletonError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

/// Contents of a pose-tensor file.
#[derive(Debug, Clone, PartialEq)]
pub enum PoseTensor {
    Pose2D(Pose2DSequence),
    Pose3D(Pose3DSequence),
}

impl PoseTensor {
    pub fn kind(&self) -> u8 {
        match self {
            PoseTensor::Pose2D(_) => 2,
            PoseTensor::Pose3D(_) => 3,
        }
    }

    pub fn into_2d(self) -> Result<Pose2DSequence> {
        match self {
            PoseTensor::Pose2D(p) => Ok(p),
            PoseTensor::Pose3D(_) => Err(TensorError::WrongKind {
                expected: 2,
                found: 3,
            }),
        }
    }

    pub fn into_3d(self) -> Result<Pose3DSequence> {
        match self {
            PoseTensor::Pose3D(p) => Ok(p),
            PoseTensor::Pose2D(_) => Err(TensorError::WrongKind {
                expected: 3,
                found: 2,
            }),
        }
    }
}

impl From<Pose2DSequence> for PoseTensor {
    fn from(p: Pose2DSequence) -> Self {
        PoseTensor::Pose2D(p)
    }
}

impl From<Pose3DSequence> for PoseTensor {
    fn from(p: Pose3DSequence) -> Self {
        PoseTensor::Pose3D(p)
    }
}

/// Parsed fixed header of a tensor file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorHeader {
    pub version: u16,
    pub kind: u8,
    pub flags: u8,
    pub frames: usize,
    pub joints: usize,
    pub schema_name: String,
    pub payload_offset: usize,
}

impl TensorHeader {
    /// Payload size in bytes, `None` on overflow.
    pub fn payload_len(&self) -> Option<usize> {
        let n = self.frames.checked_mul(self.joints)?;
        let per = self.kind as usize + usize::from(self.flags & FLAG_CONFIDENCE != 0);
        n.checked_mul(per)?.checked_mul(4)
    }
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Parses and validates the header without touching the payload.
pub fn parse_header(bytes: &[u8]) -> Result<TensorHeader> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(TensorError::BadMagic {
            found: bytes[..bytes.len().min(4)].to_vec(),
        });
    }
    if bytes.len() < FIXED_HEADER {
        return Err(TensorError::Truncated {
            expected: FIXED_HEADER,
            found: bytes.len(),
        });
    }
    let version = u16_at(bytes, 4);
    if version != VERSION {
        return Err(TensorError::UnsupportedVersion(version));
    }
    let kind = bytes[6];
    if kind != 2 && kind != 3 {
        return Err(TensorError::BadKind(kind));
    }
    let flags = bytes[7];
    let allowed = if kind == 2 { FLAG_CONFIDENCE } else { FLAG_CAMERA_FRAME };
    if flags & !allowed != 0 {
        return Err(TensorError::BadFlags(flags));
    }
    let frames = u32_at(bytes, 8) as usize;
    let joints = u32_at(bytes, 12) as usize;
    let name_len = u16_at(bytes, 16) as usize;
    let payload_offset = FIXED_HEADER + name_len;
    if bytes.len() < payload_offset {
        return Err(TensorError::Truncated {
            expected: payload_offset,
            found: bytes.len(),
        });
    }
    let schema_name = std::str::from_utf8(&bytes[FIXED_HEADER..payload_offset])
        .map_err(|_| TensorError::BadSchemaName)?
        .to_string();
    Ok(TensorHeader {
        version,
        kind,
        flags,
        frames,
        joints,
        schema_name,
        payload_offset,
    })
}

/// Decodes a tensor, resolving the schema name through `resolve`.
pub fn decode_with(
    bytes: &[u8],
    resolve: impl Fn(&str) -> Option<Arc<JointSchema>>,
) -> Result<PoseTensor> {
    let header = parse_header(bytes)?;
    let expected = header
        .payload_len()
        .and_then(|n| n.checked_add(header.payload_offset))
        .ok_or(TensorError::TooLarge)?;
    if bytes.len() < expected {
        return Err(TensorError::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(TensorError::TrailingBytes(bytes.len() - expected));
    }
    let payload = &bytes[header.payload_offset..];
    let mut values = Vec::with_capacity(payload.len() / 4);
    for (index, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        if !v.is_finite() {
            return Err(TensorError::NonFinite { index });
        }
        values.push(v as f64);
    }
    let schema = resolve(&header.schema_name)
        .ok_or_else(|| TensorError::UnknownSchema(header.schema_name.clone()))?;
    if schema.len() != header.joints {
        return Err(TensorError::JointCount {
            header: header.joints,
            schema: header.schema_name,
            actual: schema.len(),
        });
    }
    let n = header.frames * header.joints;
    if header.kind == 3 {
        let data = values
            .chunks_exact(3)
            .map(|c| Vector3::new(c[0], c[1], c[2]))
            .collect();
        let tag = if header.flags & FLAG_CAMERA_FRAME != 0 {
            FrameTag::Camera
        } else {
            FrameTag::World
        };
        Ok(PoseTensor::Pose3D(Pose3DSequence::new(schema, tag, data)?))
    } else {
        let data: Vec<_> = values[..2 * n]
            .chunks_exact(2)
            .map(|c| Vector2::new(c[0], c[1]))
            .collect();
        let conf = if header.flags & FLAG_CONFIDENCE != 0 {
            values[2 * n..].to_vec()
        } else {
            vec![1.0; n]
        };
        Ok(PoseTensor::Pose2D(Pose2DSequence::new(schema, data, conf)?))
    }
}

/// Decodes a tensor whose schema is one of the built-ins.
pub fn decode(bytes: &[u8]) -> Result<PoseTensor> {
    decode_with(bytes, |name| JointSchema::builtin(name).map(Arc::new))
}

fn push_header(out: &mut Vec<u8>, kind: u8, flags: u8, frames: usize, schema: &JointSchema) -> Result<()> {
    let frames = u32::try_from(frames).map_err(|_| TensorError::TooLarge)?;
    let joints = u32::try_from(schema.len()).map_err(|_| TensorError::TooLarge)?;
    let name = schema.name().as_bytes();
    let name_len = u16::try_from(name.len()).map_err(|_| TensorError::TooLarge)?;
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(kind);
    out.push(flags);
    out.extend_from_slice(&frames.to_le_bytes());
    out.extend_from_slice(&joints.to_le_bytes());
    out.extend_from_slice(&name_len.to_le_bytes());
    out.extend_from_slice(name);
    Ok(())
}

fn push_f32(out: &mut Vec<u8>, v: f64) -> Result<()> {
    let f = v as f32;
    if !f.is_finite() {
        return Err(TensorError::NonFinite {
            index: out.len() / 4,
        });
    }
    out.extend_from_slice(&f.to_le_bytes());
    Ok(())
}

/// Encodes a tensor. 2D tensors always carry their confidence block.
pub fn encode(tensor: &PoseTensor) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    match tensor {
        PoseTensor::Pose2D(p) => {
            push_header(&mut out, 2, FLAG_CONFIDENCE, p.num_frames(), p.schema())?;
            for v in p.data() {
                push_f32(&mut out, v.x)?;
                push_f32(&mut out, v.y)?;
            }
            for &c in p.confidence() {
                push_f32(&mut out, c)?;
            }
        }
        PoseTensor::Pose3D(p) => {
            let flags = match p.frame_tag() {
                FrameTag::Camera => FLAG_CAMERA_FRAME,
                FrameTag::World => 0,
            };
            push_header(&mut out, 3, flags, p.num_frames(), p.schema())?;
            for v in p.data() {
                push_f32(&mut out, v.x)?;
                push_f32(&mut out, v.y)?;
                push_f32(&mut out, v.z)?;
            }
        }
    }
    Ok(out)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TensorError + '_ {
    move |source| TensorError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes `tensor` to `path`, returning the bytes written.
pub fn write_pose(path: &Path, tensor: &PoseTensor) -> Result<Vec<u8>> {
    let bytes = encode(tensor)?;
    fs::write(path, &bytes).map_err(io_err(path))?;
    Ok(bytes)
}

pub fn read_pose(path: &Path) -> Result<PoseTensor> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode(&bytes)
}

/// Reads with a caller-supplied schema resolver (for custom schemas).
pub fn read_pose_with(
    path: &Path,
    resolve: impl Fn(&str) -> Option<Arc<JointSchema>>,
) -> Result<PoseTensor> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_with(&bytes, resolve)
}

/// Rounds every coordinate and confidence through `f32`.
pub fn quantize(tensor: &PoseTensor) -> Result<PoseTensor> {
    decode_with(&encode(tensor)?, |_| match tensor {
        PoseTensor::Pose2D(p) => Some(p.schema().clone()),
        PoseTensor::Pose3D(p) => Some(p.schema().clone()),
    })
}
