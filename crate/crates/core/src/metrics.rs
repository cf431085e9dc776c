//! Pose error metrics: MPJPE, Procrustes-aligned P-MPJPE, scale-normalized
//! N-MPJPE, velocity error and image-plane position error.
//!
//! Sequence values are frame means; corpus values are unweighted means over
//! sequences.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::CameraModel;
use crate::quality::{score_sample, QualityError};
use crate::skeleton::{Pose2DSequence, Pose3DSequence};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("shape mismatch: gt {gt_frames}x{gt_joints}, pred {pred_frames}x{pred_joints}")]
    ShapeMismatch {
        gt_frames: usize,
        gt_joints: usize,
        pred_frames: usize,
        pred_joints: usize,
    },
    #[error("procrustes needs at least 3 joints, got {0}")]
    TooFewJoints(usize),
    #[error("velocity error needs at least 2 frames, got {0}")]
    TooFewFrames(usize),
    #[error("no sequences to average")]
    Empty,
    #[error("{gt} ground-truth sequences but {pred} predictions")]
    CountMismatch { gt: usize, pred: usize },
    #[error(transparent)]
    Quality(#[from] QualityError),
}

pub type Result<T, E = MetricError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricOptions {
    /// Subtract the root joint per frame before comparing (standard protocol).
    pub root_relative: bool,
    /// Allow uniform scale in the Procrustes alignment.
    pub procrustes_scale: bool,
}

impl Default for MetricOptions {
    fn default() -> Self {
        Self {
            root_relative: true,
            procrustes_scale: true,
        }
    }
}

/// A sequence-level error together with the frames that needed a fallback.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedError {
    pub value: f64,
    pub per_frame: Vec<f64>,
    pub flagged_frames: Vec<usize>,
}

fn check_shapes(gt: &Pose3DSequence, pred: &Pose3DSequence) -> Result<()> {
    if gt.num_frames() != pred.num_frames() || gt.num_joints() != pred.num_joints() {
        return Err(MetricError::ShapeMismatch {
            gt_frames: gt.num_frames(),
            gt_joints: gt.num_joints(),
            pred_frames: pred.num_frames(),
            pred_joints: pred.num_joints(),
        });
    }
    Ok(())
}

fn prepared(
    gt: &Pose3DSequence,
    pred: &Pose3DSequence,
    opts: MetricOptions,
) -> Result<(Pose3DSequence, Pose3DSequence)> {
    check_shapes(gt, pred)?;
    Ok(if opts.root_relative {
        (gt.root_relative(), pred.root_relative())
    } else {
        (gt.clone(), pred.clone())
    })
}

fn mean_distance(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).sum::<f64>() / a.len() as f64
}

fn frame_mean(per_frame: &[f64]) -> f64 {
    per_frame.iter().sum::<f64>() / per_frame.len() as f64
}

/// Mean per-joint position error in mm, root-relative.
pub fn mpjpe(gt: &Pose3DSequence, pred: &Pose3DSequence) -> Result<f64> {
    mpjpe_with(gt, pred, MetricOptions::default())
}

pub fn mpjpe_with(gt: &Pose3DSequence, pred: &Pose3DSequence, opts: MetricOptions) -> Result<f64> {
    let (g, p) = prepared(gt, pred, opts)?;
    Ok(mean_distance(g.data(), p.data()))
}

/// Least-squares similarity taking `source` points onto `target` points.
#[derive(Debug, Clone, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    /// Scale could not be estimated (source collapsed to a point).
    pub degenerate: bool,
}

impl Similarity {
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.scale * (self.rotation * p) + self.translation
    }
}

fn centroid(pts: &[Vector3<f64>]) -> Vector3<f64> {
    pts.iter().sum::<Vector3<f64>>() / pts.len() as f64
}

/// Closed-form similarity Procrustes (Umeyama): minimizes
/// `sum |target_i - (s R source_i + t)|^2` with `det R = +1`.
pub fn procrustes(target: &[Vector3<f64>], source: &[Vector3<f64>], with_scale: bool) -> Similarity {
    let n = target.len() as f64;
    let (mu_t, mu_s) = (centroid(target), centroid(source));
    let mut cov = Matrix3::zeros();
    let mut var_s = 0.0;
    for (t, s) in target.iter().zip(source) {
        let (dt, ds) = (t - mu_t, s - mu_s);
        cov += dt * ds.transpose();
        var_s += ds.norm_squared();
    }
    cov /= n;
    var_s /= n;

    let degenerate = var_s <= f64::EPSILON * (1.0 + mu_s.norm_squared());
    if degenerate {
        return Similarity {
            scale: 1.0,
            rotation: Matrix3::identity(),
            translation: mu_t - mu_s,
            degenerate,
        };
    }

    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let mut d = Matrix3::identity();
    if (u.determinant() * v_t.determinant()) < 0.0 {
        // Reflection: flip the axis of the smallest singular value.
        let k = svd
            .singular_values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap();
        d[(k, k)] = -1.0;
    }
    let rotation = u * d * v_t;
    let scale = if with_scale {
        (svd.singular_values.component_mul(&d.diagonal())).sum() / var_s
    } else {
        1.0
    };
    Similarity {
        scale,
        rotation,
        translation: mu_t - scale * (rotation * mu_s),
        degenerate,
    }
}

/// Error after per-frame similarity (or rigid) Procrustes alignment.
pub fn p_mpjpe(gt: &Pose3DSequence, pred: &Pose3DSequence) -> Result<f64> {
    Ok(p_mpjpe_detailed(gt, pred, MetricOptions::default())?.value)
}

pub fn p_mpjpe_detailed(
    gt: &Pose3DSequence,
    pred: &Pose3DSequence,
    opts: MetricOptions,
) -> Result<AlignedError> {
    check_shapes(gt, pred)?;
    if gt.num_joints() < 3 {
        return Err(MetricError::TooFewJoints(gt.num_joints()));
    }
    let mut per_frame = Vec::with_capacity(gt.num_frames());
    let mut flagged_frames = Vec::new();
    for (t, (g, p)) in gt.frames().zip(pred.frames()).enumerate() {
        let sim = procrustes(g, p, opts.procrustes_scale);
        if sim.degenerate {
            log::warn!("frame {t}: prediction collapsed to a point; aligning without scale");
            flagged_frames.push(t);
        }
        let aligned: Vec<_> = p.iter().map(|x| sim.apply(x)).collect();
        per_frame.push(mean_distance(g, &aligned));
    }
    Ok(AlignedError {
        value: frame_mean(&per_frame),
        per_frame,
        flagged_frames,
    })
}

/// Error after optimal per-frame uniform scaling of the prediction.
pub fn n_mpjpe(gt: &Pose3DSequence, pred: &Pose3DSequence) -> Result<f64> {
    Ok(n_mpjpe_detailed(gt, pred, MetricOptions::default())?.value)
}

pub fn n_mpjpe_detailed(
    gt: &Pose3DSequence,
    pred: &Pose3DSequence,
    opts: MetricOptions,
) -> Result<AlignedError> {
    let (g, p) = prepared(gt, pred, opts)?;
    let mut per_frame = Vec::with_capacity(g.num_frames());
    let mut flagged_frames = Vec::new();
    for (t, (gf, pf)) in g.frames().zip(p.frames()).enumerate() {
        let pp: f64 = pf.iter().map(|x| x.norm_squared()).sum();
        let pg: f64 = pf.iter().zip(gf).map(|(x, y)| x.dot(y)).sum();
        let s = if pp > 0.0 {
            optimal_scale(pg, pp)
        } else {
            flagged_frames.push(t);
            1.0
        };
        let scaled: Vec<_> = pf.iter().map(|x| x * s).collect();
        per_frame.push(mean_distance(gf, &scaled));
    }
    Ok(AlignedError {
        value: frame_mean(&per_frame),
        per_frame,
        flagged_frames,
    })
}

/// `argmin_s |gt - s pred|^2` given `<pred, gt>` and `<pred, pred>`.
pub fn optimal_scale(pred_dot_gt: f64, pred_dot_pred: f64) -> f64 {
    pred_dot_gt / pred_dot_pred
}

/// MPJPE of first-order frame differences, in mm/frame.
pub fn velocity_error(gt: &Pose3DSequence, pred: &Pose3DSequence) -> Result<f64> {
    velocity_error_with(gt, pred, MetricOptions::default())
}

pub fn velocity_error_with(
    gt: &Pose3DSequence,
    pred: &Pose3DSequence,
    opts: MetricOptions,
) -> Result<f64> {
    check_shapes(gt, pred)?;
    if gt.num_frames() < 2 {
        return Err(MetricError::TooFewFrames(gt.num_frames()));
    }
    let (g, p) = prepared(gt, pred, opts)?;
    let j = g.num_joints();
    let diff = |s: &Pose3DSequence| -> Vec<Vector3<f64>> {
        s.data().windows(j + 1).map(|w| w[j] - w[0]).collect()
    };
    Ok(mean_distance(&diff(&g), &diff(&p)))
}

/// Image-plane error on the 2000-px reference plane, excluding joints with
/// zero confidence.
pub fn pos2d_error(gt: &Pose2DSequence, pred: &Pose2DSequence, cam: &CameraModel) -> Result<f64> {
    Ok(score_sample("pos2d", pred, gt, cam)?.score)
}

/// Unweighted mean over sequences, independent of sequence length.
pub fn per_sequence_average(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceMetrics {
    pub frames: usize,
    pub mpjpe: f64,
    pub p_mpjpe: f64,
    pub n_mpjpe: f64,
    /// Absent for single-frame sequences.
    pub velocity_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mpjpe: f64,
    pub p_mpjpe: f64,
    pub n_mpjpe: f64,
    /// mm/frame; averaged over sequences with at least two frames.
    pub velocity_error: Option<f64>,
    pub per_sequence: Vec<SequenceMetrics>,
}

impl MetricReport {
    /// Fixed-width table with the usual column names.
    pub fn table(&self) -> String {
        let vel = self
            .velocity_error
            .map_or_else(|| "-".to_string(), |v| format!("{v:.2}"));
        format!(
            "{:>10} {:>10} {:>10} {:>10}\n{:>10.2} {:>10.2} {:>10.2} {:>10}\n",
            "MPJPE", "P-MPJPE", "N-MPJPE", "Vel. Err.", self.mpjpe, self.p_mpjpe, self.n_mpjpe, vel
        )
    }
}

/// Evaluates matched ground-truth/prediction sequences.
pub fn evaluate(
    gt: &[Pose3DSequence],
    pred: &[Pose3DSequence],
    opts: MetricOptions,
) -> Result<MetricReport> {
    if gt.len() != pred.len() {
        return Err(MetricError::CountMismatch {
            gt: gt.len(),
            pred: pred.len(),
        });
    }
    let per_sequence = gt
        .iter()
        .zip(pred)
        .map(|(g, p)| {
            Ok(SequenceMetrics {
                frames: g.num_frames(),
                mpjpe: mpjpe_with(g, p, opts)?,
                p_mpjpe: p_mpjpe_detailed(g, p, opts)?.value,
                n_mpjpe: n_mpjpe_detailed(g, p, opts)?.value,
                velocity_error: if g.num_frames() >= 2 {
                    Some(velocity_error_with(g, p, opts)?)
                } else {
                    None
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let avg = |f: fn(&SequenceMetrics) -> f64| {
        per_sequence_average(&per_sequence.iter().map(f).collect::<Vec<_>>())
    };
    let vels: Vec<f64> = per_sequence.iter().filter_map(|s| s.velocity_error).collect();
    Ok(MetricReport {
        mpjpe: avg(|s| s.mpjpe)?,
        p_mpjpe: avg(|s| s.p_mpjpe)?,
        n_mpjpe: avg(|s| s.n_mpjpe)?,
        velocity_error: per_sequence_average(&vels).ok(),
        per_sequence,
    })
}
