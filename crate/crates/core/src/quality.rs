//! 2D-consistency scoring of generated samples and top-fraction filtering.
//!
//! A sample's score is the mean distance between detected keypoints and the
//! guidance it was generated from, measured on the 2000-px reference plane.
//! Joints with zero confidence on either side are not scored.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{normalize_2d, CameraModel};
use crate::skeleton::Pose2DSequence;

#[derive(Debug, Error)]
pub enum QualityError {
    #[error("schema mismatch: detected `{detected}`, truth `{truth}`")]
    SchemaMismatch { detected: String, truth: String },
    #[error("length mismatch: detected {detected} frames, truth {truth}")]
    LengthMismatch { detected: usize, truth: usize },
    #[error("frame {frame} has no scorable joints")]
    NoScorableJoints { frame: usize },
    #[error("fraction {0} outside (0, 1]")]
    BadFraction(f64),
    #[error("no reports to filter")]
    Empty,
}

pub type Result<T, E = QualityError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub sample_id: String,
    /// Mean of `per_frame_scores`, normalized px.
    pub score: f64,
    pub per_frame_scores: Vec<f64>,
    pub kept: bool,
}

pub fn score_sample(
    sample_id: &str,
    detected: &Pose2DSequence,
    truth: &Pose2DSequence,
    cam: &CameraModel,
) -> Result<QualityReport> {
    if detected.schema() != truth.schema() {
        return Err(QualityError::SchemaMismatch {
            detected: detected.schema().name().to_string(),
            truth: truth.schema().name().to_string(),
        });
    }
    if detected.num_frames() != truth.num_frames() {
        return Err(QualityError::LengthMismatch {
            detected: detected.num_frames(),
            truth: truth.num_frames(),
        });
    }
    let (d, g) = (normalize_2d(detected, cam), normalize_2d(truth, cam));
    let per_frame_scores = (0..g.num_frames())
        .map(|t| {
            let (mut sum, mut n) = (0.0, 0usize);
            for j in 0..g.num_joints() {
                if g.joint_confidence(t, j) > 0.0 && d.joint_confidence(t, j) > 0.0 {
                    sum += (d.joint(t, j) - g.joint(t, j)).norm();
                    n += 1;
                }
            }
            if n == 0 {
                Err(QualityError::NoScorableJoints { frame: t })
            } else {
                Ok(sum / n as f64)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let score = per_frame_scores.iter().sum::<f64>() / per_frame_scores.len() as f64;
    Ok(QualityReport {
        sample_id: sample_id.to_string(),
        score,
        per_frame_scores,
        kept: false,
    })
}

fn by_score_then_id(a: &QualityReport, b: &QualityReport) -> Ordering {
    a.score
        .total_cmp(&b.score)
        .then_with(|| a.sample_id.cmp(&b.sample_id))
}

/// Number of samples kept for `fraction` of `n`: `ceil(fraction * n)`, at
/// least one.
pub fn kept_count(n: usize, fraction: f64) -> usize {
    // The epsilon absorbs products such as 0.1 * 30 = 3.0000000000000004.
    ((fraction * n as f64 - 1e-9).ceil() as usize).clamp(1, n)
}

/// Keeps the lowest-scoring `ceil(fraction * len)` samples. Returns kept ids
/// in ascending score order and sets `kept` on every report.
pub fn filter_top(reports: &mut [QualityReport], fraction: f64) -> Result<Vec<String>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(QualityError::BadFraction(fraction));
    }
    if reports.is_empty() {
        return Err(QualityError::Empty);
    }
    let mut order: Vec<usize> = (0..reports.len()).collect();
    order.sort_by(|&a, &b| by_score_then_id(&reports[a], &reports[b]));
    let keep = kept_count(reports.len(), fraction);
    for r in reports.iter_mut() {
        r.kept = false;
    }
    let mut kept = Vec::with_capacity(keep);
    for &i in &order[..keep] {
        reports[i].kept = true;
        kept.push(reports[i].sample_id.clone());
    }
    Ok(kept)
}

/// Distribution summary of a set of scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub p90: f64,
    pub p99: f64,
}

/// Linear-interpolation quantile of ascending-sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl ScoreSummary {
    pub fn of(scores: &[f64]) -> Option<Self> {
        if scores.is_empty() {
            return None;
        }
        let mut s = scores.to_vec();
        s.sort_by(f64::total_cmp);
        Some(Self {
            count: s.len(),
            mean: s.iter().sum::<f64>() / s.len() as f64,
            median: quantile(&s, 0.5),
            p90: quantile(&s, 0.9),
            p99: quantile(&s, 0.99),
        })
    }
}
