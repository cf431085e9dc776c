//! Closed-form ridge lifter (2D keypoints -> root-relative 3D) and the
//! train/test input-regime experiment.
//!
//! Features per frame are the visible 2D joints relative to the schema root,
//! divided by their RMS distance from the root, with zeros for invisible
//! joints, plus a constant bias. Targets are root-relative 3D joints in mm.
//! Weights solve `(A^T A + lambda I) W = A^T B` by Cholesky factorization.
//!
//! Feature columns that are zero in every training frame (the root itself,
//! joints never visible) get zero weights and are left out of the
//! factorization; for `lambda > 0` this is exactly the full ridge solution.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{mpjpe, per_sequence_average, MetricError};
use crate::skeleton::{ensure_schema, FrameTag, JointSchema, Pose2DSequence, Pose3DSequence, SkeletonError};

/// Frames whose 2D RMS radius falls below this (px) carry no pose signal.
pub const MIN_SCALE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum LifterError {
    #[error("{inputs} input sequences but {targets} targets")]
    CountMismatch { inputs: usize, targets: usize },
    #[error("sequence {index}: {inputs} input frames but {targets} target frames")]
    LengthMismatch { index: usize, inputs: usize, targets: usize },
    #[error("no training frames")]
    NoData,
    #[error("normal equations are rank deficient with lambda = {lambda}; use lambda > 0")]
    RankDeficient { lambda: f64 },
    #[error("lambda must be finite and >= 0, got {0}")]
    BadLambda(f64),
    #[error("regime {regime} needs the {channel} channel, missing for sample {sample}")]
    MissingChannel {
        regime: Regime,
        channel: InputKind,
        sample: String,
    },
    #[error("no seeds given")]
    NoSeeds,
    #[error(transparent)]
    Schema(#[from] SkeletonError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

pub type Result<T, E = LifterError> = std::result::Result<T, E>;

/// Record of how 2D inputs are normalized before the linear map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputNorm {
    pub center: String,
    pub scale: String,
    pub min_scale: f64,
    pub frames_used: usize,
    pub frames_dropped: usize,
    /// Mean RMS radius (px) of the training frames.
    pub mean_scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LifterModel {
    /// `(2 J_in + 1) x (3 J_out)`.
    weights: DMatrix<f64>,
    lambda: f64,
    input_schema: Arc<JointSchema>,
    output_schema: Arc<JointSchema>,
    input_norm: InputNorm,
}

impl LifterModel {
    pub fn zeros(input_schema: Arc<JointSchema>, output_schema: Arc<JointSchema>) -> Self {
        let weights = DMatrix::zeros(2 * input_schema.len() + 1, 3 * output_schema.len());
        LifterModel {
            weights,
            lambda: 0.0,
            input_schema,
            output_schema,
            input_norm: default_norm(0, 0, 0.0),
        }
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn input_schema(&self) -> &Arc<JointSchema> {
        &self.input_schema
    }

    pub fn output_schema(&self) -> &Arc<JointSchema> {
        &self.output_schema
    }

    pub fn input_norm(&self) -> &InputNorm {
        &self.input_norm
    }

    /// Same model with different weights; dimensions must match.
    pub fn with_weights(&self, weights: DMatrix<f64>) -> Self {
        assert_eq!(weights.shape(), self.weights.shape());
        LifterModel {
            weights,
            ..self.clone()
        }
    }
}

fn default_norm(used: usize, dropped: usize, mean_scale: f64) -> InputNorm {
    InputNorm {
        center: "schema root joint".into(),
        scale: "rms distance of visible joints from the root".into(),
        min_scale: MIN_SCALE,
        frames_used: used,
        frames_dropped: dropped,
        mean_scale,
    }
}

/// Normalized feature row for one frame, or `None` when the frame is
/// degenerate (invisible root or collapsed joints). Also returns the frame's
/// scale.
pub fn frame_features(kps: &Pose2DSequence, t: usize) -> Option<(DVector<f64>, f64)> {
    let j = kps.num_joints();
    let pts = kps.frame(t);
    let conf = kps.frame_confidence(t);
    let root = kps.schema().root_index();
    if conf[root] <= 0.0 {
        return None;
    }
    let visible: Vec<usize> = (0..j).filter(|&i| conf[i] > 0.0).collect();
    let center = pts[root];
    let scale = (visible.iter().map(|&i| (pts[i] - center).norm_squared()).sum::<f64>()
        / visible.len() as f64)
        .sqrt();
    if scale < MIN_SCALE {
        return None;
    }
    let mut f = DVector::zeros(2 * j + 1);
    for &i in &visible {
        let q = (pts[i] - center) / scale;
        f[2 * i] = q.x;
        f[2 * i + 1] = q.y;
    }
    f[2 * j] = 1.0;
    Some((f, scale))
}

fn target_row(pose: &Pose3DSequence, t: usize) -> DVector<f64> {
    let root = pose.joint(t, pose.schema().root_index());
    DVector::from_iterator(
        3 * pose.num_joints(),
        pose.frame(t).iter().flat_map(|p| (p - root).iter().copied().collect::<Vec<_>>()),
    )
}

fn check_pairs(inputs: &[Pose2DSequence], targets: &[Pose3DSequence]) -> Result<()> {
    if inputs.len() != targets.len() {
        return Err(LifterError::CountMismatch {
            inputs: inputs.len(),
            targets: targets.len(),
        });
    }
    if inputs.is_empty() {
        return Err(LifterError::NoData);
    }
    for (i, (x, y)) in inputs.iter().zip(targets).enumerate() {
        ensure_schema(inputs[0].schema(), x.schema())?;
        ensure_schema(targets[0].schema(), y.schema())?;
        if x.num_frames() != y.num_frames() {
            return Err(LifterError::LengthMismatch {
                index: i,
                inputs: x.num_frames(),
                targets: y.num_frames(),
            });
        }
    }
    Ok(())
}

struct Normal {
    ata: DMatrix<f64>,
    atb: DMatrix<f64>,
    used: usize,
    dropped: usize,
    scale_sum: f64,
}

impl Normal {
    fn zeros(features: usize, outputs: usize) -> Self {
        Normal {
            ata: DMatrix::zeros(features, features),
            atb: DMatrix::zeros(features, outputs),
            used: 0,
            dropped: 0,
            scale_sum: 0.0,
        }
    }

    fn merge(mut self, other: Normal) -> Self {
        self.ata += other.ata;
        self.atb += other.atb;
        self.used += other.used;
        self.dropped += other.dropped;
        self.scale_sum += other.scale_sum;
        self
    }
}

fn accumulate(x: &Pose2DSequence, y: &Pose3DSequence) -> Normal {
    let (nf, no) = (2 * x.num_joints() + 1, 3 * y.num_joints());
    let mut acc = Normal::zeros(nf, no);
    for t in 0..x.num_frames() {
        match frame_features(x, t) {
            Some((f, scale)) => {
                acc.ata.ger(1.0, &f, &f, 1.0);
                acc.atb.ger(1.0, &f, &target_row(y, t), 1.0);
                acc.used += 1;
                acc.scale_sum += scale;
            }
            None => acc.dropped += 1,
        }
    }
    acc
}

/// Ridge fit of root-relative 3D targets on normalized 2D features.
pub fn fit(inputs: &[Pose2DSequence], targets: &[Pose3DSequence], lambda: f64) -> Result<LifterModel> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(LifterError::BadLambda(lambda));
    }
    check_pairs(inputs, targets)?;
    let (in_schema, out_schema) = (inputs[0].schema().clone(), targets[0].schema().clone());
    let (nf, no) = (2 * in_schema.len() + 1, 3 * out_schema.len());

    // Per-sequence partial sums, merged in input order.
    let partials: Vec<Normal> = inputs
        .par_iter()
        .zip(targets.par_iter())
        .map(|(x, y)| accumulate(x, y))
        .collect();
    let normal = partials
        .into_iter()
        .fold(Normal::zeros(nf, no), Normal::merge);
    if normal.dropped > 0 {
        log::warn!("{} training frames dropped for degenerate 2D scale", normal.dropped);
    }
    if normal.used == 0 {
        return Err(LifterError::NoData);
    }

    let active: Vec<usize> = (0..nf).filter(|&i| normal.ata[(i, i)] > 0.0).collect();
    let mut lhs = normal.ata.select_rows(&active).select_columns(&active);
    for i in 0..active.len() {
        lhs[(i, i)] += lambda;
    }
    let rhs = normal.atb.select_rows(&active);
    let chol = lhs.cholesky().ok_or(LifterError::RankDeficient { lambda })?;
    let diag = chol.l_dirty().diagonal();
    let (lo, hi) = diag
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &d| (lo.min(d), hi.max(d)));
    // Squared ratio of Cholesky pivots bounds the condition number.
    if lo.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) || (lo / hi).powi(2) < 1e-13 {
        return Err(LifterError::RankDeficient { lambda });
    }
    let solved = chol.solve(&rhs);
    let mut weights = DMatrix::zeros(nf, no);
    for (row, &i) in active.iter().enumerate() {
        weights.row_mut(i).copy_from(&solved.row(row));
    }

    Ok(LifterModel {
        weights,
        lambda,
        input_schema: in_schema,
        output_schema: out_schema,
        input_norm: default_norm(normal.used, normal.dropped, normal.scale_sum / normal.used as f64),
    })
}

/// Root-relative camera-frame 3D prediction. Degenerate frames receive the
/// bias-only prediction.
pub fn predict(model: &LifterModel, kps: &Pose2DSequence) -> Result<Pose3DSequence> {
    ensure_schema(&model.input_schema, kps.schema())?;
    let j_in = model.input_schema.len();
    let mut bias_only = DVector::zeros(2 * j_in + 1);
    bias_only[2 * j_in] = 1.0;
    let frames: Vec<Vec<Vector3<f64>>> = (0..kps.num_frames())
        .into_par_iter()
        .map(|t| {
            let f = frame_features(kps, t).map(|(f, _)| f).unwrap_or_else(|| {
                log::warn!("frame {t}: degenerate 2D scale, predicting the mean pose");
                bias_only.clone()
            });
            let out = model.weights.tr_mul(&f);
            out.as_slice()
                .chunks_exact(3)
                .map(|c| Vector3::new(c[0], c[1], c[2]))
                .collect()
        })
        .collect();
    Ok(Pose3DSequence::from_frames(
        model.output_schema.clone(),
        FrameTag::Camera,
        frames,
    )?)
}

/// Mean squared error over frames and coordinates (no penalty term).
pub fn training_mse(model: &LifterModel, inputs: &[Pose2DSequence], targets: &[Pose3DSequence]) -> Result<f64> {
    check_pairs(inputs, targets)?;
    let (mut sum, mut count) = (0.0, 0usize);
    for (x, y) in inputs.iter().zip(targets) {
        for t in 0..x.num_frames() {
            if let Some((f, _)) = frame_features(x, t) {
                let r = model.weights.tr_mul(&f) - target_row(y, t);
                sum += r.norm_squared();
                count += r.len();
            }
        }
    }
    if count == 0 {
        return Err(LifterError::NoData);
    }
    Ok(sum / count as f64)
}

/// The ridge objective `|A W - B|^2 + lambda |W|^2` minimized by `fit`.
pub fn ridge_objective(model: &LifterModel, inputs: &[Pose2DSequence], targets: &[Pose3DSequence]) -> Result<f64> {
    check_pairs(inputs, targets)?;
    let mut sse = 0.0;
    for (x, y) in inputs.iter().zip(targets) {
        for t in 0..x.num_frames() {
            if let Some((f, _)) = frame_features(x, t) {
                sse += (model.weights.tr_mul(&f) - target_row(y, t)).norm_squared();
            }
        }
    }
    Ok(sse + model.lambda * model.weights.norm_squared())
}

/// Which 2D channel feeds the lifter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum InputKind {
    /// Projected ground truth (guidance).
    Gt,
    /// Detector output.
    Hpe,
}

impl fmt::Display for InputKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InputKind::Gt => "GT",
            InputKind::Hpe => "HPE",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Regime {
    pub train: InputKind,
    pub test: InputKind,
}

impl Regime {
    pub const ALL: [Regime; 4] = [
        Regime { train: InputKind::Gt, test: InputKind::Gt },
        Regime { train: InputKind::Gt, test: InputKind::Hpe },
        Regime { train: InputKind::Hpe, test: InputKind::Gt },
        Regime { train: InputKind::Hpe, test: InputKind::Hpe },
    ];
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.train, self.test)
    }
}

/// One sequence with both 2D channels and its camera-frame 3D ground truth.
#[derive(Debug, Clone)]
pub struct RegimeSequence {
    pub id: String,
    pub gt_2d: Pose2DSequence,
    pub hpe_2d: Option<Pose2DSequence>,
    pub gt_3d: Pose3DSequence,
}

impl RegimeSequence {
    fn channel(&self, kind: InputKind, regime: Regime) -> Result<&Pose2DSequence> {
        match kind {
            InputKind::Gt => Ok(&self.gt_2d),
            InputKind::Hpe => self.hpe_2d.as_ref().ok_or_else(|| LifterError::MissingChannel {
                regime,
                channel: kind,
                sample: self.id.clone(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeRow {
    pub regime: Regime,
    pub mean_mpjpe: f64,
    pub per_seed: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeTable {
    pub lambda: f64,
    pub seeds: Vec<u64>,
    pub rows: Vec<RegimeRow>,
    /// Regimes sorted by ascending mean MPJPE.
    pub ordering: Vec<Regime>,
}

impl RegimeTable {
    pub fn row(&self, regime: Regime) -> &RegimeRow {
        self.rows.iter().find(|r| r.regime == regime).expect("all regimes present")
    }

    pub fn mean(&self, train: InputKind, test: InputKind) -> f64 {
        self.row(Regime { train, test }).mean_mpjpe
    }

    pub fn text(&self) -> String {
        let mut out = format!("{:<10} {:>12}  per-seed\n", "regime", "MPJPE (mm)");
        for r in &self.rows {
            let seeds: Vec<String> = r.per_seed.iter().map(|v| format!("{v:.2}")).collect();
            out += &format!("{:<10} {:>12.2}  {}\n", r.regime.to_string(), r.mean_mpjpe, seeds.join(" "));
        }
        let order: Vec<String> = self.ordering.iter().map(|r| r.to_string()).collect();
        out += &format!("ordering: {}\n", order.join(" < "));
        out
    }
}

/// Fits one lifter per regime and seed and scores it on the test sequences.
///
/// Each seed draws a bootstrap resample of the training sequences; all four
/// regimes of a seed share that resample.
pub fn run_regimes_on(
    train: &[RegimeSequence],
    test: &[RegimeSequence],
    lambda: f64,
    seeds: &[u64],
) -> Result<RegimeTable> {
    if seeds.is_empty() {
        return Err(LifterError::NoSeeds);
    }
    if train.is_empty() || test.is_empty() {
        return Err(LifterError::NoData);
    }
    let mut rows: Vec<RegimeRow> = Regime::ALL
        .iter()
        .map(|&regime| RegimeRow {
            regime,
            mean_mpjpe: 0.0,
            per_seed: Vec::with_capacity(seeds.len()),
        })
        .collect();
    for &seed in seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let picks: Vec<usize> = (0..train.len()).map(|_| rng.random_range(0..train.len())).collect();
        for row in rows.iter_mut() {
            let regime = row.regime;
            let inputs = picks
                .iter()
                .map(|&i| train[i].channel(regime.train, regime).cloned())
                .collect::<Result<Vec<_>>>()?;
            let targets: Vec<_> = picks.iter().map(|&i| train[i].gt_3d.clone()).collect();
            let model = fit(&inputs, &targets, lambda)?;
            let errors = test
                .iter()
                .map(|s| {
                    let pred = predict(&model, s.channel(regime.test, regime)?)?;
                    Ok(mpjpe(&s.gt_3d, &pred)?)
                })
                .collect::<Result<Vec<_>>>()?;
            row.per_seed.push(per_sequence_average(&errors)?);
        }
    }
    for row in rows.iter_mut() {
        row.mean_mpjpe = row.per_seed.iter().sum::<f64>() / row.per_seed.len() as f64;
    }
    let mut ordering: Vec<Regime> = rows.iter().map(|r| r.regime).collect();
    ordering.sort_by(|a, b| {
        let (x, y) = (
            rows.iter().find(|r| r.regime == *a).unwrap().mean_mpjpe,
            rows.iter().find(|r| r.regime == *b).unwrap().mean_mpjpe,
        );
        x.total_cmp(&y)
    });
    Ok(RegimeTable {
        lambda,
        seeds: seeds.to_vec(),
        rows,
        ordering,
    })
}
