//! Trajectory metrics: KITTI segment errors, ATE, frame-to-frame RPE and
//! Umeyama alignment.
//!
//! [`evaluate`] follows the conventions of the KITTI odometry evaluation
//! toolbox: both trajectories are first re-expressed relative to their first
//! pose, the prediction is then aligned to ground truth once (optional), and
//! every metric is computed on the aligned prediction. Segment errors use
//! start frames every `step_size` frames and end at the first frame whose
//! ground-truth arc length exceeds the start by strictly more than `L`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{relative_transform, rotation_angle, RotationMatrix, Trajectory, TransformSE3};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AlignmentMode {
    #[default]
    #[serde(rename = "none")]
    None,
    #[serde(rename = "6dof")]
    Rigid6Dof,
    #[serde(rename = "7dof")]
    Similarity7Dof,
}

impl AlignmentMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AlignmentMode::None => "none",
            AlignmentMode::Rigid6Dof => "6dof",
            AlignmentMode::Similarity7Dof => "7dof",
        }
    }
}

impl fmt::Display for AlignmentMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AlignmentMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(AlignmentMode::None),
            "6dof" | "rigid_6dof" => Ok(AlignmentMode::Rigid6Dof),
            "7dof" | "similarity_7dof" => Ok(AlignmentMode::Similarity7Dof),
            other => Err(invalid(format!(
                "unknown alignment `{other}` (expected none, 6dof or 7dof)"
            ))),
        }
    }
}

/// `x ↦ s · R · x + t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: RotationMatrix,
    pub translation: Vector3<f64>,
}

impl Similarity {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: RotationMatrix::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.scale * (self.rotation.matrix() * p) + self.translation
    }

    /// Scales every position by `s`, then left-multiplies by `[R | t]`.
    pub fn apply(&self, traj: &Trajectory) -> Trajectory {
        if *self == Self::identity() {
            return traj.clone();
        }
        let rigid = TransformSE3::new(self.rotation, self.translation);
        let poses = traj
            .poses()
            .iter()
            .map(|p| rigid.compose(&TransformSE3::new(p.rotation, self.scale * p.translation)))
            .collect();
        Trajectory::new(poses).expect("non-empty")
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            scale: 1.0 / self.scale,
            rotation: rt,
            translation: -(rt.matrix() * self.translation) / self.scale,
        }
    }
}

fn check_lengths(pred: &Trajectory, gt: &Trajectory, min: usize) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(invalid(format!(
            "trajectory lengths differ: pred {} vs gt {}",
            pred.len(),
            gt.len()
        )));
    }
    if pred.len() < min {
        return Err(invalid(format!("need at least {min} poses, got {}", pred.len())));
    }
    Ok(())
}

/// Closed-form least-squares `(s, R, t)` minimising `Σ ‖s R p_pred + t − p_gt‖²`
/// over positions. `with_scale = false` fixes `s = 1`.
pub fn umeyama_align(pred: &Trajectory, gt: &Trajectory, with_scale: bool) -> Result<Similarity> {
    check_lengths(pred, gt, 3)?;
    let x: Vec<Vector3<f64>> = pred.positions().collect();
    let y: Vec<Vector3<f64>> = gt.positions().collect();
    // The optimum is exactly the identity; skip the round-off of the SVD.
    if x == y {
        return Ok(Similarity::identity());
    }
    let n = x.len() as f64;
    let mean_x = x.iter().sum::<Vector3<f64>>() / n;
    let mean_y = y.iter().sum::<Vector3<f64>>() / n;
    let sigma_x = x.iter().map(|p| (p - mean_x).norm_squared()).sum::<f64>() / n;
    let mut cov = Matrix3::zeros();
    for (px, py) in x.iter().zip(&y) {
        cov += (py - mean_y) * (px - mean_x).transpose();
    }
    cov /= n;
    let svd = cov.svd(true, true);
    let rank = svd.singular_values.iter().filter(|&&d| d > f64::EPSILON).count();
    if rank < 2 {
        return Err(Error::Degenerate(format!(
            "cross-covariance has rank {rank}; positions are too close to collinear for alignment"
        )));
    }
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let mut s = Matrix3::identity();
    if u.determinant() * v_t.determinant() < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let r = u * s * v_t;
    let scale = if with_scale {
        (Matrix3::from_diagonal(&svd.singular_values) * s).trace() / sigma_x
    } else {
        1.0
    };
    let t = mean_y - scale * (r * mean_x);
    Ok(Similarity {
        scale,
        rotation: RotationMatrix::new(r)?,
        translation: t,
    })
}

pub fn align(pred: &Trajectory, gt: &Trajectory, mode: AlignmentMode) -> Result<(Trajectory, Similarity)> {
    let sim = match mode {
        AlignmentMode::None => {
            check_lengths(pred, gt, 1)?;
            Similarity::identity()
        }
        AlignmentMode::Rigid6Dof => umeyama_align(pred, gt, false)?,
        AlignmentMode::Similarity7Dof => umeyama_align(pred, gt, true)?,
    };
    Ok((sim.apply(pred), sim))
}

fn position_rmse(pred: &Trajectory, gt: &Trajectory) -> f64 {
    let sq: f64 = pred
        .positions()
        .zip(gt.positions())
        .map(|(p, g)| (g - p).norm_squared())
        .sum();
    (sq / pred.len() as f64).sqrt()
}

/// RMSE of position differences after the chosen alignment (no anchoring).
pub fn ate(pred: &Trajectory, gt: &Trajectory, mode: AlignmentMode) -> Result<f64> {
    let (aligned, _) = align(pred, gt, mode)?;
    Ok(position_rmse(&aligned, gt))
}

/// `gt_rel⁻¹ · pred_rel`, exactly the identity when both are bitwise equal.
fn error_transform(gt_rel: &TransformSE3, pred_rel: &TransformSE3) -> TransformSE3 {
    if gt_rel == pred_rel {
        TransformSE3::identity()
    } else {
        gt_rel.inverse().compose(pred_rel)
    }
}

/// Mean frame-to-frame translation error (m) and rotation error (degrees).
pub fn rpe(pred: &Trajectory, gt: &Trajectory) -> Result<(f64, f64)> {
    check_lengths(pred, gt, 2)?;
    let (mut t_sum, mut r_sum) = (0.0, 0.0);
    let steps = pred.len() - 1;
    for k in 0..steps {
        let g = relative_transform(&gt.poses()[k], &gt.poses()[k + 1]);
        let p = relative_transform(&pred.poses()[k], &pred.poses()[k + 1]);
        let e = error_transform(&g, &p);
        t_sum += e.translation.norm();
        r_sum += e.rotation.angle();
    }
    Ok((t_sum / steps as f64, (r_sum / steps as f64).to_degrees()))
}

/// Cumulative ground-truth arc length per frame.
pub fn trajectory_distances(gt: &Trajectory) -> Vec<f64> {
    let mut d = Vec::with_capacity(gt.len());
    d.push(0.0);
    for w in gt.poses().windows(2) {
        let last = d[d.len() - 1];
        d.push(last + (w[1].translation - w[0].translation).norm());
    }
    d
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegmentConfig {
    /// Segment lengths in meters.
    pub lengths: Vec<u32>,
    /// Start-frame stride.
    pub step_size: usize,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self {
            lengths: vec![100, 200, 300, 400, 500, 600, 700, 800],
            step_size: 10,
        }
    }
}

impl SegmentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.step_size == 0 {
            return Err(invalid("segment step_size must be positive"));
        }
        if self.lengths.is_empty() || self.lengths.contains(&0) {
            return Err(invalid("segment lengths must be a non-empty list of positive meters"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentError {
    pub first_frame: usize,
    pub last_frame: usize,
    pub length: u32,
    /// Radians per meter.
    pub r_err: f64,
    /// Meters per meter.
    pub t_err: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentSummary {
    /// Percent.
    pub t_err: f64,
    /// Degrees per 100 m.
    pub r_err: f64,
    pub n_segments_per_length: BTreeMap<u32, usize>,
    pub segments: Vec<SegmentError>,
}

impl SegmentSummary {
    pub fn available(&self) -> bool {
        !self.segments.is_empty()
    }
}

fn last_frame_from_segment_length(dist: &[f64], first: usize, length: f64) -> Option<usize> {
    (first..dist.len()).find(|&i| dist[i] > dist[first] + length)
}

/// Every segment's relative-pose error, in start-frame then length order.
pub fn segment_errors(pred: &Trajectory, gt: &Trajectory, cfg: &SegmentConfig) -> Result<Vec<SegmentError>> {
    check_lengths(pred, gt, 1)?;
    cfg.validate()?;
    let dist = trajectory_distances(gt);
    let mut out = Vec::new();
    for first in (0..gt.len()).step_by(cfg.step_size) {
        for &length in &cfg.lengths {
            let Some(last) = last_frame_from_segment_length(&dist, first, length as f64) else {
                continue;
            };
            let g = relative_transform(&gt.poses()[first], &gt.poses()[last]);
            let p = relative_transform(&pred.poses()[first], &pred.poses()[last]);
            let e = if g == p {
                TransformSE3::identity()
            } else {
                p.inverse().compose(&g)
            };
            out.push(SegmentError {
                first_frame: first,
                last_frame: last,
                length,
                r_err: rotation_angle(e.rotation.matrix()) / length as f64,
                t_err: e.translation.norm() / length as f64,
            });
        }
    }
    Ok(out)
}

/// Averages over all segments of all lengths. With no valid segment the
/// summary reports zero errors and [`SegmentSummary::available`] is false.
pub fn summarize_segments(segments: Vec<SegmentError>, cfg: &SegmentConfig) -> SegmentSummary {
    let mut counts: BTreeMap<u32, usize> = cfg.lengths.iter().map(|&l| (l, 0)).collect();
    for s in &segments {
        *counts.entry(s.length).or_default() += 1;
    }
    let (t_err, r_err) = if segments.is_empty() {
        (0.0, 0.0)
    } else {
        let n = segments.len() as f64;
        let t: f64 = segments.iter().map(|s| s.t_err).sum();
        let r: f64 = segments.iter().map(|s| s.r_err).sum();
        (t / n * 100.0, (r / n).to_degrees() * 100.0)
    };
    SegmentSummary {
        t_err,
        r_err,
        n_segments_per_length: counts,
        segments,
    }
}

/// Segment errors without any anchoring or alignment.
pub fn kitti_segment_errors(pred: &Trajectory, gt: &Trajectory, cfg: &SegmentConfig) -> Result<SegmentSummary> {
    Ok(summarize_segments(segment_errors(pred, gt, cfg)?, cfg))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Percent.
    pub t_err: f64,
    /// Degrees per 100 m.
    pub r_err: f64,
    /// Meters.
    pub ate: f64,
    /// Meters.
    pub rpe_t: f64,
    /// Degrees.
    pub rpe_r: f64,
    pub alignment: AlignmentMode,
    pub segments_available: bool,
    pub n_segments_per_length: BTreeMap<u32, usize>,
}

impl EvalReport {
    /// `(name, value)` for every scalar metric, in report order.
    pub fn metrics(&self) -> [(&'static str, f64); 5] {
        [
            ("t_err", self.t_err),
            ("r_err", self.r_err),
            ("ate", self.ate),
            ("rpe_t", self.rpe_t),
            ("rpe_r", self.rpe_r),
        ]
    }
}

/// Full evaluation with first-frame anchoring, one alignment of the whole
/// prediction, then segment errors, ATE and RPE on the aligned prediction.
pub fn evaluate(pred: &Trajectory, gt: &Trajectory, mode: AlignmentMode, cfg: &SegmentConfig) -> Result<EvalReport> {
    check_lengths(pred, gt, 2)?;
    let pred = pred.anchored_to_first();
    let gt = gt.anchored_to_first();
    let (pred, _) = align(&pred, &gt, mode)?;
    let seg = kitti_segment_errors(&pred, &gt, cfg)?;
    let (rpe_t, rpe_r) = rpe(&pred, &gt)?;
    Ok(EvalReport {
        t_err: seg.t_err,
        r_err: seg.r_err,
        ate: position_rmse(&pred, &gt),
        rpe_t,
        rpe_r,
        alignment: mode,
        segments_available: seg.available(),
        n_segments_per_length: seg.n_segments_per_length,
    })
}
