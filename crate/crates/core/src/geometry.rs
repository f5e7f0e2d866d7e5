//! Planar pose algebra and drift metrics.
//!
//! Relative poses live in the predecessor's body frame: `compose(p, d)`
//! moves `d.dx` along p's heading and `d.dy` to its left. Headings are kept
//! in the half-open interval (−π, π].

use ngo_tensor::{Graph, Scalar, Var};

use crate::{Error, Result};

pub use ngo_tensor::wrap as wrap_scalar;

/// Wraps an angle into (−π, π]; −π maps to π.
pub fn wrap_angle(a: f64) -> f64 {
    ngo_tensor::wrap(a)
}

/// Absolute pose in the world frame.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

/// Relative motion expressed in the predecessor's frame.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RelPose2 {
    pub dx: f64,
    pub dy: f64,
    pub dtheta: f64,
}

impl Pose2 {
    pub const ORIGIN: Pose2 = Pose2 { x: 0.0, y: 0.0, theta: 0.0 };

    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Pose2 { x, y, theta: wrap_angle(theta) }
    }

    pub fn position(&self) -> (f64, f64) {
        (self.x, self.y)
    }

    pub fn distance(&self, other: &Pose2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Reinterprets the pose as the motion from the origin to it.
    pub fn as_rel(&self) -> RelPose2 {
        RelPose2 { dx: self.x, dy: self.y, dtheta: self.theta }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.theta]
    }
}

impl RelPose2 {
    pub const ZERO: RelPose2 = RelPose2 { dx: 0.0, dy: 0.0, dtheta: 0.0 };

    pub fn new(dx: f64, dy: f64, dtheta: f64) -> Self {
        RelPose2 { dx, dy, dtheta: wrap_angle(dtheta) }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.dx, self.dy, self.dtheta]
    }

    pub fn translation_norm(&self) -> f64 {
        self.dx.hypot(self.dy)
    }
}

/// Applies the relative motion `d` to pose `p`.
pub fn compose(p: &Pose2, d: &RelPose2) -> Pose2 {
    let (s, c) = p.theta.sin_cos();
    Pose2 { x: p.x + d.dx * c - d.dy * s, y: p.y + d.dx * s + d.dy * c, theta: wrap_angle(p.theta + d.dtheta) }
}

/// The relative motion taking `a` to `b`, in `a`'s frame.
pub fn between(a: &Pose2, b: &Pose2) -> RelPose2 {
    let (s, c) = a.theta.sin_cos();
    let (ex, ey) = (b.x - a.x, b.y - a.y);
    RelPose2 { dx: c * ex + s * ey, dy: -s * ex + c * ey, dtheta: wrap_angle(b.theta - a.theta) }
}

/// Inverse transform: `compose(p, &inverse(d))` undoes `d`.
pub fn inverse(d: &RelPose2) -> RelPose2 {
    between(&Pose2 { x: d.dx, y: d.dy, theta: d.dtheta }, &Pose2::ORIGIN)
}

/// Accumulates relative poses from the origin: `p_1 = Δp_1`, `p_t = p_{t−1} ⊕ Δp_t`.
pub fn r2g(deltas: &[RelPose2]) -> Result<Vec<Pose2>> {
    if deltas.is_empty() {
        return Err(Error::EmptySequence("r2g"));
    }
    let mut out = Vec::with_capacity(deltas.len());
    let mut p = Pose2::ORIGIN;
    for d in deltas {
        p = compose(&p, d);
        out.push(p);
    }
    Ok(out)
}

/// Inverse of [`r2g`]: `Δp_1 = p_1`, `Δp_t = between(p_{t−1}, p_t)`.
pub fn g2r(poses: &[Pose2]) -> Result<Vec<RelPose2>> {
    if poses.is_empty() {
        return Err(Error::EmptySequence("g2r"));
    }
    let mut prev = Pose2::ORIGIN;
    Ok(poses
        .iter()
        .map(|p| {
            let d = between(&prev, p);
            prev = *p;
            d
        })
        .collect())
}

/// Differentiable [`r2g`] on a `[T, 3]` tensor of relative poses.
pub fn r2g_tensor<S: Scalar>(g: &mut Graph<S>, deltas: Var) -> Result<Var> {
    let t = g.shape(deltas).first().copied().unwrap_or(0);
    if t == 0 {
        return Err(Error::EmptySequence("r2g"));
    }
    Ok(g.se2_accumulate(deltas, t)?)
}

/// Composes consecutive windows of `window` relative poses into one relative
/// pose each. `deltas` is `[T, 3]` with `T` a multiple of `window`.
pub fn compose_windows<S: Scalar>(g: &mut Graph<S>, deltas: Var, window: usize) -> Result<Var> {
    let t = g.shape(deltas)[0];
    if window == 0 || t % window != 0 {
        return Err(Error::LengthMismatch { what: "compose_windows", left: t, right: window });
    }
    if window == 1 {
        return Ok(deltas);
    }
    let acc = g.se2_accumulate(deltas, window)?;
    let ends: Vec<usize> = (1..=t / window).map(|j| j * window - 1).collect();
    Ok(g.select_rows(acc, &ends)?)
}

pub fn poses_from_rows(rows: &[f64]) -> Vec<Pose2> {
    rows.chunks_exact(3).map(|r| Pose2 { x: r[0], y: r[1], theta: r[2] }).collect()
}

pub fn rels_from_rows(rows: &[f64]) -> Vec<RelPose2> {
    rows.chunks_exact(3).map(|r| RelPose2 { dx: r[0], dy: r[1], dtheta: r[2] }).collect()
}

pub fn rels_to_rows(rels: &[RelPose2]) -> Vec<f64> {
    rels.iter().flat_map(|d| d.to_array()).collect()
}

/// How the scale-free drift percentages are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DriftMode {
    /// Final-pose error over distance travelled.
    #[default]
    FinalPose,
    /// Sum of per-step relative-motion errors over distance travelled.
    Accumulated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryMetrics {
    pub rmse_pos: f64,
    pub rmse_rot: f64,
    /// Percent of distance travelled.
    pub pct_err_trans: f64,
    /// Radians of heading error per unit distance travelled.
    pub pct_err_rot: f64,
    pub distance: f64,
    pub per_step_pos_err: Vec<f64>,
    pub per_step_rot_err: Vec<f64>,
    /// Cumulative ground-truth distance at each step.
    pub per_step_distance: Vec<f64>,
}

impl TrajectoryMetrics {
    /// Positional error divided by distance travelled so far (0 before any motion).
    pub fn pos_err_ratio(&self) -> Vec<f64> {
        self.per_step_pos_err
            .iter()
            .zip(&self.per_step_distance)
            .map(|(&e, &d)| if d > 0.0 { e / d } else { 0.0 })
            .collect()
    }

    pub fn rot_err_ratio(&self) -> Vec<f64> {
        self.per_step_rot_err
            .iter()
            .zip(&self.per_step_distance)
            .map(|(&e, &d)| if d > 0.0 { e / d } else { 0.0 })
            .collect()
    }
}

/// Position and heading RMSE over aligned poses. Unlike the drift
/// percentages this is defined for trajectories that never move.
pub fn pose_rmse(pred: &[Pose2], gt: &[Pose2]) -> Result<(f64, f64)> {
    if pred.len() != gt.len() || gt.is_empty() {
        return Err(Error::LengthMismatch { what: "pose rmse", left: pred.len(), right: gt.len() });
    }
    let n = gt.len() as f64;
    let (mut pos, mut rot) = (0.0, 0.0);
    for (p, q) in pred.iter().zip(gt) {
        pos += p.distance(q).powi(2);
        rot += wrap_angle(p.theta - q.theta).powi(2);
    }
    Ok(((pos / n).sqrt(), (rot / n).sqrt()))
}

pub fn trajectory_metrics(pred: &[Pose2], gt: &[Pose2], mode: DriftMode) -> Result<TrajectoryMetrics> {
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch { what: "trajectory metrics", left: pred.len(), right: gt.len() });
    }
    if gt.len() < 2 {
        return Err(Error::LengthMismatch { what: "trajectory metrics (need >= 2 poses)", left: gt.len(), right: 2 });
    }
    let n = gt.len() as f64;
    let per_step_pos_err: Vec<f64> = pred.iter().zip(gt).map(|(p, q)| p.distance(q)).collect();
    let per_step_rot_err: Vec<f64> = pred.iter().zip(gt).map(|(p, q)| wrap_angle(p.theta - q.theta).abs()).collect();
    let mut per_step_distance = Vec::with_capacity(gt.len());
    let mut dist = 0.0;
    for (i, q) in gt.iter().enumerate() {
        if i > 0 {
            dist += q.distance(&gt[i - 1]);
        }
        per_step_distance.push(dist);
    }
    if dist == 0.0 {
        return Err(Error::ZeroDistance);
    }
    let rmse_pos = (per_step_pos_err.iter().map(|e| e * e).sum::<f64>() / n).sqrt();
    let rmse_rot = (per_step_rot_err.iter().map(|e| e * e).sum::<f64>() / n).sqrt();
    let (trans_drift, rot_drift) = match mode {
        DriftMode::FinalPose => (*per_step_pos_err.last().unwrap(), *per_step_rot_err.last().unwrap()),
        DriftMode::Accumulated => {
            let mut t = 0.0;
            let mut r = 0.0;
            for i in 1..gt.len() {
                let dp = between(&pred[i - 1], &pred[i]);
                let dg = between(&gt[i - 1], &gt[i]);
                t += (dp.dx - dg.dx).hypot(dp.dy - dg.dy);
                r += wrap_angle(dp.dtheta - dg.dtheta).abs();
            }
            (t, r)
        }
    };
    Ok(TrajectoryMetrics {
        rmse_pos,
        rmse_rot,
        pct_err_trans: 100.0 * trans_drift / dist,
        pct_err_rot: rot_drift / dist,
        distance: dist,
        per_step_pos_err,
        per_step_rot_err,
        per_step_distance,
    })
}
