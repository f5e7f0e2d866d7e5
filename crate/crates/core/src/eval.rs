//! Trajectory-level evaluation of local-only and optimized estimates, and
//! the CSV files derived from it.

use std::fmt::Write as _;
use std::path::Path;

use crate::geometry::{trajectory_metrics, DriftMode, Pose2, TrajectoryMetrics};
use crate::mazeworld::Trajectory;
use crate::nets::AttentionTrace;
use crate::training::{local_meta_poses, GlobalModel, LocalModel};
use crate::{Error, Result};

/// A global model under evaluation with its report label.
#[derive(Debug, Clone)]
pub struct GlobalVariant {
    pub label: String,
    pub model: GlobalModel,
    pub iterations: usize,
}

/// Estimates for one trajectory at window-end timestamps, origin first.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryEstimate {
    /// Frame index of each pose (0, w, 2w, ...).
    pub frames: Vec<usize>,
    pub gt: Vec<Pose2>,
    pub local: Vec<Pose2>,
    /// One pose sequence per global variant.
    pub globals: Vec<Vec<Pose2>>,
    pub traces: Vec<AttentionTrace>,
}

/// Ground-truth poses at the end of each window, as `[T, 3]` rows.
pub fn meta_targets(traj: &Trajectory, steps: usize, window: usize) -> Vec<f32> {
    (1..=steps / window).flat_map(|j| traj.gt_poses[j * window].to_array()).map(|v| v as f32).collect()
}

/// `[T, 3]` rows with the origin prepended.
pub fn with_origin(rows: &[f32]) -> Vec<Pose2> {
    std::iter::once(Pose2::ORIGIN)
        .chain(rows.chunks_exact(3).map(|r| Pose2::new(r[0] as f64, r[1] as f64, r[2] as f64)))
        .collect()
}

/// Steps of `traj` that fit into whole windows.
pub fn usable_steps(traj: &Trajectory, window: usize) -> usize {
    (traj.len().saturating_sub(1)) / window * window
}

/// Runs the local net once per trajectory and every global variant on its
/// output. All variants must share the aggregation window.
pub fn estimate(
    trajs: &[Trajectory],
    local: &LocalModel,
    globals: &[GlobalVariant],
    window: usize,
) -> Result<Vec<TrajectoryEstimate>> {
    if let Some(v) = globals.iter().find(|v| v.model.net.window() != window) {
        return Err(Error::config(
            "n_halvings",
            format!("model `{}` uses window {}, evaluation uses {window}", v.label, v.model.net.window()),
        ));
    }
    let mut out = Vec::with_capacity(trajs.len());
    for (i, traj) in trajs.iter().enumerate() {
        let steps = usable_steps(traj, window);
        if steps == 0 {
            return Err(Error::LengthMismatch {
                what: "trajectory shorter than one window",
                left: traj.len(),
                right: window + 1,
            });
        }
        let run = local.run(traj, steps)?;
        let local_rows = local_meta_poses(&run.deltas, window)?;
        let mut globals_out = Vec::with_capacity(globals.len());
        let mut traces = Vec::with_capacity(globals.len());
        for v in globals {
            let (poses, trace) = v.model.run(&run, v.iterations).map_err(|e| match e {
                Error::LengthMismatch { .. } => {
                    Error::Checkpoint(format!("trajectory {i}: `{}` incompatible: {e}", v.label))
                }
                e => e,
            })?;
            globals_out.push(with_origin(&poses));
            traces.push(trace);
        }
        let gt = (0..=steps / window).map(|j| traj.gt_poses[j * window]).collect();
        out.push(TrajectoryEstimate {
            frames: (0..=steps / window).map(|j| j * window).collect(),
            gt,
            local: with_origin(&local_rows),
            globals: globals_out,
            traces,
        });
    }
    Ok(out)
}

/// Metrics of one estimate per model, local first.
pub fn estimate_metrics(e: &TrajectoryEstimate) -> Result<Vec<TrajectoryMetrics>> {
    std::iter::once(&e.local).chain(&e.globals).map(|p| trajectory_metrics(p, &e.gt, DriftMode::FinalPose)).collect()
}

/// One row of the per-trajectory table.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub model: String,
    pub split: String,
    pub index: usize,
    pub rmse_pos: f64,
    pub rmse_rot: f64,
    pub pct_trans: f64,
    pub pct_rot: f64,
}

/// One row of the aggregate report: means over trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub model: String,
    pub split: String,
    pub rmse_pos: f64,
    pub rmse_rot: f64,
    pub pct_trans: f64,
    pub pct_rot: f64,
}

pub const LOCAL_LABEL: &str = "local";

pub fn model_labels(globals: &[GlobalVariant]) -> Vec<String> {
    std::iter::once(LOCAL_LABEL.to_string()).chain(globals.iter().map(|v| v.label.clone())).collect()
}

pub fn trajectory_rows(split: &str, labels: &[String], estimates: &[TrajectoryEstimate]) -> Result<Vec<TrajectoryRow>> {
    let mut rows = Vec::new();
    for (index, e) in estimates.iter().enumerate() {
        for (label, m) in labels.iter().zip(estimate_metrics(e)?) {
            rows.push(TrajectoryRow {
                model: label.clone(),
                split: split.to_string(),
                index,
                rmse_pos: m.rmse_pos,
                rmse_rot: m.rmse_rot,
                pct_trans: m.pct_err_trans,
                pct_rot: m.pct_err_rot,
            });
        }
    }
    Ok(rows)
}

/// Means of the per-trajectory rows grouped by (model, split), in first-seen order.
pub fn aggregate(rows: &[TrajectoryRow]) -> Vec<ReportRow> {
    let mut keys: Vec<(String, String)> = Vec::new();
    for r in rows {
        let k = (r.model.clone(), r.split.clone());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(model, split)| {
            let group: Vec<&TrajectoryRow> = rows.iter().filter(|r| r.model == model && r.split == split).collect();
            let n = group.len() as f64;
            let mean = |f: fn(&TrajectoryRow) -> f64| group.iter().map(|r| f(r)).sum::<f64>() / n;
            ReportRow {
                rmse_pos: mean(|r| r.rmse_pos),
                rmse_rot: mean(|r| r.rmse_rot),
                pct_trans: mean(|r| r.pct_trans),
                pct_rot: mean(|r| r.pct_rot),
                model,
                split,
            }
        })
        .collect()
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn render_report(rows: &[ReportRow]) -> String {
    let mut s = String::from("model,split,rmse_pos,rmse_rot,pct_trans,pct_rot\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{},{}", r.model, r.split, r.rmse_pos, r.rmse_rot, r.pct_trans, r.pct_rot);
    }
    s
}

pub fn render_trajectory_rows(rows: &[TrajectoryRow]) -> String {
    let mut s = String::from("model,split,trajectory,rmse_pos,rmse_rot,pct_trans,pct_rot\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.model, r.split, r.index, r.rmse_pos, r.rmse_rot, r.pct_trans, r.pct_rot
        );
    }
    s
}

/// Parses a report written by [`render_report`].
pub fn parse_report(text: &str) -> Result<Vec<ReportRow>> {
    let bad = |line: usize, why: &str| Error::Format { path: "report".into(), reason: format!("line {line}: {why}") };
    let mut lines = text.lines();
    if lines.next() != Some("model,split,rmse_pos,rmse_rot,pct_trans,pct_rot") {
        return Err(bad(1, "unexpected header"));
    }
    lines
        .enumerate()
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 6 {
                return Err(bad(i + 2, "expected 6 fields"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(i + 2, "bad number"));
            Ok(ReportRow {
                model: f[0].into(),
                split: f[1].into(),
                rmse_pos: num(f[2])?,
                rmse_rot: num(f[3])?,
                pct_trans: num(f[4])?,
                pct_rot: num(f[5])?,
            })
        })
        .collect()
}

/// Step-by-step poses of ground truth and every model (overlay data).
pub fn render_overlay(labels: &[String], e: &TrajectoryEstimate) -> String {
    let mut s = String::from("step,gt_x,gt_y,gt_theta");
    for l in labels {
        let _ = write!(s, ",{l}_x,{l}_y,{l}_theta");
    }
    s.push('\n');
    let models: Vec<&Vec<Pose2>> = std::iter::once(&e.local).chain(&e.globals).collect();
    for (j, frame) in e.frames.iter().enumerate() {
        let g = e.gt[j];
        let _ = write!(s, "{frame},{},{},{}", g.x, g.y, g.theta);
        for m in &models {
            let p = m[j];
            let _ = write!(s, ",{},{},{}", p.x, p.y, p.theta);
        }
        s.push('\n');
    }
    s
}

/// Mean positional / heading error per step over trajectories (`ratio`:
/// divided by distance travelled so far). Trajectories shorter than a step
/// simply do not contribute to it.
pub fn render_series(labels: &[String], estimates: &[TrajectoryEstimate], ratio: bool) -> Result<String> {
    let len = estimates.iter().map(|e| e.frames.len()).max().unwrap_or(0);
    let k = labels.len();
    let mut pos = vec![vec![0.0; len]; k];
    let mut rot = vec![vec![0.0; len]; k];
    let mut count = vec![0usize; len];
    let mut frames = vec![0usize; len];
    for e in estimates {
        for (m, metrics) in estimate_metrics(e)?.iter().enumerate() {
            let (pe, re) = if ratio {
                (metrics.pos_err_ratio(), metrics.rot_err_ratio())
            } else {
                (metrics.per_step_pos_err.clone(), metrics.per_step_rot_err.clone())
            };
            for j in 0..pe.len() {
                pos[m][j] += pe[j];
                rot[m][j] += re[j];
            }
        }
        for (j, &f) in e.frames.iter().enumerate() {
            count[j] += 1;
            frames[j] = f;
        }
    }
    let suffix = if ratio { "_ratio" } else { "" };
    let mut s = String::from("step");
    for l in labels {
        let _ = write!(s, ",{l}_pos{suffix},{l}_rot{suffix}");
    }
    s.push('\n');
    for j in 0..len {
        let _ = write!(s, "{}", frames[j]);
        let c = count[j] as f64;
        for m in 0..k {
            let _ = write!(s, ",{},{}", pos[m][j] / c, rot[m][j] / c);
        }
        s.push('\n');
    }
    Ok(s)
}

/// Row-major `[T, T]` matrix as CSV without a header.
pub fn render_matrix(t: usize, values: &[f64]) -> String {
    let mut s = String::new();
    for row in values.chunks(t.max(1)) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    s
}

/// Writes the overlay, series and attention files of one split into `dir`
/// and returns its per-trajectory rows.
pub fn write_split(
    dir: &Path,
    split: &str,
    labels: &[String],
    estimates: &[TrajectoryEstimate],
    attention_trajs: usize,
) -> Result<Vec<TrajectoryRow>> {
    let rows = trajectory_rows(split, labels, estimates)?;
    for (i, e) in estimates.iter().enumerate() {
        write_text(&dir.join(format!("overlay_{split}_{i:03}.csv")), &render_overlay(labels, e))?;
    }
    write_text(&dir.join(format!("error_{split}.csv")), &render_series(labels, estimates, false)?)?;
    write_text(&dir.join(format!("ratio_{split}.csv")), &render_series(labels, estimates, true)?)?;
    for (i, e) in estimates.iter().take(attention_trajs).enumerate() {
        for (label, trace) in labels[1..].iter().zip(&e.traces) {
            for (k, w) in trace.weights.iter().enumerate() {
                let name = format!("attention_{label}_{split}_{i:03}_iter{}.csv", k + 1);
                write_text(&dir.join(name), &render_matrix(trace.t, w))?;
            }
        }
    }
    Ok(rows)
}

/// Writes `report.csv` and `trajectories.csv`.
pub fn write_report(dir: &Path, rows: &[TrajectoryRow]) -> Result<Vec<ReportRow>> {
    let report = aggregate(rows);
    write_text(&dir.join("report.csv"), &render_report(&report))?;
    write_text(&dir.join("trajectories.csv"), &render_trajectory_rows(rows))?;
    Ok(report)
}
