use std::path::{Path, PathBuf};

use ngo_tensor::{AdamState, Graph, ParamSet, Tensor};

use super::config::{Stage, TrainConfig};
use super::data::{local_batch, PairBatch};
use super::losses::local_loss;
use super::pipeline::{Pipeline, PipelineConfig};
use super::state::{adam_config, build_checkpoint, restore, Progress};
use crate::formats::{Checkpoint, MetricLog};
use crate::geometry::wrap_angle;
use crate::nets::LocalPoseNet;
use crate::{Error, Result};

/// Output locations and resume source shared by both training stages.
#[derive(Debug, Clone)]
pub struct RunPaths {
    /// Final checkpoint. Per-epoch copies go next to it as `<stem>.epoch<k>.ngoc`.
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub resume: Option<PathBuf>,
}

impl RunPaths {
    pub fn epoch_checkpoint(&self, epoch: usize) -> PathBuf {
        let stem = self.checkpoint.file_stem().and_then(|s| s.to_str()).unwrap_or("checkpoint");
        self.checkpoint.with_file_name(format!("{stem}.epoch{epoch}.ngoc"))
    }
}

/// Error statistics of a local net over a set of pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairStats {
    pub loss: f64,
    pub rmse_trans: f64,
    pub rmse_rot: f64,
}

fn pair_stats(pred: &[f32], gt: &[f32], lambda_rot: f64) -> PairStats {
    let n = (gt.len() / 3).max(1) as f64;
    let (mut t, mut r) = (0.0, 0.0);
    for (p, q) in pred.chunks_exact(3).zip(gt.chunks_exact(3)) {
        let dx = p[0] as f64 - q[0] as f64;
        let dy = p[1] as f64 - q[1] as f64;
        let dth = wrap_angle(p[2] as f64 - q[2] as f64);
        t += dx * dx + dy * dy;
        r += dth * dth;
    }
    PairStats { loss: (t + lambda_rot * r) / n, rmse_trans: (t / n).sqrt(), rmse_rot: (r / n).sqrt() }
}

/// Local net errors on `pairs`, evaluated in chunks.
pub fn eval_pairs(net: &LocalPoseNet, params: &ParamSet<f32>, pairs: &PairBatch, lambda_rot: f64) -> Result<PairStats> {
    let per = pairs.input.len() / pairs.len().max(1);
    let mut pred = Vec::with_capacity(pairs.targets.len());
    for start in (0..pairs.len()).step_by(256) {
        let end = (start + 256).min(pairs.len());
        let (d, _) = net.infer(params, &pairs.input[start * per..end * per], &pairs.actions[start * 3..end * 3])?;
        pred.extend(d);
    }
    Ok(pair_stats(&pred, &pairs.targets, lambda_rot))
}

/// The predictor that always answers "no motion".
pub fn zero_motion_stats(pairs: &PairBatch, lambda_rot: f64) -> PairStats {
    pair_stats(&vec![0.0; pairs.targets.len()], &pairs.targets, lambda_rot)
}

fn log_eval(log: &mut MetricLog, step: u64, s: PairStats) -> Result<()> {
    log.log(step, "test", "loss", s.loss)?;
    log.log(step, "test", "rmse_trans", s.rmse_trans)?;
    log.log(step, "test", "rmse_rot", s.rmse_rot)
}

pub fn batches_per_epoch(cfg: &TrainConfig) -> usize {
    cfg.items_per_epoch.div_ceil(cfg.batch_size)
}

/// Pretrains the local net on freshly generated frame pairs. Every pair is
/// drawn once and discarded. Writes a checkpoint after each epoch; with
/// zero epochs only the initialization is written.
pub fn train_local(cfg: &TrainConfig, paths: &RunPaths, test: &PairBatch) -> Result<Checkpoint> {
    cfg.validate(Stage::Local)?;
    let net = LocalPoseNet::new(cfg.local_net())?;
    let init = net.init_params::<f32>(cfg.seed);
    let (mut params, mut adam, mut progress) = match &paths.resume {
        Some(path) => restore(&Checkpoint::read(path)?, "local", cfg, &init)?,
        None => {
            let adam = AdamState::new(&init, adam_config(cfg));
            (init, adam, Progress::default())
        }
    };
    let mut log = match &paths.resume {
        Some(_) => MetricLog::resume(&paths.metrics, progress.updates)?,
        None => MetricLog::create(&paths.metrics)?,
    };
    let per_epoch = batches_per_epoch(cfg);
    let total = per_epoch * cfg.epochs;
    if paths.resume.is_none() {
        log_eval(&mut log, 0, eval_pairs(&net, &params, test, cfg.lambda_rot)?)?;
        log.log(0, "test", "zero_motion_rmse_trans", zero_motion_stats(test, cfg.lambda_rot).rmse_trans)?;
        if cfg.epochs == 0 {
            let ck = build_checkpoint("local", cfg, &params, &adam, progress)?;
            ck.write(&paths.checkpoint)?;
            return Ok(ck);
        }
    }
    if progress.items_done >= total {
        return Err(Error::Checkpoint(format!("nothing to resume: all {total} batches already consumed")));
    }

    let pc = PipelineConfig {
        workers: cfg.workers,
        capacity: cfg.queue_capacity,
        deterministic: cfg.deterministic,
        base_seed: cfg.seed ^ 0x6c6f_6361_6c00,
        total,
        skip: progress.items_done,
    };
    let job = cfg.clone();
    let pipeline = Pipeline::spawn(pc, move |seed, _, _| local_batch(&job, seed))?;
    let n_rays = net.config().n_rays;
    let mut last = None;
    for item in pipeline {
        let batch = item?.value;
        let n = batch.len();
        let mut g = Graph::<f32>::new();
        let x = g.input(Tensor::new(&[n, 8, n_rays], batch.input)?);
        let a = g.input(Tensor::new(&[n, 3], batch.actions)?);
        let y = g.input(Tensor::new(&[n, 3], batch.targets)?);
        let out = net.forward(&mut g, &params, x, Some(a), true)?;
        let loss = local_loss(&mut g, out.delta, y, cfg.lambda_rot)?;
        let loss_value = g.value(loss)[0] as f64;
        if !loss_value.is_finite() {
            return Err(Error::Pipeline(format!("training loss diverged at update {}", progress.updates + 1)));
        }
        params.zero_grad();
        g.backward(loss, &mut params)?;
        if cfg.grad_clip > 0.0 {
            params.clip_grad_norm(cfg.grad_clip);
        }
        adam.config.lr = cfg.lr_at(progress.updates, total as u64);
        adam.step(&mut params)?;
        params.clear_grad();
        progress.items_done += 1;
        progress.updates += 1;
        log.log(progress.updates, "train", "loss", loss_value)?;

        let epoch_end = progress.items_done % per_epoch == 0;
        if epoch_end || (cfg.eval_every > 0 && progress.updates % cfg.eval_every as u64 == 0) {
            log_eval(&mut log, progress.updates, eval_pairs(&net, &params, test, cfg.lambda_rot)?)?;
        }
        if epoch_end {
            progress.epoch = progress.items_done / per_epoch;
            let ck = build_checkpoint("local", cfg, &params, &adam, progress)?;
            ck.write(&paths.epoch_checkpoint(progress.epoch))?;
            ck.write(&paths.checkpoint)?;
            last = Some(ck);
        }
    }
    last.ok_or_else(|| Error::Pipeline("no epoch completed".into()))
}

/// Creates the parent directory of `path` if it is missing.
pub fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.exists() => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
        }
        _ => Ok(()),
    }
}
