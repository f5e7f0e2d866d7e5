use std::sync::Arc;

use ngo_tensor::{AdamState, Graph, ParamSet, Tensor};

use super::config::{Stage, TrainConfig};
use super::data::{full_trajectory, Split};
use super::local::RunPaths;
use super::losses::global_loss;
use super::pipeline::{Pipeline, PipelineConfig};
use super::state::{adam_config, build_checkpoint, local_meta_poses, restore, LocalModel, LocalRun, Progress};
use crate::eval::{meta_targets, with_origin};
use crate::formats::{Checkpoint, MetricLog};
use crate::geometry::pose_rmse;
use crate::mazeworld::Trajectory;
use crate::nets::GlobalNet;
use crate::{Error, Result};

/// What the optimizer trains on: frozen local outputs and window-end targets.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalSample {
    pub local: LocalRun,
    /// `[T, 3]` ground-truth poses at window ends.
    pub targets: Vec<f32>,
}

impl GlobalSample {
    pub fn from_trajectory(local: &LocalModel, traj: &Trajectory, steps: usize, window: usize) -> Result<Self> {
        Ok(GlobalSample { local: local.run(traj, steps)?, targets: meta_targets(traj, steps, window) })
    }
}

/// Mean positional / heading RMSE of the optimizer and of local-only
/// accumulation over a sample set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlobalStats {
    pub rmse_pos: f64,
    pub rmse_rot: f64,
    pub local_rmse_pos: f64,
    pub local_rmse_rot: f64,
}

pub fn eval_global(
    net: &GlobalNet,
    params: &ParamSet<f32>,
    samples: &[GlobalSample],
    iterations: usize,
) -> Result<GlobalStats> {
    let mut acc = [0.0; 4];
    for s in samples {
        let gt = with_origin(&s.targets);
        let (poses, _, _) = net.infer(params, &s.local.features, &s.local.deltas, iterations)?;
        let local = local_meta_poses(&s.local.deltas, net.window())?;
        let g = pose_rmse(&with_origin(&poses), &gt)?;
        let l = pose_rmse(&with_origin(&local), &gt)?;
        for (a, v) in acc.iter_mut().zip([g.0, g.1, l.0, l.1]) {
            *a += v;
        }
    }
    let n = samples.len().max(1) as f64;
    Ok(GlobalStats {
        rmse_pos: acc[0] / n,
        rmse_rot: acc[1] / n,
        local_rmse_pos: acc[2] / n,
        local_rmse_rot: acc[3] / n,
    })
}

fn log_eval(log: &mut MetricLog, step: u64, s: GlobalStats) -> Result<()> {
    log.log(step, "test", "rmse_pos", s.rmse_pos)?;
    log.log(step, "test", "rmse_rot", s.rmse_rot)?;
    log.log(step, "test", "local_rmse_pos", s.local_rmse_pos)?;
    log.log(step, "test", "local_rmse_rot", s.local_rmse_rot)
}

/// Trains aggregation + optimizer on trajectories whose per-step deltas
/// and features come from the frozen local model. Local weights are only
/// read. `test` holds precomputed samples of the fixed test set.
pub fn train_global(
    cfg: &TrainConfig,
    local: &LocalModel,
    paths: &RunPaths,
    test: &[GlobalSample],
) -> Result<Checkpoint> {
    cfg.validate(Stage::Global)?;
    let net = GlobalNet::new(cfg.global_net(local.net.feature_dim()))?;
    let init = net.init_params::<f32>(cfg.seed);
    let (mut params, mut adam, mut progress) = match &paths.resume {
        Some(path) => restore(&Checkpoint::read(path)?, "global", cfg, &init)?,
        None => {
            let adam = AdamState::new(&init, adam_config(cfg));
            (init, adam, Progress::default())
        }
    };
    let mut log = match &paths.resume {
        Some(_) => MetricLog::resume(&paths.metrics, progress.updates)?,
        None => MetricLog::create(&paths.metrics)?,
    };
    let batches_per_epoch = cfg.items_per_epoch.div_ceil(cfg.batch_size);
    let per_epoch = batches_per_epoch * cfg.batch_size;
    let total = per_epoch * cfg.epochs;
    if paths.resume.is_none() {
        log_eval(&mut log, 0, eval_global(&net, &params, test, cfg.iterations)?)?;
        if cfg.epochs == 0 {
            let ck = build_checkpoint("global", cfg, &params, &adam, progress)?;
            ck.write(&paths.checkpoint)?;
            return Ok(ck);
        }
    }
    if progress.items_done >= total {
        return Err(Error::Checkpoint(format!("nothing to resume: all {total} trajectories already consumed")));
    }

    let steps = cfg.trimmed_len();
    let window = net.window();
    let pc = PipelineConfig {
        workers: cfg.workers,
        capacity: cfg.queue_capacity,
        deterministic: cfg.deterministic,
        base_seed: cfg.seed ^ 0x676c_6f62_616c,
        total,
        skip: progress.items_done,
    };
    let job = cfg.clone();
    let frozen = Arc::new(local.clone());
    let pipeline = Pipeline::spawn(pc, move |seed, _, _| {
        let traj = full_trajectory(&job, Split::Seen, job.traj_len + 1, seed)?;
        GlobalSample::from_trajectory(&frozen, &traj, steps, window)
    })?;

    let in_dim = net.config().in_dim;
    let scale = 1.0 / cfg.batch_size as f32;
    let mut in_batch = 0;
    let mut batch_loss = 0.0;
    let mut last = None;
    params.zero_grad();
    for item in pipeline {
        let s = item?.value;
        let t = s.targets.len() / 3;
        let mut g = Graph::<f32>::new();
        let rows = g.input(Tensor::new(&[steps, in_dim], s.local.features)?);
        let features = g.transpose(rows)?;
        let deltas = g.input(Tensor::new(&[steps, 3], s.local.deltas)?);
        let gt = g.input(Tensor::new(&[t, 3], s.targets)?);
        let out = net.forward(&mut g, &params, features, deltas, cfg.iterations, true)?;
        let loss = global_loss(&mut g, &out.iterate_poses, gt, cfg.lambda_rot, cfg.final_only)?;
        let loss = g.scale(loss, scale);
        let v = g.value(loss)[0] as f64;
        if !v.is_finite() {
            return Err(Error::Pipeline(format!("training loss diverged at update {}", progress.updates + 1)));
        }
        g.backward(loss, &mut params)?;
        batch_loss += v;
        in_batch += 1;
        progress.items_done += 1;
        if in_batch < cfg.batch_size {
            continue;
        }
        if cfg.grad_clip > 0.0 {
            params.clip_grad_norm(cfg.grad_clip);
        }
        adam.config.lr = cfg.lr_at(progress.updates, (batches_per_epoch * cfg.epochs) as u64);
        adam.step(&mut params)?;
        params.zero_grad();
        progress.updates += 1;
        log.log(progress.updates, "train", "loss", batch_loss)?;
        in_batch = 0;
        batch_loss = 0.0;

        let epoch_end = progress.items_done % per_epoch == 0;
        if epoch_end || (cfg.eval_every > 0 && progress.updates % cfg.eval_every as u64 == 0) {
            log_eval(&mut log, progress.updates, eval_global(&net, &params, test, cfg.iterations)?)?;
        }
        if epoch_end {
            progress.epoch = progress.items_done / per_epoch;
            params.clear_grad();
            let ck = build_checkpoint("global", cfg, &params, &adam, progress)?;
            ck.write(&paths.epoch_checkpoint(progress.epoch))?;
            ck.write(&paths.checkpoint)?;
            params.zero_grad();
            last = Some(ck);
        }
    }
    last.ok_or_else(|| Error::Pipeline("no epoch completed".into()))
}

/// Local outputs for a fixed trajectory set, computed once.
pub fn global_samples(local: &LocalModel, trajs: &[Trajectory], window: usize) -> Result<Vec<GlobalSample>> {
    trajs
        .iter()
        .map(|t| {
            let steps = (t.len() - 1) / window * window;
            GlobalSample::from_trajectory(local, t, steps, window)
        })
        .collect()
}
