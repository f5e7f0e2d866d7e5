use std::collections::BTreeMap;
use std::path::Path;

use ngo_tensor::{AdamConfig, AdamState, Graph, ParamSet, Tensor};

use super::config::TrainConfig;
use crate::formats::Checkpoint;
use crate::geometry::{compose_windows, r2g_tensor};
use crate::mazeworld::{Trajectory, N_RAYS};
use crate::nets::{check_shapes, encode_pair, AttentionTrace, GlobalNet, LocalPoseNet, PAIR_CHANNELS};
use crate::{Error, Result};

const ADAM_M: &str = "adam.m.";
const ADAM_V: &str = "adam.v.";

/// Pairs pushed through the local net per inference call.
const INFER_CHUNK: usize = 64;

/// Progress counters stored next to the weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Progress {
    pub epoch: usize,
    /// Pipeline items consumed (batches for the local stage, trajectories
    /// for the global stage).
    pub items_done: usize,
    pub updates: u64,
}

pub(crate) fn adam_config(cfg: &TrainConfig) -> AdamConfig {
    AdamConfig { lr: cfg.lr, beta1: cfg.beta1, beta2: cfg.beta2, eps: cfg.adam_eps }
}

/// Weights, optimizer moments, progress and the resolved config.
pub fn build_checkpoint(
    stage: &str,
    cfg: &TrainConfig,
    params: &ParamSet<f32>,
    adam: &AdamState<f32>,
    progress: Progress,
) -> Result<Checkpoint> {
    let mut ck = Checkpoint::default();
    ck.set_meta("stage", stage);
    for (k, v) in cfg.to_pairs() {
        ck.set_meta(format!("cfg.{k}"), v);
    }
    ck.set_meta("config_hash", cfg.hash());
    ck.set_meta("epoch", progress.epoch.to_string());
    ck.set_meta("items_done", progress.items_done.to_string());
    ck.set_meta("updates", progress.updates.to_string());
    ck.set_meta("adam_t", adam.t.to_string());
    ck.push_params("", params);
    for (prefix, buffers) in [(ADAM_M, &adam.m), (ADAM_V, &adam.v)] {
        for ((name, t), buf) in params.iter().zip(buffers) {
            let moment = Tensor::new(t.shape(), buf.clone())?;
            ck.tensors.push((format!("{prefix}{name}"), moment));
        }
    }
    Ok(ck)
}

pub fn config_from_checkpoint(ck: &Checkpoint) -> Result<TrainConfig> {
    let pairs: BTreeMap<String, String> =
        ck.meta.iter().filter_map(|(k, v)| k.strip_prefix("cfg.").map(|k| (k.to_string(), v.clone()))).collect();
    if pairs.is_empty() {
        return Err(Error::Checkpoint("no configuration in checkpoint metadata".into()));
    }
    TrainConfig::from_pairs(&pairs)
}

/// Model tensors only (optimizer moments excluded).
pub fn model_params(ck: &Checkpoint) -> Result<ParamSet<f32>> {
    let mut p = ParamSet::new();
    for (name, t) in &ck.tensors {
        if !name.starts_with("adam.") {
            p.insert(name.clone(), t.clone())?;
        }
    }
    Ok(p)
}

fn meta_num<T: std::str::FromStr>(ck: &Checkpoint, key: &str) -> Result<T> {
    ck.require_meta(key)?.parse().map_err(|_| Error::Checkpoint(format!("metadata `{key}` is not a number")))
}

pub fn progress_of(ck: &Checkpoint) -> Result<Progress> {
    Ok(Progress {
        epoch: meta_num(ck, "epoch")?,
        items_done: meta_num(ck, "items_done")?,
        updates: meta_num(ck, "updates")?,
    })
}

/// Restores parameters and Adam moments for a resumed run. The stored
/// config must hash identically to `cfg`.
pub fn restore(
    ck: &Checkpoint,
    stage: &str,
    cfg: &TrainConfig,
    expected: &ParamSet<f32>,
) -> Result<(ParamSet<f32>, AdamState<f32>, Progress)> {
    let got_stage = ck.require_meta("stage")?;
    if got_stage != stage {
        return Err(Error::Checkpoint(format!("expected a {stage} checkpoint, found {got_stage}")));
    }
    if ck.require_meta("config_hash")? != cfg.hash() {
        return Err(Error::Checkpoint("config differs from the checkpoint being resumed".into()));
    }
    let params = model_params(ck)?;
    check_shapes(expected, &params)?;
    // keep the expected ordering so Adam buffers line up
    let mut ordered = ParamSet::new();
    for (name, _) in expected.iter() {
        ordered.insert(name.to_string(), params.get(name)?.clone())?;
    }
    let mut adam = AdamState::new(&ordered, adam_config(cfg));
    adam.t = meta_num(ck, "adam_t")?;
    for (prefix, buffers) in [(ADAM_M, &mut adam.m), (ADAM_V, &mut adam.v)] {
        for ((name, t), buf) in ordered.iter().zip(buffers.iter_mut()) {
            let key = format!("{prefix}{name}");
            let m = ck.tensor(&key).ok_or_else(|| Error::Checkpoint(format!("missing tensor `{key}`")))?;
            if m.shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{key}` has shape {:?}, expected {:?}",
                    m.shape(),
                    t.shape()
                )));
            }
            buf.copy_from_slice(m.data());
        }
    }
    Ok((ordered, adam, progress_of(ck)?))
}

/// A trained local net ready for inference.
#[derive(Debug, Clone)]
pub struct LocalModel {
    pub net: LocalPoseNet,
    pub params: ParamSet<f32>,
    pub config: TrainConfig,
}

/// Per-step outputs of the local net over one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalRun {
    /// `[steps, 3]`
    pub deltas: Vec<f32>,
    /// `[steps, D]`
    pub features: Vec<f32>,
}

impl LocalModel {
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.require_meta("stage")? != "local" {
            return Err(Error::Checkpoint("not a local-stage checkpoint".into()));
        }
        let config = config_from_checkpoint(ck)?;
        let net = LocalPoseNet::new(config.local_net())?;
        let params = model_params(ck)?;
        check_shapes(&net.init_params::<f32>(0), &params)?;
        Ok(LocalModel { net, params, config })
    }

    pub fn load(path: &Path) -> Result<Self> {
        LocalModel::from_checkpoint(&Checkpoint::read(path)?)
    }

    /// Runs the net on the first `steps` frame pairs of `traj`.
    pub fn run(&self, traj: &Trajectory, steps: usize) -> Result<LocalRun> {
        if steps + 1 > traj.len() {
            return Err(Error::LengthMismatch {
                what: "local run steps",
                left: steps,
                right: traj.len().saturating_sub(1),
            });
        }
        let max_range = self.config.max_range();
        let mut deltas = Vec::with_capacity(steps * 3);
        let mut features = Vec::with_capacity(steps * self.net.feature_dim());
        let mut input = Vec::with_capacity(INFER_CHUNK * PAIR_CHANNELS * N_RAYS);
        let mut actions = Vec::with_capacity(INFER_CHUNK * 3);
        for start in (0..steps).step_by(INFER_CHUNK) {
            input.clear();
            actions.clear();
            for i in start..(start + INFER_CHUNK).min(steps) {
                encode_pair(&traj.observations[i], &traj.observations[i + 1], max_range, N_RAYS, &mut input)?;
                actions.extend(traj.actions[i].one_hot());
            }
            let (d, f) = self.net.infer(&self.params, &input, &actions)?;
            deltas.extend(d);
            features.extend(f);
        }
        Ok(LocalRun { deltas, features })
    }
}

/// Poses at window ends obtained by composing local deltas only. Uses the
/// same graph ops as the optimizer so an optimizer that changes nothing
/// reproduces these values bit for bit.
pub fn local_meta_poses(deltas: &[f32], window: usize) -> Result<Vec<f32>> {
    let t0 = deltas.len() / 3;
    let mut g = Graph::<f32>::new();
    let d = g.constant(Tensor::new(&[t0, 3], deltas.to_vec())?);
    let md = compose_windows(&mut g, d, window)?;
    let p = r2g_tensor(&mut g, md)?;
    Ok(g.value(p).to_vec())
}

/// A trained aggregator + optimizer.
#[derive(Debug, Clone)]
pub struct GlobalModel {
    pub net: GlobalNet,
    pub params: ParamSet<f32>,
    pub config: TrainConfig,
}

impl GlobalModel {
    pub fn from_checkpoint(ck: &Checkpoint, in_dim: usize) -> Result<Self> {
        if ck.require_meta("stage")? != "global" {
            return Err(Error::Checkpoint("not a global-stage checkpoint".into()));
        }
        let config = config_from_checkpoint(ck)?;
        let net = GlobalNet::new(config.global_net(in_dim))?;
        let params = model_params(ck)?;
        check_shapes(&net.init_params::<f32>(0), &params)?;
        Ok(GlobalModel { net, params, config })
    }

    pub fn load(path: &Path, in_dim: usize) -> Result<Self> {
        GlobalModel::from_checkpoint(&Checkpoint::read(path)?, in_dim)
    }

    /// Global poses `[T, 3]` at window ends plus the attention matrices.
    pub fn run(&self, local: &LocalRun, iterations: usize) -> Result<(Vec<f32>, AttentionTrace)> {
        let (poses, trace, _) = self.net.infer(&self.params, &local.features, &local.deltas, iterations)?;
        Ok((poses, trace))
    }
}
