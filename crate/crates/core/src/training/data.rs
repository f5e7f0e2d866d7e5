use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use super::pipeline::{Pipeline, PipelineConfig};
use crate::geometry::between;
use crate::mazeworld::N_RAYS;
use crate::mazeworld::{gen_trajectory, maze_for_seed, raycast, simulate, Trajectory};
use crate::nets::encode_pair;
use crate::{Error, Result};

/// Maze seeds of the unseen split start here; seen mazes use `0..maze_pool`.
pub const UNSEEN_MAZE_BASE: u64 = 1 << 40;

/// Seed of the frozen test sets shared by every experiment.
pub const TEST_SEED: u64 = 0x7e57;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Seen,
    Unseen,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Seen => "seen",
            Split::Unseen => "unseen",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "seen" => Some(Split::Seen),
            "unseen" => Some(Split::Unseen),
            _ => None,
        }
    }

    pub fn maze_seed(self, rng: &mut ChaCha8Rng, pool: u64) -> u64 {
        match self {
            Split::Seen => rng.gen_range(0..pool),
            Split::Unseen => UNSEEN_MAZE_BASE + rng.gen::<u32>() as u64,
        }
    }
}

/// Encoded frame pairs ready for the local net.
#[derive(Debug, Clone, PartialEq)]
pub struct PairBatch {
    /// `[B, 8, rays]`
    pub input: Vec<f32>,
    /// `[B, 3]` one-hot actions.
    pub actions: Vec<f32>,
    /// `[B, 3]` ground-truth relative poses.
    pub targets: Vec<f32>,
}

impl PairBatch {
    pub fn len(&self) -> usize {
        self.targets.len() / 3
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    fn with_capacity(n: usize) -> Self {
        PairBatch {
            input: Vec::with_capacity(n * 8 * N_RAYS),
            actions: Vec::with_capacity(n * 3),
            targets: Vec::with_capacity(n * 3),
        }
    }
}

/// One local-stage batch: frame pairs sampled without repetition from fresh
/// simulated trajectories in seen mazes. Only the sampled frames are rendered.
pub fn local_batch(cfg: &TrainConfig, seed: u64) -> Result<PairBatch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let traj_cfg = cfg.trajectory_config(cfg.traj_len + 1);
    let mut batch = PairBatch::with_capacity(cfg.batch_size);
    let max_range = cfg.max_range();
    while batch.len() < cfg.batch_size {
        let maze_seed = Split::Seen.maze_seed(&mut rng, cfg.maze_pool);
        let maze = maze_for_seed(maze_seed, cfg.maze_min, cfg.maze_max, cfg.maze_algorithm)?;
        let (states, actions) = simulate(&maze, rng.gen(), &traj_cfg)?;
        if actions.is_empty() {
            continue;
        }
        let want = cfg.pairs_per_trajectory.min(cfg.batch_size - batch.len()).min(actions.len());
        let mut picks = sample(&mut rng, actions.len(), want).into_vec();
        picks.sort_unstable();
        for t in picks {
            let a = raycast(&maze, &states[t].pose)?;
            let b = raycast(&maze, &states[t + 1].pose)?;
            encode_pair(&a, &b, max_range, N_RAYS, &mut batch.input)?;
            batch.actions.extend(actions[t].one_hot());
            let d = between(&states[t].pose, &states[t + 1].pose);
            batch.targets.extend([d.dx as f32, d.dy as f32, d.dtheta as f32]);
        }
    }
    Ok(batch)
}

/// Every consecutive pair of each trajectory, in order.
pub fn pairs_of(trajs: &[Trajectory], max_range: f32) -> Result<PairBatch> {
    let n: usize = trajs.iter().map(|t| t.len().saturating_sub(1)).sum();
    let mut batch = PairBatch::with_capacity(n);
    for t in trajs {
        for (i, d) in t.gt_deltas().into_iter().enumerate() {
            encode_pair(&t.observations[i], &t.observations[i + 1], max_range, N_RAYS, &mut batch.input)?;
            batch.actions.extend(t.actions[i].one_hot());
            batch.targets.extend([d.dx as f32, d.dy as f32, d.dtheta as f32]);
        }
    }
    Ok(batch)
}

/// A rendered trajectory with exactly `frames` frames. Runs that finish the
/// corner tour early are redrawn with the next trajectory seed.
pub fn full_trajectory(cfg: &TrainConfig, split: Split, frames: usize, seed: u64) -> Result<Trajectory> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let traj_cfg = cfg.trajectory_config(frames);
    for _ in 0..1000 {
        let maze_seed = split.maze_seed(&mut rng, cfg.maze_pool);
        let maze = maze_for_seed(maze_seed, cfg.maze_min, cfg.maze_max, cfg.maze_algorithm)?;
        let t = gen_trajectory(&maze, rng.gen(), &traj_cfg)?;
        if t.len() == frames {
            return Ok(t);
        }
    }
    Err(Error::Maze(format!("no trajectory of {frames} frames after 1000 attempts")))
}

/// Generates `n` trajectories through the worker pipeline and returns them
/// ordered by (worker, sequence index), which makes the result independent
/// of thread scheduling.
pub fn gen_dataset(cfg: &TrainConfig, split: Split, n: usize, frames: usize, seed: u64) -> Result<Vec<Trajectory>> {
    if frames < 2 {
        return Err(Error::config("traj_len", "must be at least 2 frames"));
    }
    let pc = PipelineConfig {
        workers: cfg.workers,
        capacity: cfg.queue_capacity,
        deterministic: cfg.deterministic,
        base_seed: seed,
        total: n,
        skip: 0,
    };
    let job = cfg.clone();
    let mut items =
        Pipeline::spawn(pc, move |s, _, _| full_trajectory(&job, split, frames, s))?.collect::<Result<Vec<_>>>()?;
    items.sort_by_key(|it| (it.worker, it.seq));
    Ok(items.into_iter().map(|it| it.value).collect())
}

/// The frozen evaluation set for a split (39 trajectories by default).
pub fn default_test_set(cfg: &TrainConfig, split: Split, n: usize) -> Result<Vec<Trajectory>> {
    let fixed = TrainConfig { workers: 1, deterministic: true, ..cfg.clone() };
    let seed = TEST_SEED ^ (split as u64 + 1);
    gen_dataset(&fixed, split, n, cfg.traj_len + 1, seed)
}
