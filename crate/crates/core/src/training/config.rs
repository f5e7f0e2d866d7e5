use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::mazeworld::{DynamicsConfig, MazeAlgorithm, TrajectoryConfig};
use crate::nets::{AttentionMode, GlobalNetConfig, LocalNetConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Local,
    Global,
}

/// Learning rate over the course of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LrSchedule {
    Constant,
    /// Half-cosine from `lr` down to zero at the last update.
    Cosine,
}

impl LrSchedule {
    pub fn name(self) -> &'static str {
        match self {
            LrSchedule::Constant => "constant",
            LrSchedule::Cosine => "cosine",
        }
    }
}

/// Every knob of both training stages. Resolved from defaults, then a
/// `key=value` file, then command-line overrides.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    /// Local stage: frame pairs per epoch. Global stage: trajectories per epoch.
    pub items_per_epoch: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_schedule: LrSchedule,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub lambda_rot: f64,
    /// Global-norm gradient clipping; 0 disables it.
    pub grad_clip: f64,
    pub workers: usize,
    pub queue_capacity: usize,
    pub deterministic: bool,
    /// Evaluate on the test set every this many updates (0: only at epoch ends).
    pub eval_every: usize,

    pub maze_min: usize,
    pub maze_max: usize,
    pub maze_algorithm: MazeAlgorithm,
    /// Number of distinct training mazes ("seen" pool).
    pub maze_pool: u64,
    pub dynamics: DynamicsConfig,
    pub waypoint_radius: f64,
    pub turn_threshold: f64,
    pub action_noise: f64,

    pub use_action: bool,
    /// Local stage: pairs drawn from each simulated trajectory.
    pub pairs_per_trajectory: usize,

    /// Steps per global-stage trajectory (frames are `traj_len + 1`).
    pub traj_len: usize,
    pub n_halvings: usize,
    pub iterations: usize,
    pub attention: AttentionMode,
    pub d_f: usize,
    pub hidden: usize,
    pub n_layers: usize,
    pub final_only: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let g = GlobalNetConfig::default();
        TrainConfig {
            seed: 0,
            epochs: 3,
            items_per_epoch: 50_000,
            batch_size: 64,
            lr: 1e-4,
            lr_schedule: LrSchedule::Constant,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            lambda_rot: 1.0,
            grad_clip: 0.0,
            workers: 1,
            queue_capacity: 64,
            deterministic: false,
            eval_every: 0,
            maze_min: 9,
            maze_max: 13,
            maze_algorithm: MazeAlgorithm::Prim,
            maze_pool: 500,
            dynamics: DynamicsConfig::default(),
            waypoint_radius: 0.3,
            turn_threshold: 0.1,
            action_noise: 0.05,
            use_action: true,
            pairs_per_trajectory: 16,
            traj_len: 256,
            n_halvings: g.n_halvings,
            iterations: 5,
            attention: g.attention,
            d_f: g.d_f,
            hidden: g.hidden,
            n_layers: g.n_layers,
            final_only: false,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim().parse().map_err(|_| Error::config(key, format!("cannot parse `{v}`")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::config(key, format!("expected true/false, got `{v}`"))),
    }
}

impl TrainConfig {
    /// Stage defaults: the global stage counts trajectories, not pairs.
    pub fn for_stage(stage: Stage) -> Self {
        match stage {
            // tuned on held-out seen data; 1e-4 leaves the local net underfit in 3 epochs
            Stage::Local => TrainConfig { lr: 1e-3, ..TrainConfig::default() },
            Stage::Global => TrainConfig {
                epochs: 1,
                items_per_epoch: 2000,
                batch_size: 1,
                grad_clip: 0.5,
                ..TrainConfig::default()
            },
        }
    }

    /// Sets one field from its textual key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "seed" => self.seed = parse_num(key, v)?,
            "epochs" => self.epochs = parse_num(key, v)?,
            "items_per_epoch" => self.items_per_epoch = parse_num(key, v)?,
            "batch_size" => self.batch_size = parse_num(key, v)?,
            "lr" => self.lr = parse_num(key, v)?,
            "lr_schedule" => {
                self.lr_schedule = match v {
                    "constant" => LrSchedule::Constant,
                    "cosine" => LrSchedule::Cosine,
                    _ => return Err(Error::config(key, format!("expected constant or cosine, got `{v}`"))),
                }
            }
            "beta1" => self.beta1 = parse_num(key, v)?,
            "beta2" => self.beta2 = parse_num(key, v)?,
            "adam_eps" => self.adam_eps = parse_num(key, v)?,
            "lambda_rot" => self.lambda_rot = parse_num(key, v)?,
            "grad_clip" => self.grad_clip = parse_num(key, v)?,
            "workers" => self.workers = parse_num(key, v)?,
            "queue_capacity" => self.queue_capacity = parse_num(key, v)?,
            "deterministic" => self.deterministic = parse_bool(key, v)?,
            "eval_every" => self.eval_every = parse_num(key, v)?,
            "maze_min" => self.maze_min = parse_num(key, v)?,
            "maze_max" => self.maze_max = parse_num(key, v)?,
            "maze_algorithm" => {
                self.maze_algorithm = match v {
                    "prim" => MazeAlgorithm::Prim,
                    "kruskal" => MazeAlgorithm::Kruskal,
                    _ => return Err(Error::config(key, format!("expected prim or kruskal, got `{v}`"))),
                }
            }
            "maze_pool" => self.maze_pool = parse_num(key, v)?,
            "a_lin" => self.dynamics.a_lin = parse_num(key, v)?,
            "a_ang" => self.dynamics.a_ang = parse_num(key, v)?,
            "damping" => self.dynamics.damping = parse_num(key, v)?,
            "max_lin_vel" => self.dynamics.max_lin_vel = parse_num(key, v)?,
            "max_ang_vel" => self.dynamics.max_ang_vel = parse_num(key, v)?,
            "radius" => self.dynamics.radius = parse_num(key, v)?,
            "waypoint_radius" => self.waypoint_radius = parse_num(key, v)?,
            "turn_threshold" => self.turn_threshold = parse_num(key, v)?,
            "action_noise" => self.action_noise = parse_num(key, v)?,
            "use_action" => self.use_action = parse_bool(key, v)?,
            "pairs_per_trajectory" => self.pairs_per_trajectory = parse_num(key, v)?,
            "traj_len" => self.traj_len = parse_num(key, v)?,
            "n_halvings" => self.n_halvings = parse_num(key, v)?,
            "iterations" => self.iterations = parse_num(key, v)?,
            "attention" => {
                self.attention = AttentionMode::parse(v)
                    .ok_or_else(|| Error::config(key, format!("expected softmax or linear, got `{v}`")))?
            }
            "d_f" => self.d_f = parse_num(key, v)?,
            "hidden" => self.hidden = parse_num(key, v)?,
            "n_layers" => self.n_layers = parse_num(key, v)?,
            "final_only" => self.final_only = parse_bool(key, v)?,
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    /// Applies a `key = value` file; `#` starts a comment.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Format {
                path: path.to_path_buf(),
                reason: format!("line {}: expected key=value", n + 1),
            })?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    /// Canonical `key=value` listing of every field, in a fixed order.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let d = &self.dynamics;
        vec![
            ("seed", self.seed.to_string()),
            ("epochs", self.epochs.to_string()),
            ("items_per_epoch", self.items_per_epoch.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("lr", self.lr.to_string()),
            ("lr_schedule", self.lr_schedule.name().into()),
            ("beta1", self.beta1.to_string()),
            ("beta2", self.beta2.to_string()),
            ("adam_eps", self.adam_eps.to_string()),
            ("lambda_rot", self.lambda_rot.to_string()),
            ("grad_clip", self.grad_clip.to_string()),
            ("workers", self.workers.to_string()),
            ("queue_capacity", self.queue_capacity.to_string()),
            ("deterministic", self.deterministic.to_string()),
            ("eval_every", self.eval_every.to_string()),
            ("maze_min", self.maze_min.to_string()),
            ("maze_max", self.maze_max.to_string()),
            (
                "maze_algorithm",
                match self.maze_algorithm {
                    MazeAlgorithm::Prim => "prim".into(),
                    MazeAlgorithm::Kruskal => "kruskal".into(),
                },
            ),
            ("maze_pool", self.maze_pool.to_string()),
            ("a_lin", d.a_lin.to_string()),
            ("a_ang", d.a_ang.to_string()),
            ("damping", d.damping.to_string()),
            ("max_lin_vel", d.max_lin_vel.to_string()),
            ("max_ang_vel", d.max_ang_vel.to_string()),
            ("radius", d.radius.to_string()),
            ("waypoint_radius", self.waypoint_radius.to_string()),
            ("turn_threshold", self.turn_threshold.to_string()),
            ("action_noise", self.action_noise.to_string()),
            ("use_action", self.use_action.to_string()),
            ("pairs_per_trajectory", self.pairs_per_trajectory.to_string()),
            ("traj_len", self.traj_len.to_string()),
            ("n_halvings", self.n_halvings.to_string()),
            ("iterations", self.iterations.to_string()),
            ("attention", self.attention.name().into()),
            ("d_f", self.d_f.to_string()),
            ("hidden", self.hidden.to_string()),
            ("n_layers", self.n_layers.to_string()),
            ("final_only", self.final_only.to_string()),
        ]
    }

    /// Rebuilds a config from a listing produced by [`TrainConfig::to_pairs`].
    pub fn from_pairs(pairs: &BTreeMap<String, String>) -> Result<Self> {
        let mut c = TrainConfig::default();
        for (k, v) in pairs {
            c.set(k, v)?;
        }
        Ok(c)
    }

    /// SHA-256 over the canonical listing, hex encoded.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.to_pairs() {
            h.update(k.as_bytes());
            h.update(b"=");
            h.update(v.as_bytes());
            h.update(b"\n");
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self, stage: Stage) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size),
            ("workers", self.workers),
            ("queue_capacity", self.queue_capacity),
            ("items_per_epoch", self.items_per_epoch),
            ("maze_min", self.maze_min),
            ("pairs_per_trajectory", self.pairs_per_trajectory),
            ("traj_len", self.traj_len),
            ("iterations", self.iterations),
            ("d_f", self.d_f),
            ("hidden", self.hidden),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(Error::config(k, "must be positive"));
            }
        }
        if self.maze_min < 2 || self.maze_max < self.maze_min {
            return Err(Error::config("maze_max", "need 2 <= maze_min <= maze_max"));
        }
        if self.maze_pool == 0 {
            return Err(Error::config("maze_pool", "must be positive"));
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("lr", "need lr > 0 and betas in [0, 1)"));
        }
        if !(self.adam_eps > 0.0) || !(self.lambda_rot >= 0.0) || !(self.grad_clip >= 0.0) {
            return Err(Error::config("adam_eps", "adam_eps > 0, lambda_rot >= 0, grad_clip >= 0"));
        }
        if !(0.0..=1.0).contains(&self.action_noise) {
            return Err(Error::config("action_noise", "must be a probability"));
        }
        self.dynamics.validate()?;
        if stage == Stage::Global {
            let w = 1usize << self.n_halvings.min(16);
            if self.n_halvings > 16 || self.traj_len < w {
                return Err(Error::config("traj_len", format!("must be at least one window of {w} steps")));
            }
            if self.n_layers < 2 {
                return Err(Error::config("n_layers", "need at least 2 conv layers"));
            }
        }
        Ok(())
    }

    pub fn trajectory_config(&self, max_steps: usize) -> TrajectoryConfig {
        TrajectoryConfig {
            max_steps,
            dynamics: self.dynamics,
            waypoint_radius: self.waypoint_radius,
            turn_threshold: self.turn_threshold,
            action_noise: self.action_noise,
        }
    }

    /// Depth normalizer: the diagonal of the largest maze this config can
    /// produce, so every depth maps into [0, 1] on one common scale.
    pub fn max_range(&self) -> f32 {
        ((self.maze_max as f64) * std::f64::consts::SQRT_2) as f32
    }

    pub fn local_net(&self) -> LocalNetConfig {
        LocalNetConfig { use_action: self.use_action, ..LocalNetConfig::default() }
    }

    pub fn global_net(&self, in_dim: usize) -> GlobalNetConfig {
        GlobalNetConfig {
            in_dim,
            d_f: self.d_f,
            n_halvings: self.n_halvings,
            hidden: self.hidden,
            n_layers: self.n_layers,
            attention: self.attention,
        }
    }

    /// Global-stage steps actually fed to the aggregator: `traj_len` trimmed
    /// down to a multiple of the window.
    pub fn trimmed_len(&self) -> usize {
        let w = 1usize << self.n_halvings;
        self.traj_len / w * w
    }

    /// Step size of update `k` (0-based) out of `total`.
    pub fn lr_at(&self, k: u64, total: u64) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.lr,
            LrSchedule::Cosine => {
                let f = k as f64 / total.max(1) as f64;
                0.5 * self.lr * (1.0 + (std::f64::consts::PI * f).cos())
            }
        }
    }

    pub fn total_items(&self) -> usize {
        self.epochs * self.items_per_epoch
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairs_round_trip() {
        let mut c = TrainConfig::for_stage(Stage::Global);
        c.set("attention", "linear").unwrap();
        c.set("maze_algorithm", "kruskal").unwrap();
        c.set("lr", "0.00025").unwrap();
        let map: BTreeMap<String, String> = c.to_pairs().into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        let back = TrainConfig::from_pairs(&map).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn bad_values_name_the_key() {
        let mut c = TrainConfig::default();
        let err = c.set("batch_size", "abc").unwrap_err().to_string();
        assert!(err.contains("batch_size"), "{err}");
        assert!(c.set("nope", "1").is_err());
        c.batch_size = 0;
        assert!(c.validate(Stage::Local).unwrap_err().to_string().contains("batch_size"));
    }
}
