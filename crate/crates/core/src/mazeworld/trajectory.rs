use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{between, g2r, wrap_angle, Pose2, RelPose2};
use crate::mazeworld::dynamics::{step_dynamics, Action, AgentState, DynamicsConfig};
use crate::mazeworld::maze::{dijkstra_path, gen_maze, Cell, MazeAlgorithm, MazeGrid};
use crate::mazeworld::raycast::{raycast, Observation};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub maze_seed: u64,
    pub observations: Vec<Observation>,
    pub actions: Vec<Action>,
    /// Poses relative to the first frame, so `gt_poses[0]` is the origin.
    pub gt_poses: Vec<Pose2>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.gt_poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gt_poses.is_empty()
    }

    /// Checks the length and origin conventions.
    pub fn validate(&self) -> Result<()> {
        let t = self.gt_poses.len();
        if t == 0 {
            return Err(Error::EmptySequence("trajectory"));
        }
        if self.observations.len() != t {
            return Err(Error::LengthMismatch {
                what: "trajectory observations",
                left: self.observations.len(),
                right: t,
            });
        }
        if self.actions.len() + 1 != t {
            return Err(Error::LengthMismatch { what: "trajectory actions", left: self.actions.len(), right: t - 1 });
        }
        if self.gt_poses[0] != Pose2::ORIGIN {
            return Err(Error::Maze("first ground-truth pose is not the origin".into()));
        }
        Ok(())
    }

    /// Ground-truth relative motion between consecutive frames.
    pub fn gt_deltas(&self) -> Vec<RelPose2> {
        self.gt_poses.windows(2).map(|w| between(&w[0], &w[1])).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryConfig {
    pub max_steps: usize,
    pub dynamics: DynamicsConfig,
    /// Distance (cells) at which a waypoint counts as reached.
    pub waypoint_radius: f64,
    /// Predicted heading error (radians) above which the controller turns.
    pub turn_threshold: f64,
    /// Probability of replacing the controller's action with a random one.
    pub action_noise: f64,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        TrajectoryConfig {
            max_steps: 257,
            dynamics: DynamicsConfig::default(),
            waypoint_radius: 0.3,
            turn_threshold: 0.1,
            action_noise: 0.05,
        }
    }
}

/// Samples a square maze with side in `[min_size, max_size]` from `seed`.
pub fn maze_for_seed(seed: u64, min_size: usize, max_size: usize, algorithm: MazeAlgorithm) -> Result<MazeGrid> {
    if min_size > max_size {
        return Err(Error::config("maze size", format!("min {min_size} > max {max_size}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6d61_7a65_7369_7a65);
    let side = rng.gen_range(min_size..=max_size);
    gen_maze(algorithm, side, side, seed)
}

/// Cells where the path changes direction, plus the goal. Straight runs
/// collapse so the controller only brakes where it has to turn.
fn turning_points(path: &[Cell]) -> Vec<Cell> {
    let mut out = Vec::new();
    for i in 1..path.len() {
        let last = i + 1 == path.len();
        if last {
            out.push(path[i]);
            continue;
        }
        let d0 = (path[i].0 as isize - path[i - 1].0 as isize, path[i].1 as isize - path[i - 1].1 as isize);
        let d1 = (path[i + 1].0 as isize - path[i].0 as isize, path[i + 1].1 as isize - path[i].1 as isize);
        if d0 != d1 {
            out.push(path[i]);
        }
    }
    out
}

fn waypoints(maze: &MazeGrid, start: Cell, rng: &mut ChaCha8Rng) -> Vec<Cell> {
    let (w, h) = (maze.width() - 1, maze.height() - 1);
    let mut corners = [(0, 0), (w, 0), (0, h), (w, h)];
    corners.shuffle(rng);
    let mut out = Vec::new();
    let mut from = start;
    for c in corners {
        let path = dijkstra_path(maze, from, c).expect("perfect maze is connected");
        out.extend(turning_points(&path));
        from = c;
    }
    out
}

fn controller(state: &AgentState, target: (f64, f64), cfg: &TrajectoryConfig, cell_size: f64) -> Action {
    let d = &cfg.dynamics;
    let (ex, ey) = (target.0 - state.pose.x, target.1 - state.pose.y);
    let err = wrap_angle(ey.atan2(ex) - state.pose.theta);
    // rotation still to come from the current angular velocity if no turn is pressed
    let coast_rot = state.ang_vel * d.damping / (1.0 - d.damping);
    let predicted = wrap_angle(err - coast_rot);
    let steer = if predicted >= 0.0 { Action::TurnLeft } else { Action::TurnRight };
    if predicted.abs() > cfg.turn_threshold {
        return steer;
    }
    let dist = ex.hypot(ey) / cell_size;
    let coast_dist = (state.lin_vel + d.a_lin) * d.damping / (1.0 - d.damping);
    if coast_dist > dist + cfg.waypoint_radius {
        steer
    } else {
        Action::Forward
    }
}

/// Runs the controller without rendering: world-frame states (one per
/// frame) and the actions between them.
pub fn simulate(maze: &MazeGrid, seed: u64, cfg: &TrajectoryConfig) -> Result<(Vec<AgentState>, Vec<Action>)> {
    if cfg.max_steps < 2 {
        return Err(Error::config("max_steps", "must be at least 2"));
    }
    cfg.dynamics.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = (rng.gen_range(0..maze.width()), rng.gen_range(0..maze.height()));
    let (sx, sy) = maze.cell_center(start);
    let heading = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
    let mut state = AgentState::at_rest(Pose2::new(sx, sy, heading));
    let route = waypoints(maze, start, &mut rng);
    let mut next = 0;
    let reach = cfg.waypoint_radius * maze.cell_size();

    let mut states = vec![state];
    let mut actions = Vec::new();
    while states.len() < cfg.max_steps {
        while next < route.len() {
            let (wx, wy) = maze.cell_center(route[next]);
            if (wx - state.pose.x).hypot(wy - state.pose.y) < reach {
                next += 1;
            } else {
                break;
            }
        }
        if next == route.len() {
            break;
        }
        let mut action = controller(&state, maze.cell_center(route[next]), cfg, maze.cell_size());
        if rng.gen::<f64>() < cfg.action_noise {
            action = Action::ALL[rng.gen_range(0..3)];
        }
        state = step_dynamics(maze, &cfg.dynamics, &state, action);
        actions.push(action);
        states.push(state);
    }
    Ok((states, actions))
}

/// Poses of `states` relative to the first one.
pub fn canonical_poses(states: &[AgentState]) -> Vec<Pose2> {
    let origin = states[0].pose;
    states
        .iter()
        .map(|s| {
            let r = between(&origin, &s.pose);
            Pose2 { x: r.dx, y: r.dy, theta: r.dtheta }
        })
        .collect()
}

/// Trajectory plus the world-frame agent states it was recorded from.
pub fn gen_trajectory_world(
    maze: &MazeGrid,
    seed: u64,
    cfg: &TrajectoryConfig,
) -> Result<(Trajectory, Vec<AgentState>)> {
    let (states, actions) = simulate(maze, seed, cfg)?;
    let observations = states.iter().map(|s| raycast(maze, &s.pose)).collect::<Result<Vec<_>>>()?;
    let traj = Trajectory { maze_seed: maze.seed(), observations, actions, gt_poses: canonical_poses(&states) };
    Ok((traj, states))
}

/// Corner-visiting trajectory: starts at a random cell center with a random
/// heading and follows shortest paths through the four corners in a random
/// order until `max_steps` frames or the last corner.
pub fn gen_trajectory(maze: &MazeGrid, seed: u64, cfg: &TrajectoryConfig) -> Result<Trajectory> {
    gen_trajectory_world(maze, seed, cfg).map(|(t, _)| t)
}

/// Per-frame relative labels for a trajectory, first entry included so
/// that `r2g` of the result reproduces `gt_poses`.
pub fn relative_labels(traj: &Trajectory) -> Result<Vec<RelPose2>> {
    g2r(&traj.gt_poses)
}
