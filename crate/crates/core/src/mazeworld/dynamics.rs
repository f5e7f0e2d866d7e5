use crate::geometry::{wrap_angle, Pose2};
use crate::mazeworld::maze::MazeGrid;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Action {
    Forward = 0,
    TurnLeft = 1,
    TurnRight = 2,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::Forward, Action::TurnLeft, Action::TurnRight];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Action> {
        Action::ALL.get(code as usize).copied()
    }

    pub fn one_hot(self) -> [f32; 3] {
        let mut v = [0.0; 3];
        v[self as usize] = 1.0;
        v
    }
}

/// Damped accelerative kinematics. Units are cells and radians per step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DynamicsConfig {
    pub a_lin: f64,
    pub a_ang: f64,
    pub damping: f64,
    pub max_lin_vel: f64,
    pub max_ang_vel: f64,
    pub radius: f64,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        DynamicsConfig { a_lin: 0.02, a_ang: 0.02, damping: 0.9, max_lin_vel: 0.2, max_ang_vel: 0.1, radius: 0.15 }
    }
}

impl DynamicsConfig {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("a_lin", self.a_lin > 0.0),
            ("a_ang", self.a_ang > 0.0),
            ("damping", self.damping > 0.0 && self.damping < 1.0),
            ("max_lin_vel", self.max_lin_vel > 0.0),
            ("max_ang_vel", self.max_ang_vel > 0.0),
            ("radius", self.radius > 0.0 && self.radius < 0.5),
        ];
        for (key, ok) in checks {
            if !ok {
                return Err(Error::config(key, "out of range"));
            }
        }
        Ok(())
    }

    /// Steady-state linear speed under repeated forward actions.
    pub fn terminal_lin_vel(&self) -> f64 {
        (self.a_lin * self.damping / (1.0 - self.damping)).min(self.max_lin_vel)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentState {
    pub pose: Pose2,
    pub lin_vel: f64,
    pub ang_vel: f64,
}

impl AgentState {
    pub fn at_rest(pose: Pose2) -> Self {
        AgentState { pose, lin_vel: 0.0, ang_vel: 0.0 }
    }
}

/// One simulation step: accelerate, damp, clamp, rotate, then translate
/// along the new heading. Each axis of the translation is applied only if
/// the agent disc stays at least `radius` from every wall, so the agent
/// slides along walls instead of entering them.
pub fn step_dynamics(maze: &MazeGrid, cfg: &DynamicsConfig, state: &AgentState, action: Action) -> AgentState {
    let (a_lin, a_ang) = match action {
        Action::Forward => (cfg.a_lin, 0.0),
        Action::TurnLeft => (0.0, cfg.a_ang),
        Action::TurnRight => (0.0, -cfg.a_ang),
    };
    let lin_vel = (cfg.damping * (state.lin_vel + a_lin)).clamp(-cfg.max_lin_vel, cfg.max_lin_vel);
    let ang_vel = (cfg.damping * (state.ang_vel + a_ang)).clamp(-cfg.max_ang_vel, cfg.max_ang_vel);
    let theta = wrap_angle(state.pose.theta + ang_vel);
    let s = maze.cell_size();
    let rho = cfg.radius * s;
    let (mut x, mut y) = (state.pose.x, state.pose.y);
    let (dx, dy) = (lin_vel * s * theta.cos(), lin_vel * s * theta.sin());
    if dx != 0.0 && maze.cell_at(x + dx, y).is_some() && maze.wall_clearance(x + dx, y) >= rho {
        x += dx;
    }
    if dy != 0.0 && maze.cell_at(x, y + dy).is_some() && maze.wall_clearance(x, y + dy) >= rho {
        y += dy;
    }
    AgentState { pose: Pose2 { x, y, theta }, lin_vel, ang_vel }
}
