//! 2D maze simulator: perfect-maze generation, ray scans, agent dynamics
//! and corner-visiting trajectories.

mod dynamics;
mod maze;
mod raycast;
mod trajectory;

pub use dynamics::{step_dynamics, Action, AgentState, DynamicsConfig};
pub use maze::{
    dijkstra_path, gen_maze, gen_maze_kruskal, gen_maze_prim, point_segment_distance, Cell, Dir, MazeAlgorithm,
    MazeGrid,
};
pub use raycast::{cast_ray, ray_offset, raycast, Observation, FOV_DEG, N_RAYS, RAY_CHANNELS};
pub use trajectory::{
    canonical_poses, gen_trajectory, gen_trajectory_world, maze_for_seed, relative_labels, simulate, Trajectory,
    TrajectoryConfig,
};
