use crate::geometry::Pose2;
use crate::mazeworld::maze::{Cell, Dir, MazeGrid};
use crate::{Error, Result};

pub const N_RAYS: usize = 241;
pub const FOV_DEG: f64 = 300.0;
/// Channels per ray: red, green, blue, depth.
pub const RAY_CHANNELS: usize = 4;

/// One ray scan. Depth is in world units.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub rays: Vec<[f32; RAY_CHANNELS]>,
}

impl Observation {
    pub fn depth(&self, i: usize) -> f32 {
        self.rays[i][3]
    }

    /// Flat `[N_RAYS * 4]` ray-major copy, as stored on disk.
    pub fn to_flat(&self) -> Vec<f32> {
        self.rays.iter().flatten().copied().collect()
    }

    pub fn from_flat(values: &[f32]) -> Option<Self> {
        (values.len() == N_RAYS * RAY_CHANNELS).then(|| Observation {
            rays: values.chunks_exact(RAY_CHANNELS).map(|c| [c[0], c[1], c[2], c[3]]).collect(),
        })
    }
}

/// Ray `i` angle relative to the heading: −150° + 300°·i/240.
pub fn ray_offset(i: usize) -> f64 {
    let half = FOV_DEG.to_radians() / 2.0;
    -half + FOV_DEG.to_radians() * i as f64 / (N_RAYS - 1) as f64
}

/// Distance to the first closed wall along a ray and the cell on the
/// near side of that wall.
pub fn cast_ray(maze: &MazeGrid, x: f64, y: f64, angle: f64) -> Option<(f64, Cell)> {
    let s = maze.cell_size();
    let (dx, dy) = (angle.cos(), angle.sin());
    let mut cell = maze.cell_at(x, y)?;
    let step_x: isize = if dx > 0.0 { 1 } else { -1 };
    let step_y: isize = if dy > 0.0 { 1 } else { -1 };
    let next_line = |c: usize, step: isize| if step > 0 { (c + 1) as f64 * s } else { c as f64 * s };
    let mut t_max_x = if dx.abs() < 1e-12 { f64::INFINITY } else { (next_line(cell.0, step_x) - x) / dx };
    let mut t_max_y = if dy.abs() < 1e-12 { f64::INFINITY } else { (next_line(cell.1, step_y) - y) / dy };
    let t_delta_x = if dx.abs() < 1e-12 { f64::INFINITY } else { s / dx.abs() };
    let t_delta_y = if dy.abs() < 1e-12 { f64::INFINITY } else { s / dy.abs() };
    let x_dir = if step_x > 0 { Dir::East } else { Dir::West };
    let y_dir = if step_y > 0 { Dir::North } else { Dir::South };
    // every walk ends on the closed boundary; the bound only guards malformed grids
    for _ in 0..2 * (maze.width() + maze.height()) + 4 {
        if t_max_x <= t_max_y {
            if maze.has_wall(cell, x_dir) {
                return Some((t_max_x, cell));
            }
            cell = maze.neighbor(cell, x_dir)?;
            t_max_x += t_delta_x;
        } else {
            if maze.has_wall(cell, y_dir) {
                return Some((t_max_y, cell));
            }
            cell = maze.neighbor(cell, y_dir)?;
            t_max_y += t_delta_y;
        }
    }
    None
}

/// Renders the 241-ray, 300° scan seen from `pose`. Each ray reports the
/// color of the cell on the agent's side of the wall face it hits.
pub fn raycast(maze: &MazeGrid, pose: &Pose2) -> Result<Observation> {
    let inside = maze.cell_at(pose.x, pose.y).is_some();
    if !inside || maze.wall_clearance(pose.x, pose.y) <= 1e-9 {
        return Err(Error::InsideWall { x: pose.x, y: pose.y });
    }
    let mut rays = Vec::with_capacity(N_RAYS);
    for i in 0..N_RAYS {
        let (depth, cell) = cast_ray(maze, pose.x, pose.y, pose.theta + ray_offset(i))
            .ok_or(Error::InsideWall { x: pose.x, y: pose.y })?;
        let [r, g, b] = maze.color(cell);
        rays.push([r, g, b, depth as f32]);
    }
    Ok(Observation { rays })
}
