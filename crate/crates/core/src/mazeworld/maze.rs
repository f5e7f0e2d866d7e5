use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// Grid coordinates of a cell: `(column, row)`, row 0 at the bottom.
pub type Cell = (usize, usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dir {
    North,
    East,
    South,
    West,
}

impl Dir {
    pub const ALL: [Dir; 4] = [Dir::North, Dir::East, Dir::South, Dir::West];

    fn bit(self) -> u8 {
        match self {
            Dir::North => 1,
            Dir::East => 2,
            Dir::South => 4,
            Dir::West => 8,
        }
    }

    pub fn opposite(self) -> Dir {
        match self {
            Dir::North => Dir::South,
            Dir::East => Dir::West,
            Dir::South => Dir::North,
            Dir::West => Dir::East,
        }
    }
}

/// Which spanning-tree generator to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MazeAlgorithm {
    #[default]
    Prim,
    Kruskal,
}

/// Rectangular cell maze. Walls sit on cell edges and are stored on both
/// sides of the edge; the outer boundary is always closed.
#[derive(Debug, Clone, PartialEq)]
pub struct MazeGrid {
    width: usize,
    height: usize,
    walls: Vec<u8>,
    cell_colors: Vec<[f32; 3]>,
    cell_size: f64,
    seed: u64,
}

impl MazeGrid {
    /// A maze with every wall closed and the given per-cell colors.
    pub fn closed(width: usize, height: usize, cell_colors: Vec<[f32; 3]>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Maze(format!("degenerate size {width}x{height}")));
        }
        if cell_colors.len() != width * height {
            return Err(Error::Maze(format!("{} colors for {} cells", cell_colors.len(), width * height)));
        }
        Ok(MazeGrid { width, height, walls: vec![0b1111; width * height], cell_colors, cell_size: 1.0, seed: 0 })
    }

    pub fn with_cell_size(mut self, cell_size: f64) -> Self {
        self.cell_size = cell_size;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Seed the maze was generated from (0 for hand-built grids).
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn n_cells(&self) -> usize {
        self.width * self.height
    }

    pub fn index(&self, (cx, cy): Cell) -> usize {
        cy * self.width + cx
    }

    pub fn cell_of(&self, idx: usize) -> Cell {
        (idx % self.width, idx / self.width)
    }

    pub fn color(&self, cell: Cell) -> [f32; 3] {
        self.cell_colors[self.index(cell)]
    }

    /// World-space diagonal of the whole maze.
    pub fn diagonal(&self) -> f64 {
        (self.width as f64).hypot(self.height as f64) * self.cell_size
    }

    pub fn in_bounds(&self, (cx, cy): (isize, isize)) -> bool {
        cx >= 0 && cy >= 0 && (cx as usize) < self.width && (cy as usize) < self.height
    }

    pub fn neighbor(&self, (cx, cy): Cell, dir: Dir) -> Option<Cell> {
        let (nx, ny) = match dir {
            Dir::North => (cx as isize, cy as isize + 1),
            Dir::East => (cx as isize + 1, cy as isize),
            Dir::South => (cx as isize, cy as isize - 1),
            Dir::West => (cx as isize - 1, cy as isize),
        };
        self.in_bounds((nx, ny)).then_some((nx as usize, ny as usize))
    }

    pub fn has_wall(&self, cell: Cell, dir: Dir) -> bool {
        self.walls[self.index(cell)] & dir.bit() != 0
    }

    /// Removes the wall between `cell` and its neighbor in `dir` on both sides.
    pub fn open(&mut self, cell: Cell, dir: Dir) -> Result<()> {
        let other = self
            .neighbor(cell, dir)
            .ok_or_else(|| Error::Maze(format!("cannot open boundary wall {cell:?} {dir:?}")))?;
        let (a, b) = (self.index(cell), self.index(other));
        self.walls[a] &= !dir.bit();
        self.walls[b] &= !dir.opposite().bit();
        Ok(())
    }

    /// Cells reachable through an open edge.
    pub fn passages(&self, cell: Cell) -> impl Iterator<Item = Cell> + '_ {
        Dir::ALL.into_iter().filter(move |&d| !self.has_wall(cell, d)).filter_map(move |d| self.neighbor(cell, d))
    }

    /// Number of open interior edges.
    pub fn passage_count(&self) -> usize {
        let mut n = 0;
        for cy in 0..self.height {
            for cx in 0..self.width {
                for d in [Dir::North, Dir::East] {
                    if self.neighbor((cx, cy), d).is_some() && !self.has_wall((cx, cy), d) {
                        n += 1;
                    }
                }
            }
        }
        n
    }

    /// Every closed edge is recorded on both sides and the boundary is closed.
    pub fn walls_consistent(&self) -> bool {
        (0..self.n_cells()).all(|i| {
            let c = self.cell_of(i);
            Dir::ALL.into_iter().all(|d| match self.neighbor(c, d) {
                Some(n) => self.has_wall(c, d) == self.has_wall(n, d.opposite()),
                None => self.has_wall(c, d),
            })
        })
    }

    /// Closed wall segments around `cell` in world coordinates.
    pub fn wall_segments(&self, cell: Cell) -> impl Iterator<Item = [(f64, f64); 2]> + '_ {
        let s = self.cell_size;
        let (x0, y0) = (cell.0 as f64 * s, cell.1 as f64 * s);
        let (x1, y1) = (x0 + s, y0 + s);
        Dir::ALL.into_iter().filter(move |&d| self.has_wall(cell, d)).map(move |d| match d {
            Dir::North => [(x0, y1), (x1, y1)],
            Dir::East => [(x1, y0), (x1, y1)],
            Dir::South => [(x0, y0), (x1, y0)],
            Dir::West => [(x0, y0), (x0, y1)],
        })
    }

    pub fn cell_center(&self, (cx, cy): Cell) -> (f64, f64) {
        ((cx as f64 + 0.5) * self.cell_size, (cy as f64 + 0.5) * self.cell_size)
    }

    /// Cell containing a world point, if inside the maze.
    pub fn cell_at(&self, x: f64, y: f64) -> Option<Cell> {
        let (cx, cy) = ((x / self.cell_size).floor(), (y / self.cell_size).floor());
        self.in_bounds((cx as isize, cy as isize)).then_some((cx as usize, cy as usize))
    }

    /// Smallest distance from a world point to any closed wall segment in the
    /// 3x3 block of cells around it.
    pub fn wall_clearance(&self, x: f64, y: f64) -> f64 {
        let (cx, cy) = ((x / self.cell_size).floor() as isize, (y / self.cell_size).floor() as isize);
        let mut best = f64::INFINITY;
        for ny in cy - 1..=cy + 1 {
            for nx in cx - 1..=cx + 1 {
                if !self.in_bounds((nx, ny)) {
                    continue;
                }
                for [a, b] in self.wall_segments((nx as usize, ny as usize)) {
                    best = best.min(point_segment_distance((x, y), a, b));
                }
            }
        }
        best
    }
}

pub fn point_segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let (wx, wy) = (p.0 - a.0, p.1 - a.1);
    let len2 = vx * vx + vy * vy;
    let t = if len2 > 0.0 { ((wx * vx + wy * vy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    (p.0 - (a.0 + t * vx)).hypot(p.1 - (a.1 + t * vy))
}

fn random_colors(rng: &mut ChaCha8Rng, n: usize) -> Vec<[f32; 3]> {
    (0..n).map(|_| [rng.gen::<f32>(), rng.gen::<f32>(), rng.gen::<f32>()]).collect()
}

fn check_size(width: usize, height: usize) -> Result<()> {
    if width < 2 || height < 2 {
        return Err(Error::Maze(format!("maze must be at least 2x2, got {width}x{height}")));
    }
    Ok(())
}

/// Randomized Prim: grow a tree from a random cell by repeatedly opening a
/// random frontier edge into an unvisited cell.
pub fn gen_maze_prim(width: usize, height: usize, seed: u64) -> Result<MazeGrid> {
    check_size(width, height)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let colors = random_colors(&mut rng, width * height);
    let mut maze = MazeGrid::closed(width, height, colors)?.with_seed(seed);
    let mut visited = vec![false; width * height];
    let start = (rng.gen_range(0..width), rng.gen_range(0..height));
    visited[maze.index(start)] = true;
    let mut frontier: Vec<(Cell, Dir)> = Dir::ALL.into_iter().map(|d| (start, d)).collect();
    while !frontier.is_empty() {
        let (cell, dir) = frontier.swap_remove(rng.gen_range(0..frontier.len()));
        let Some(next) = maze.neighbor(cell, dir) else { continue };
        let ni = maze.index(next);
        if visited[ni] {
            continue;
        }
        maze.open(cell, dir)?;
        visited[ni] = true;
        frontier.extend(Dir::ALL.into_iter().map(|d| (next, d)));
    }
    Ok(maze)
}

/// Randomized Kruskal: shuffle interior edges and open each one that joins
/// two different components.
pub fn gen_maze_kruskal(width: usize, height: usize, seed: u64) -> Result<MazeGrid> {
    check_size(width, height)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let colors = random_colors(&mut rng, width * height);
    let mut maze = MazeGrid::closed(width, height, colors)?.with_seed(seed);
    let mut edges = Vec::with_capacity(2 * width * height);
    for cy in 0..height {
        for cx in 0..width {
            for d in [Dir::North, Dir::East] {
                if maze.neighbor((cx, cy), d).is_some() {
                    edges.push(((cx, cy), d));
                }
            }
        }
    }
    edges.shuffle(&mut rng);
    let mut sets = DisjointSets::new(width * height);
    for (cell, dir) in edges {
        let other = maze.neighbor(cell, dir).expect("interior edge");
        if sets.union(maze.index(cell), maze.index(other)) {
            maze.open(cell, dir)?;
        }
    }
    Ok(maze)
}

pub fn gen_maze(algorithm: MazeAlgorithm, width: usize, height: usize, seed: u64) -> Result<MazeGrid> {
    match algorithm {
        MazeAlgorithm::Prim => gen_maze_prim(width, height, seed),
        MazeAlgorithm::Kruskal => gen_maze_kruskal(width, height, seed),
    }
}

struct DisjointSets {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl DisjointSets {
    fn new(n: usize) -> Self {
        DisjointSets { parent: (0..n).collect(), rank: vec![0; n] }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
        true
    }
}

/// Shortest cell path through open passages (unit edge weights), both
/// endpoints included. Returns `None` only for unreachable goals, which
/// cannot happen in a perfect maze.
pub fn dijkstra_path(maze: &MazeGrid, start: Cell, goal: Cell) -> Option<Vec<Cell>> {
    let n = maze.n_cells();
    let mut dist = vec![usize::MAX; n];
    let mut prev = vec![usize::MAX; n];
    let (s, t) = (maze.index(start), maze.index(goal));
    dist[s] = 0;
    let mut heap = BinaryHeap::new();
    heap.push(Reverse((0usize, s)));
    while let Some(Reverse((d, u))) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        if u == t {
            break;
        }
        for v in maze.passages(maze.cell_of(u)) {
            let vi = maze.index(v);
            if d + 1 < dist[vi] {
                dist[vi] = d + 1;
                prev[vi] = u;
                heap.push(Reverse((d + 1, vi)));
            }
        }
    }
    if dist[t] == usize::MAX {
        return None;
    }
    let mut path = vec![goal];
    let mut u = t;
    while u != s {
        u = prev[u];
        path.push(maze.cell_of(u));
    }
    path.reverse();
    Some(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_has_three_passages() {
        for seed in 0..20 {
            assert_eq!(gen_maze_prim(2, 2, seed).unwrap().passage_count(), 3);
            assert_eq!(gen_maze_kruskal(2, 2, seed).unwrap().passage_count(), 3);
        }
    }

    #[test]
    fn degenerate_sizes_rejected() {
        assert!(gen_maze_prim(1, 5, 0).is_err());
        assert!(gen_maze_kruskal(4, 0, 0).is_err());
        assert!(MazeGrid::closed(0, 1, vec![]).is_err());
    }

    #[test]
    fn same_seed_same_maze() {
        assert_eq!(gen_maze_prim(7, 5, 42).unwrap(), gen_maze_prim(7, 5, 42).unwrap());
        assert_eq!(gen_maze_kruskal(7, 5, 42).unwrap(), gen_maze_kruskal(7, 5, 42).unwrap());
    }

    #[test]
    fn open_is_symmetric_and_boundary_stays_closed() {
        let mut m = MazeGrid::closed(3, 3, vec![[0.0; 3]; 9]).unwrap();
        m.open((1, 1), Dir::East).unwrap();
        assert!(!m.has_wall((2, 1), Dir::West));
        assert!(m.open((0, 0), Dir::West).is_err());
        assert!(m.walls_consistent());
    }

    #[test]
    fn dijkstra_trivial_path() {
        let m = gen_maze_prim(5, 5, 3).unwrap();
        assert_eq!(dijkstra_path(&m, (2, 2), (2, 2)).unwrap(), vec![(2, 2)]);
    }

    #[test]
    fn segment_distance() {
        assert_eq!(point_segment_distance((0.5, 1.0), (0.0, 0.0), (1.0, 0.0)), 1.0);
        assert_eq!(point_segment_distance((2.0, 0.0), (0.0, 0.0), (1.0, 0.0)), 1.0);
    }
}
