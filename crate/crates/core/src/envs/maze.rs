//! Point-mass mazes on a unit-cell grid, a breadth-first waypoint planner and
//! free-space geodesic distances.
//!
//! Grid text: `#` wall, `.` free, `S` start, `G` goal. Row 0 is the top row;
//! continuous `y` is measured upward from the bottom edge, so cell `(r, c)`
//! covers `x in [c, c+1)`, `y in [rows-1-r, rows-r)`.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{Controller, Env, Step};
use crate::error::{Error, Result};

pub type Cell = (usize, usize);

pub const U_MAZE: &str = "\
#####
#G#G#
#.#.#
#S.G#
#####
";

/// Large layout without goals; goals are drawn with [`LARGE_MAZE_GOAL_SEED`].
pub const LARGE_MAZE: &str = "\
############
#S...#.....#
#.##.#.#.#.#
#......#...#
#.####.###.#
#..#.#.....#
##.#.#.#.###
#..#...#...#
############
";

pub const LARGE_MAZE_GOAL_SEED: u64 = 7;
pub const MAZE_HORIZON: usize = 600;
pub const DT: f64 = 0.15;
pub const DAMPING: f64 = 0.9;
pub const ACTION_BOUND: f64 = 1.0;
/// Keeps projected positions strictly inside the free cell.
const WALL_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct MazeSpec {
    rows: usize,
    cols: usize,
    walls: Vec<bool>,
    pub start: Cell,
    pub goals: Vec<Cell>,
    pub cell_size: f64,
}

impl MazeSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().map(str::trim_end).filter(|l| !l.is_empty()).collect();
        if lines.is_empty() {
            return Err(Error::Config("maze grid is empty".into()));
        }
        let cols = lines[0].chars().count();
        let rows = lines.len();
        let mut walls = Vec::with_capacity(rows * cols);
        let mut start = None;
        let mut goals = Vec::new();
        for (r, line) in lines.iter().enumerate() {
            if line.chars().count() != cols {
                return Err(Error::Config(format!("maze row {r} has a different width")));
            }
            for (c, ch) in line.chars().enumerate() {
                match ch {
                    '#' => walls.push(true),
                    '.' => walls.push(false),
                    'S' => {
                        if start.replace((r, c)).is_some() {
                            return Err(Error::Config("maze has more than one start".into()));
                        }
                        walls.push(false);
                    }
                    'G' => {
                        goals.push((r, c));
                        walls.push(false);
                    }
                    other => return Err(Error::Config(format!("unknown maze cell {other:?}"))),
                }
            }
        }
        let start = start.ok_or_else(|| Error::Config("maze has no start".into()))?;
        let spec = Self {
            rows,
            cols,
            walls,
            start,
            goals,
            cell_size: 1.0,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    fn validate(&self) -> Result<()> {
        for r in 0..self.rows {
            for c in 0..self.cols {
                let edge = r == 0 || c == 0 || r + 1 == self.rows || c + 1 == self.cols;
                if edge && !self.is_wall((r, c)) {
                    return Err(Error::Config(format!("maze boundary is open at {r},{c}")));
                }
            }
        }
        let dist = self.bfs_distances(self.start);
        for &g in &self.goals {
            if dist[self.index(g)].is_none() {
                return Err(Error::Config(format!("goal {g:?} is unreachable from the start")));
            }
        }
        Ok(())
    }

    pub fn u_maze() -> Self {
        Self::parse(U_MAZE).expect("builtin maze is valid")
    }

    /// Large layout with three goals in distinct, mutually distant pathways.
    pub fn large_maze() -> Self {
        let mut spec = Self::parse(LARGE_MAZE).expect("builtin maze is valid");
        let mut rng = ChaCha8Rng::seed_from_u64(LARGE_MAZE_GOAL_SEED);
        let from_start = spec.bfs_distances(spec.start);
        let mut candidates: Vec<Cell> = spec
            .free_cells()
            .into_iter()
            .filter(|&c| from_start[spec.index(c)].is_some_and(|d| d >= 8))
            .collect();
        candidates.shuffle(&mut rng);
        let mut goals: Vec<Cell> = Vec::new();
        for c in candidates {
            let far = goals.iter().all(|&g| spec.bfs_distances(g)[spec.index(c)].is_some_and(|d| d >= 6));
            if far {
                goals.push(c);
            }
            if goals.len() == 3 {
                break;
            }
        }
        assert_eq!(goals.len(), 3, "large maze admits three separated goals");
        spec.goals = goals;
        spec
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    fn index(&self, (r, c): Cell) -> usize {
        r * self.cols + c
    }

    pub fn is_wall(&self, cell: Cell) -> bool {
        cell.0 >= self.rows || cell.1 >= self.cols || self.walls[self.index(cell)]
    }

    pub fn free_cells(&self) -> Vec<Cell> {
        (0..self.rows)
            .flat_map(|r| (0..self.cols).map(move |c| (r, c)))
            .filter(|&c| !self.is_wall(c))
            .collect()
    }

    /// Cell containing a continuous position, if inside the grid.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<Cell> {
        if x < 0.0 || y < 0.0 {
            return None;
        }
        let c = x.floor() as usize;
        let from_bottom = y.floor() as usize;
        if c >= self.cols || from_bottom >= self.rows {
            return None;
        }
        Some((self.rows - 1 - from_bottom, c))
    }

    pub fn is_free(&self, x: f64, y: f64) -> bool {
        self.cell_of(x, y).is_some_and(|c| !self.is_wall(c))
    }

    pub fn cell_center(&self, (r, c): Cell) -> (f64, f64) {
        (c as f64 + 0.5, (self.rows - 1 - r) as f64 + 0.5)
    }

    fn neighbours(&self, (r, c): Cell) -> impl Iterator<Item = Cell> + '_ {
        // fixed order keeps planning deterministic
        [(r.wrapping_sub(1), c), (r + 1, c), (r, c.wrapping_sub(1)), (r, c + 1)]
            .into_iter()
            .filter(move |&n| !self.is_wall(n))
    }

    /// Breadth-first step counts from `from` to every cell.
    pub fn bfs_distances(&self, from: Cell) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.rows * self.cols];
        if self.is_wall(from) {
            return dist;
        }
        dist[self.index(from)] = Some(0);
        let mut queue = VecDeque::from([from]);
        while let Some(cell) = queue.pop_front() {
            let d = dist[self.index(cell)].expect("queued cells are labelled");
            for n in self.neighbours(cell) {
                let i = self.index(n);
                if dist[i].is_none() {
                    dist[i] = Some(d + 1);
                    queue.push_back(n);
                }
            }
        }
        dist
    }

    /// Shortest free-cell path, both endpoints included.
    pub fn shortest_path(&self, from: Cell, to: Cell) -> Result<Vec<Cell>> {
        let dist = self.bfs_distances(to);
        let mut d = dist[self.index(from)].ok_or_else(|| Error::Config(format!("{to:?} unreachable from {from:?}")))?;
        let mut path = vec![from];
        let mut cur = from;
        while d > 0 {
            cur = self
                .neighbours(cur)
                .find(|&n| dist[self.index(n)] == Some(d - 1))
                .expect("bfs labels are consistent");
            path.push(cur);
            d -= 1;
        }
        Ok(path)
    }

    pub fn start_position(&self) -> (f64, f64) {
        self.cell_center(self.start)
    }
}

/// 2-D point mass: `v <- damping v + a dt`, `p <- p + v dt`, with per-axis
/// wall projection.
#[derive(Debug, Clone)]
pub struct MazeEnv {
    pub spec: Arc<MazeSpec>,
    pub state: [f64; 4],
    pub horizon: usize,
    /// Uniform jitter of the start position on reset.
    pub start_jitter: f64,
}

impl MazeEnv {
    pub fn new(spec: Arc<MazeSpec>) -> Self {
        let (x, y) = spec.start_position();
        Self {
            spec,
            state: [x, y, 0.0, 0.0],
            horizon: MAZE_HORIZON,
            start_jitter: 0.1,
        }
    }

    fn move_axis(&self, pos: [f64; 2], axis: usize, delta: f64) -> (f64, bool) {
        let mut next = pos;
        next[axis] += delta;
        if self.spec.is_free(next[0], next[1]) {
            return (next[axis], false);
        }
        let base = pos[axis].floor();
        let projected = if delta > 0.0 { base + 1.0 - WALL_MARGIN } else { base + WALL_MARGIN };
        (projected, true)
    }
}

impl Env for MazeEnv {
    fn state_dim(&self) -> usize {
        4
    }

    fn action_dim(&self) -> usize {
        2
    }

    fn action_bound(&self) -> Vec<f64> {
        vec![ACTION_BOUND; 2]
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<f64> {
        let (x, y) = self.spec.start_position();
        let j = self.start_jitter;
        let (dx, dy) = if j > 0.0 {
            (rng.random_range(-j..=j), rng.random_range(-j..=j))
        } else {
            (0.0, 0.0)
        };
        self.state = [x + dx, y + dy, 0.0, 0.0];
        self.state()
    }

    fn state(&self) -> Vec<f64> {
        self.state.to_vec()
    }

    fn step(&mut self, action: &[f64]) -> Step {
        let [x, y, vx, vy] = self.state;
        let ax = action[0].clamp(-ACTION_BOUND, ACTION_BOUND);
        let ay = action[1].clamp(-ACTION_BOUND, ACTION_BOUND);
        let mut v = [DAMPING * vx + ax * DT, DAMPING * vy + ay * DT];
        let mut pos = [x, y];
        for axis in 0..2 {
            let (p, hit) = self.move_axis(pos, axis, v[axis] * DT);
            pos[axis] = p;
            if hit {
                v[axis] = 0.0;
            }
        }
        self.state = [pos[0], pos[1], v[0], v[1]];
        Step {
            state: self.state(),
            reward: 0.0,
            done: false,
        }
    }
}

/// PD controller toward successive cell centres along the shortest path to
/// one goal, plus Gaussian action noise.
#[derive(Debug, Clone)]
pub struct WaypointController {
    spec: Arc<MazeSpec>,
    goal: Cell,
    to_goal: Vec<Option<usize>>,
    waypoint: Option<Cell>,
    pub kp: f64,
    pub kd: f64,
    pub capture_radius: f64,
    pub noise_std: f64,
}

impl WaypointController {
    pub fn new(spec: Arc<MazeSpec>, goal_index: usize) -> Result<Self> {
        let goal = *spec
            .goals
            .get(goal_index)
            .ok_or_else(|| Error::Config(format!("goal index {goal_index} out of range")))?;
        let to_goal = spec.bfs_distances(goal);
        if to_goal[spec.index(spec.start)].is_none() {
            return Err(Error::Config(format!("goal {goal_index} is unreachable")));
        }
        Ok(Self {
            spec,
            goal,
            to_goal,
            waypoint: None,
            kp: 4.0,
            kd: 1.5,
            capture_radius: 0.3,
            noise_std: 0.2,
        })
    }

    fn dist(&self, cell: Cell) -> Option<usize> {
        self.to_goal[self.spec.index(cell)]
    }

    fn next_cell(&self, cell: Cell) -> Cell {
        match self.dist(cell) {
            Some(0) | None => cell,
            Some(d) => self
                .spec
                .neighbours(cell)
                .find(|&n| self.dist(n) == Some(d - 1))
                .expect("bfs labels are consistent"),
        }
    }

    /// Current target position, updating the waypoint first.
    pub fn target(&mut self, x: f64, y: f64) -> (f64, f64) {
        let Some(here) = self.spec.cell_of(x, y) else {
            return self.spec.cell_center(self.goal);
        };
        let w = match self.waypoint {
            Some(w) => {
                let adjacent = w == here || self.spec.neighbours(w).any(|n| n == here);
                let ahead = self.dist(here) < self.dist(w);
                if !adjacent || ahead {
                    here
                } else {
                    w
                }
            }
            None => here,
        };
        let (cx, cy) = self.spec.cell_center(w);
        let w = if ((x - cx).powi(2) + (y - cy).powi(2)).sqrt() < self.capture_radius {
            self.next_cell(w)
        } else {
            w
        };
        self.waypoint = Some(w);
        self.spec.cell_center(w)
    }
}

impl Controller for WaypointController {
    fn act(&mut self, state: &[f64], rng: &mut dyn RngCore) -> Vec<f64> {
        let (tx, ty) = self.target(state[0], state[1]);
        let mut a = [self.kp * (tx - state[0]) - self.kd * state[2], self.kp * (ty - state[1]) - self.kd * state[3]];
        for v in a.iter_mut() {
            if self.noise_std > 0.0 {
                *v += self.noise_std * rng.sample::<f64, _>(StandardNormal);
            }
            *v = v.clamp(-ACTION_BOUND, ACTION_BOUND);
        }
        a.to_vec()
    }

    fn reset(&mut self) {
        self.waypoint = None;
    }
}

/// Resolution of the geodesic sub-grid, in nodes per cell side.
pub const GEODESIC_RESOLUTION: usize = 4;

#[derive(Clone, Copy, PartialEq)]
struct Entry(f64, usize);

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Shortest free-space path lengths (in cell units) from a source point,
/// computed by Dijkstra on an 8-connected sub-grid that never cuts wall
/// corners.
#[derive(Debug, Clone)]
pub struct GeodesicField {
    spec: Arc<MazeSpec>,
    width: usize,
    height: usize,
    dist: Vec<f64>,
}

impl GeodesicField {
    pub fn new(spec: Arc<MazeSpec>, source: (f64, f64)) -> Result<Self> {
        let k = GEODESIC_RESOLUTION;
        let width = spec.cols() * k;
        let height = spec.rows() * k;
        let mut field = Self {
            spec,
            width,
            height,
            dist: vec![f64::INFINITY; width * height],
        };
        let src = field
            .nearest_free_node(source)
            .ok_or_else(|| Error::Config("maze has no free space".into()))?;
        let step = 1.0 / k as f64;
        let mut heap = BinaryHeap::from([Entry(0.0, src)]);
        field.dist[src] = 0.0;
        while let Some(Entry(d, node)) = heap.pop() {
            if d > field.dist[node] {
                continue;
            }
            let (i, j) = (node % width, node / width);
            for (di, dj) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1), (-1, -1), (-1, 1), (1, -1), (1, 1)] {
                let (ni, nj) = (i as i64 + di, j as i64 + dj);
                if !field.free_node(ni, nj) {
                    continue;
                }
                if di != 0 && dj != 0 && !(field.free_node(i as i64 + di, j as i64) && field.free_node(i as i64, j as i64 + dj)) {
                    continue;
                }
                let cost = if di != 0 && dj != 0 { std::f64::consts::SQRT_2 * step } else { step };
                let n = nj as usize * width + ni as usize;
                if d + cost < field.dist[n] {
                    field.dist[n] = d + cost;
                    heap.push(Entry(d + cost, n));
                }
            }
        }
        Ok(field)
    }

    fn node_center(&self, i: usize, j: usize) -> (f64, f64) {
        let k = GEODESIC_RESOLUTION as f64;
        ((i as f64 + 0.5) / k, (j as f64 + 0.5) / k)
    }

    fn free_node(&self, i: i64, j: i64) -> bool {
        if i < 0 || j < 0 || i as usize >= self.width || j as usize >= self.height {
            return false;
        }
        let (x, y) = self.node_center(i as usize, j as usize);
        self.spec.is_free(x, y)
    }

    fn nearest_free_node(&self, (x, y): (f64, f64)) -> Option<usize> {
        let k = GEODESIC_RESOLUTION as f64;
        let (i, j) = ((x * k).floor() as i64, (y * k).floor() as i64);
        if self.free_node(i, j) {
            return Some(j as usize * self.width + i as usize);
        }
        let mut best: Option<(f64, usize)> = None;
        for jj in 0..self.height {
            for ii in 0..self.width {
                if !self.free_node(ii as i64, jj as i64) {
                    continue;
                }
                let (cx, cy) = self.node_center(ii, jj);
                let d = (cx - x).powi(2) + (cy - y).powi(2);
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, jj * self.width + ii));
                }
            }
        }
        best.map(|(_, n)| n)
    }

    /// Geodesic distance to a point; points in walls snap to the nearest
    /// free node.
    pub fn distance(&self, p: (f64, f64)) -> f64 {
        self.nearest_free_node(p).map_or(f64::INFINITY, |n| self.dist[n])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(spec: &Arc<MazeSpec>, goal: usize, seed: u64) -> (Vec<[f64; 4]>, Option<usize>) {
        let mut env = MazeEnv::new(spec.clone());
        let mut ctrl = WaypointController::new(spec.clone(), goal).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        env.reset(&mut rng);
        let goal_cell = spec.goals[goal];
        let mut reached = None;
        let mut states = vec![env.state];
        for t in 0..MAZE_HORIZON {
            let a = ctrl.act(&env.state(), &mut rng);
            env.step(&a);
            states.push(env.state);
            let (gx, gy) = spec.cell_center(goal_cell);
            if reached.is_none() && ((env.state[0] - gx).powi(2) + (env.state[1] - gy).powi(2)).sqrt() < 0.3 {
                reached = Some(t + 1);
            }
        }
        (states, reached)
    }

    #[test]
    fn parses_builtin_layouts() {
        let u = MazeSpec::u_maze();
        assert_eq!((u.rows(), u.cols()), (5, 5));
        assert_eq!(u.goals.len(), 3);
        let l = MazeSpec::large_maze();
        assert_eq!((l.rows(), l.cols()), (9, 12));
        assert_eq!(l.goals.len(), 3);
        for g in &l.goals {
            assert!(!l.is_wall(*g));
        }
        assert_eq!(l, MazeSpec::large_maze());
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(MazeSpec::parse("###\n#S.\n###\n").is_err());
        assert!(MazeSpec::parse("####\n#..#\n####\n").is_err());
        assert!(MazeSpec::parse("#####\n#S#G#\n#####\n").is_err());
        assert!(MazeSpec::parse("###\n#x#\n###\n").is_err());
    }

    #[test]
    fn coordinates_round_trip() {
        let u = MazeSpec::u_maze();
        assert_eq!(u.start, (3, 1));
        assert_eq!(u.cell_center(u.start), (1.5, 1.5));
        assert_eq!(u.cell_of(1.5, 1.5), Some((3, 1)));
        assert_eq!(u.cell_of(1.5, 3.5), Some((1, 1)));
    }

    #[test]
    fn zero_action_at_rest_is_fixed_point() {
        let spec = Arc::new(MazeSpec::u_maze());
        let mut env = MazeEnv::new(spec);
        let before = env.state;
        env.step(&[0.0, 0.0]);
        assert_eq!(env.state, before);
    }

    #[test]
    fn free_space_matches_closed_form() {
        let spec = Arc::new(MazeSpec::parse("#######\n#.....#\n#..S..#\n#.....#\n#######\n").unwrap());
        let mut env = MazeEnv::new(spec);
        env.state = [3.5, 2.5, 0.1, -0.05];
        let (a, v0, p0) = ([0.3, 0.2], [0.1, -0.05], [3.5, 2.5]);
        for k in 1..=10 {
            env.step(&a);
            for axis in 0..2 {
                // v_k = d^k v0 + a dt (1 - d^k) / (1 - d)
                let v = |n: i32| DAMPING.powi(n) * v0[axis] + a[axis] * DT * (1.0 - DAMPING.powi(n)) / (1.0 - DAMPING);
                let p: f64 = p0[axis] + DT * (1..=k).map(v).sum::<f64>();
                assert!((env.state[axis] - p).abs() < 1e-12);
                assert!((env.state[axis + 2] - v(k)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn random_actions_never_enter_walls() {
        let spec = Arc::new(MazeSpec::large_maze());
        let mut env = MazeEnv::new(spec.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        env.reset(&mut rng);
        for _ in 0..100_000 {
            let a = [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)];
            let s = env.step(&a).state;
            assert!(spec.is_free(s[0], s[1]), "{s:?}");
        }
    }

    #[test]
    fn heading_into_wall_stays_free() {
        let spec = Arc::new(MazeSpec::u_maze());
        let mut env = MazeEnv::new(spec.clone());
        for _ in 0..200 {
            env.step(&[-1.0, -1.0]);
            assert!(spec.is_free(env.state[0], env.state[1]));
        }
        assert!(env.state[0] > 1.0 && env.state[1] > 1.0);
    }

    #[test]
    fn planner_paths_are_free() {
        for spec in [MazeSpec::u_maze(), MazeSpec::large_maze()] {
            for &g in &spec.goals {
                let path = spec.shortest_path(spec.start, g).unwrap();
                assert_eq!(path[0], spec.start);
                assert_eq!(*path.last().unwrap(), g);
                assert!(path.iter().all(|&c| !spec.is_wall(c)));
            }
        }
    }

    #[test]
    fn planner_reaches_every_goal() {
        for spec in [MazeSpec::u_maze(), MazeSpec::large_maze()] {
            let spec = Arc::new(spec);
            for g in 0..3 {
                let (_, reached) = run(&spec, g, 10 + g as u64);
                assert!(reached.is_some_and(|t| t <= MAZE_HORIZON), "goal {g} not reached");
            }
        }
    }

    #[test]
    fn goals_give_separated_final_states() {
        let spec = Arc::new(MazeSpec::u_maze());
        let finals: Vec<Vec<[f64; 4]>> = (0..3)
            .map(|g| (0..5).map(|s| *run(&spec, g, 100 + s).0.last().unwrap()).collect())
            .collect();
        let centroid = |v: &[[f64; 4]]| {
            let n = v.len() as f64;
            (v.iter().map(|s| s[0]).sum::<f64>() / n, v.iter().map(|s| s[1]).sum::<f64>() / n)
        };
        let cs: Vec<(f64, f64)> = finals.iter().map(|f| centroid(f)).collect();
        for (g, f) in finals.iter().enumerate() {
            for s in f {
                let nearest = (0..3)
                    .min_by(|&a, &b| {
                        let da = (s[0] - cs[a].0).powi(2) + (s[1] - cs[a].1).powi(2);
                        let db = (s[0] - cs[b].0).powi(2) + (s[1] - cs[b].1).powi(2);
                        da.total_cmp(&db)
                    })
                    .unwrap();
                assert_eq!(nearest, g);
            }
        }
    }

    #[test]
    fn unreachable_goal_is_config_error() {
        let spec = Arc::new(MazeSpec::u_maze());
        assert!(WaypointController::new(spec, 3).is_err());
    }

    #[test]
    fn geodesic_follows_corridors() {
        let spec = Arc::new(MazeSpec::u_maze());
        let field = GeodesicField::new(spec.clone(), spec.start_position()).unwrap();
        assert!(field.distance(spec.start_position()) < 0.2);
        // top-left goal is straight up: two cells
        let d_up = field.distance(spec.cell_center((1, 1)));
        assert!((d_up - 2.0).abs() < 0.3, "{d_up}");
        // top-right goal goes around the wall: four cells
        let d_around = field.distance(spec.cell_center((1, 3)));
        assert!((d_around - 4.0).abs() < 0.5, "{d_around}");
    }
}
