use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Environment, GridObserver, ObsMode, Observation};
use crate::error::{Error, Result};

/// Integer grid cell. `y` grows northwards.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub x: i32,
    pub y: i32,
}

impl Cell {
    pub const fn new(x: i32, y: i32) -> Self {
        Cell { x, y }
    }

    pub fn euclidean(&self, other: &Cell) -> f64 {
        let dx = (self.x - other.x) as f64;
        let dy = (self.y - other.y) as f64;
        (dx * dx + dy * dy).sqrt()
    }
}

/// Grid actions. The discriminant is the action index stored in buffers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Direction {
    North = 0,
    East = 1,
    South = 2,
    West = 3,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::North,
        Direction::East,
        Direction::South,
        Direction::West,
    ];

    pub fn from_index(index: usize) -> Result<Self> {
        Self::ALL
            .get(index)
            .copied()
            .ok_or_else(|| Error::InvalidInput(format!("grid action index {index} not in [0,4)")))
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn delta(self) -> (i32, i32) {
        match self {
            Direction::North => (0, 1),
            Direction::East => (1, 0),
            Direction::South => (0, -1),
            Direction::West => (-1, 0),
        }
    }
}

/// Static maze geometry: a `width × height` box of cells, some blocked.
#[derive(Clone, Debug, PartialEq)]
pub struct GridMaze {
    width: usize,
    height: usize,
    blocked: Vec<bool>,
    free: Vec<Cell>,
}

impl GridMaze {
    /// Build a maze and check that its free cells form one connected
    /// component.
    pub fn new(width: usize, height: usize, blocked: impl IntoIterator<Item = Cell>) -> Result<Self> {
        let maze = Self::with_components(width, height, blocked)?;
        if !maze.is_connected() {
            return Err(Error::InvalidInput("free cells are not connected".into()));
        }
        Ok(maze)
    }

    /// Like [`GridMaze::new`] but accepts several disconnected components.
    pub fn with_components(
        width: usize,
        height: usize,
        blocked: impl IntoIterator<Item = Cell>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput("maze must be at least 1x1".into()));
        }
        let mut mask = vec![false; width * height];
        for c in blocked {
            if c.x < 0 || c.y < 0 || c.x as usize >= width || c.y as usize >= height {
                return Err(Error::InvalidInput(format!("blocked cell {c:?} outside maze")));
            }
            mask[c.y as usize * width + c.x as usize] = true;
        }
        let free: Vec<Cell> = (0..height as i32)
            .flat_map(|y| (0..width as i32).map(move |x| Cell::new(x, y)))
            .filter(|c| !mask[c.y as usize * width + c.x as usize])
            .collect();
        if free.is_empty() {
            return Err(Error::InvalidInput("maze has no free cells".into()));
        }
        Ok(GridMaze {
            width,
            height,
            blocked: mask,
            free,
        })
    }

    pub fn open(width: usize, height: usize) -> Self {
        Self::new(width, height, std::iter::empty()).expect("open maze is always valid")
    }

    /// Parse an ASCII map: `#` is blocked, anything else free. The first
    /// line is the northernmost row.
    pub fn from_ascii(map: &str) -> Result<Self> {
        let rows: Vec<&str> = map
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .collect();
        let height = rows.len();
        let width = rows.first().map(|r| r.chars().count()).unwrap_or(0);
        if rows.iter().any(|r| r.chars().count() != width) {
            return Err(Error::InvalidInput("ragged ascii map".into()));
        }
        let mut blocked = Vec::new();
        for (row, line) in rows.iter().enumerate() {
            let y = (height - 1 - row) as i32;
            for (x, ch) in line.chars().enumerate() {
                if ch == '#' {
                    blocked.push(Cell::new(x as i32, y));
                }
            }
        }
        Self::with_components(width, height, blocked)
    }

    /// Four rooms separated by a cross-shaped wall with one door per wall
    /// arm.
    pub fn rooms(width: usize, height: usize) -> Result<Self> {
        if width < 5 || height < 5 {
            return Err(Error::InvalidInput("rooms maze needs at least 5x5".into()));
        }
        let mx = (width / 2) as i32;
        let my = (height / 2) as i32;
        let doors = [
            Cell::new(mx, my / 2),
            Cell::new(mx, my + (height as i32 - my) / 2),
            Cell::new(mx / 2, my),
            Cell::new(mx + (width as i32 - mx) / 2, my),
        ];
        let mut blocked = Vec::new();
        for y in 0..height as i32 {
            for x in 0..width as i32 {
                let c = Cell::new(x, y);
                if (x == mx || y == my) && !doors.contains(&c) {
                    blocked.push(c);
                }
            }
        }
        Self::new(width, height, blocked)
    }

    /// A clover-shaped maze: four circular lobes on the diagonals joined by
    /// a central hub, with thin walls between neighbouring lobes. Single-cell
    /// column obstacles are then dropped onto `obstacle_density` of the free
    /// cells, skipping any that would disconnect the maze.
    pub fn clover(size: usize, obstacle_density: f64, seed: u64) -> Result<Self> {
        if size < 8 {
            return Err(Error::InvalidInput("clover maze needs size >= 8".into()));
        }
        if !(0.0..0.5).contains(&obstacle_density) {
            return Err(Error::InvalidInput("obstacle density must be in [0, 0.5)".into()));
        }
        let s = size as f64;
        let centre = (s - 1.0) / 2.0;
        let offset = 0.25 * s;
        let lobe_r = 0.215 * s;
        let hub_r = 0.16 * s;
        let lobes = [
            (centre - offset, centre - offset),
            (centre + offset, centre - offset),
            (centre - offset, centre + offset),
            (centre + offset, centre + offset),
        ];
        let inside = |x: f64, y: f64| {
            let in_lobe = lobes
                .iter()
                .any(|&(lx, ly)| (x - lx).powi(2) + (y - ly).powi(2) <= lobe_r * lobe_r);
            let in_hub = (x - centre).powi(2) + (y - centre).powi(2) <= hub_r * hub_r;
            in_lobe || in_hub
        };
        let mut blocked: Vec<Cell> = Vec::new();
        for y in 0..size as i32 {
            for x in 0..size as i32 {
                if !inside(x as f64, y as f64) {
                    blocked.push(Cell::new(x, y));
                }
            }
        }
        let mut maze = Self::with_components(size, size, blocked)?;
        // Lobe rims can leave isolated specks; keep the component holding the
        // centre-most free cell.
        maze = maze.largest_component();

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let target = (obstacle_density * maze.free.len() as f64).round() as usize;
        let mut candidates = maze.free.clone();
        candidates.shuffle(&mut rng);
        let mut placed = 0;
        for c in candidates {
            if placed >= target {
                break;
            }
            let mut trial = maze.blocked.clone();
            trial[maze.index_of(c)] = true;
            let next = Self::with_components(
                maze.width,
                maze.height,
                (0..maze.height as i32)
                    .flat_map(|y| (0..maze.width as i32).map(move |x| Cell::new(x, y)))
                    .filter(|k| trial[k.y as usize * maze.width + k.x as usize]),
            )?;
            if next.is_connected() {
                maze = next;
                placed += 1;
            }
        }
        Ok(maze)
    }

    fn largest_component(&self) -> Self {
        let mut label = vec![usize::MAX; self.width * self.height];
        let mut best: Vec<Cell> = Vec::new();
        for &start in &self.free {
            if label[self.index_of(start)] != usize::MAX {
                continue;
            }
            let comp = self.flood(start, &mut label);
            if comp.len() > best.len() {
                best = comp;
            }
        }
        let keep: std::collections::HashSet<Cell> = best.into_iter().collect();
        let blocked = (0..self.height as i32)
            .flat_map(|y| (0..self.width as i32).map(move |x| Cell::new(x, y)))
            .filter(|c| !keep.contains(c));
        Self::with_components(self.width, self.height, blocked).expect("component is nonempty")
    }

    fn flood(&self, start: Cell, label: &mut [usize]) -> Vec<Cell> {
        let id = self.index_of(start);
        let mut out = vec![start];
        let mut queue = VecDeque::from([start]);
        label[self.index_of(start)] = id;
        while let Some(c) = queue.pop_front() {
            for d in Direction::ALL {
                let (n, blocked) = self.step(c, d);
                if !blocked && label[self.index_of(n)] == usize::MAX {
                    label[self.index_of(n)] = id;
                    out.push(n);
                    queue.push_back(n);
                }
            }
        }
        out
    }

    pub fn is_connected(&self) -> bool {
        let mut label = vec![usize::MAX; self.width * self.height];
        self.flood(self.free[0], &mut label).len() == self.free.len()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn free_cells(&self) -> &[Cell] {
        &self.free
    }

    pub fn blocked_cells(&self) -> Vec<Cell> {
        (0..self.height as i32)
            .flat_map(|y| (0..self.width as i32).map(move |x| Cell::new(x, y)))
            .filter(|c| self.blocked[self.index_of(*c)])
            .collect()
    }

    pub fn contains(&self, c: Cell) -> bool {
        c.x >= 0 && c.y >= 0 && (c.x as usize) < self.width && (c.y as usize) < self.height
    }

    pub fn is_free(&self, c: Cell) -> bool {
        self.contains(c) && !self.blocked[self.index_of(c)]
    }

    /// Row-major index of an in-bounds cell.
    pub fn index_of(&self, c: Cell) -> usize {
        c.y as usize * self.width + c.x as usize
    }

    /// Move one cell. Moves into blocked cells or off the map leave the agent
    /// in place and report a collision.
    pub fn step(&self, c: Cell, dir: Direction) -> (Cell, bool) {
        let (dx, dy) = dir.delta();
        let next = Cell::new(c.x + dx, c.y + dy);
        if self.is_free(next) {
            (next, false)
        } else {
            (c, true)
        }
    }
}

/// A grid maze together with its observation lifting map.
#[derive(Clone, Debug)]
pub struct GridEnv {
    pub maze: GridMaze,
    pub observer: GridObserver,
}

impl GridEnv {
    pub fn new(maze: GridMaze, mode: ObsMode, seed: u64) -> Result<Self> {
        let observer = GridObserver::new(mode, maze.width(), maze.height(), seed)?;
        Ok(GridEnv { maze, observer })
    }
}

impl Environment for GridEnv {
    type State = Cell;

    fn num_actions(&self) -> usize {
        4
    }

    fn obs_dim(&self) -> usize {
        self.observer.dim()
    }

    fn step(&self, state: &Cell, action: usize) -> Result<(Cell, bool)> {
        if !self.maze.is_free(*state) {
            return Err(Error::InvalidInput(format!("state {state:?} is not a free cell")));
        }
        Ok(self.maze.step(*state, Direction::from_index(action)?))
    }

    fn observe(&self, state: &Cell) -> Observation {
        self.observer.observe(*state)
    }

    fn sample_state<R: Rng + ?Sized>(&self, rng: &mut R) -> Cell {
        let free = self.maze.free_cells();
        free[rng.random_range(0..free.len())]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unobstructed_move_north() {
        let env = GridEnv::new(GridMaze::open(5, 5), ObsMode::Identity, 0).unwrap();
        let (next, collided) = env.step(&Cell::new(2, 2), 0).unwrap();
        assert_eq!(next, Cell::new(2, 3));
        assert!(!collided);
    }

    #[test]
    fn blocked_move_is_identity() {
        let maze = GridMaze::new(5, 5, [Cell::new(3, 2)]).unwrap();
        let env = GridEnv::new(maze, ObsMode::Identity, 0).unwrap();
        let (next, collided) = env.step(&Cell::new(2, 2), Direction::East.index()).unwrap();
        assert_eq!(next, Cell::new(2, 2));
        assert!(collided);
        let (edge, collided) = env.step(&Cell::new(0, 0), Direction::West.index()).unwrap();
        assert_eq!(edge, Cell::new(0, 0));
        assert!(collided);
    }

    #[test]
    fn malformed_action_rejected() {
        let env = GridEnv::new(GridMaze::open(3, 3), ObsMode::Identity, 0).unwrap();
        assert!(matches!(env.step(&Cell::new(1, 1), 4), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn disconnected_maze_rejected_by_new() {
        let wall: Vec<Cell> = (0..5).map(|y| Cell::new(2, y)).collect();
        assert!(GridMaze::new(5, 5, wall.clone()).is_err());
        assert!(GridMaze::with_components(5, 5, wall).is_ok());
    }

    #[test]
    fn clover_is_connected_with_columns() {
        let maze = GridMaze::clover(20, 0.05, 7).unwrap();
        assert!(maze.is_connected());
        let free = maze.free_cells().len();
        assert!(free > 150 && free < 320, "free cells {free}");
        // neighbouring lobes are separated along the axes through the centre
        assert!(!maze.is_free(Cell::new(9, 2)) || !maze.is_free(Cell::new(10, 2)));
    }

    #[test]
    fn rooms_have_doors() {
        let maze = GridMaze::rooms(11, 11).unwrap();
        assert!(maze.is_connected());
        assert!(!maze.is_free(Cell::new(5, 0)));
    }

    #[test]
    fn ascii_orientation() {
        let maze = GridMaze::from_ascii("#..\n...\n...").unwrap();
        assert!(!maze.is_free(Cell::new(0, 2)));
        assert!(maze.is_free(Cell::new(0, 0)));
    }
}
