//! Ground-truth geometry for tests and evaluation.
//!
//! Nothing in the learning or planning path may depend on this module.

use std::collections::{HashMap, VecDeque};

use super::{Cell, Direction, GridEnv, GridMaze};

/// Exact BFS step count between two free cells, `None` when unreachable.
pub fn geodesic_oracle(maze: &GridMaze, from: Cell, to: Cell) -> Option<usize> {
    if !maze.is_free(from) || !maze.is_free(to) {
        return None;
    }
    bfs_field(maze, from)[maze.index_of(to)].map(|d| d as usize)
}

/// BFS distances from `source` to every cell (row-major; `None` for
/// blocked or unreachable cells).
pub fn bfs_field(maze: &GridMaze, source: Cell) -> Vec<Option<u32>> {
    let mut dist = vec![None; maze.width() * maze.height()];
    if !maze.is_free(source) {
        return dist;
    }
    dist[maze.index_of(source)] = Some(0);
    let mut queue = VecDeque::from([source]);
    while let Some(c) = queue.pop_front() {
        let d = dist[maze.index_of(c)].expect("queued cells have distances");
        for dir in Direction::ALL {
            let (n, blocked) = maze.step(c, dir);
            if !blocked && dist[maze.index_of(n)].is_none() {
                dist[maze.index_of(n)] = Some(d + 1);
                queue.push_back(n);
            }
        }
    }
    dist
}

/// All-pairs BFS distances over the free cells of a maze.
#[derive(Clone, Debug)]
pub struct GeodesicTable {
    width: usize,
    cells: usize,
    dist: Vec<u32>,
}

const UNREACHABLE: u32 = u32::MAX;

impl GeodesicTable {
    pub fn new(maze: &GridMaze) -> Self {
        let cells = maze.width() * maze.height();
        let mut dist = vec![UNREACHABLE; cells * cells];
        for &c in maze.free_cells() {
            let row = maze.index_of(c) * cells;
            for (k, d) in bfs_field(maze, c).into_iter().enumerate() {
                if let Some(d) = d {
                    dist[row + k] = d;
                }
            }
        }
        GeodesicTable {
            width: maze.width(),
            cells,
            dist,
        }
    }

    pub fn distance(&self, a: Cell, b: Cell) -> Option<usize> {
        let ia = a.y as usize * self.width + a.x as usize;
        let ib = b.y as usize * self.width + b.x as usize;
        if ia >= self.cells || ib >= self.cells {
            return None;
        }
        let d = self.dist[ia * self.cells + ib];
        (d != UNREACHABLE).then_some(d as usize)
    }
}

/// Inverts the observation map of a grid environment (exact bit match).
#[derive(Clone, Debug)]
pub struct ObsDecoder {
    map: HashMap<Vec<u32>, Cell>,
}

impl ObsDecoder {
    pub fn new(env: &GridEnv) -> Self {
        let map = env
            .maze
            .free_cells()
            .iter()
            .map(|&c| (bits(&env.observer.observe(c).0), c))
            .collect();
        ObsDecoder { map }
    }

    pub fn decode(&self, obs: &[f32]) -> Option<Cell> {
        self.map.get(&bits(obs)).copied()
    }
}

fn bits(v: &[f32]) -> Vec<u32> {
    v.iter().map(|x| x.to_bits()).collect()
}

/// Optimal goal-conditioned values by synchronous value iteration over the
/// true dynamics, with the indicator target
/// `Q(s,a,g) = 1[s' = g] + γ · 1[s' ≠ g] · max_a' Q(s',a',g)`.
///
/// Returned as `q[goal][cell][action]` over row-major cell indices.
pub fn value_iteration(maze: &GridMaze, gamma: f64) -> Vec<Vec<[f64; 4]>> {
    let cells = maze.width() * maze.height();
    let free = maze.free_cells();
    let mut q = vec![vec![[0.0f64; 4]; cells]; cells];
    for &g in free {
        let gi = maze.index_of(g);
        loop {
            let prev = q[gi].clone();
            let mut changed = false;
            for &s in free {
                for dir in Direction::ALL {
                    let (next, _) = maze.step(s, dir);
                    let target = if next == g {
                        1.0
                    } else {
                        let v = prev[maze.index_of(next)];
                        gamma * v.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                    };
                    let slot = &mut q[gi][maze.index_of(s)][dir.index()];
                    if *slot != target {
                        *slot = target;
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
    }
    q
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn self_distance_zero() {
        let m = GridMaze::open(5, 5);
        assert_eq!(geodesic_oracle(&m, Cell::new(1, 1), Cell::new(1, 1)), Some(0));
    }

    #[test]
    fn adjacent_distance_one() {
        let m = GridMaze::open(5, 5);
        assert_eq!(geodesic_oracle(&m, Cell::new(1, 1), Cell::new(1, 2)), Some(1));
    }

    #[test]
    fn split_grid_unreachable() {
        let wall: Vec<Cell> = (0..5).map(|y| Cell::new(2, y)).collect();
        let m = GridMaze::with_components(5, 5, wall).unwrap();
        assert_eq!(geodesic_oracle(&m, Cell::new(0, 0), Cell::new(4, 4)), None);
    }

    #[test]
    fn table_matches_single_queries_and_is_symmetric() {
        let m = GridMaze::rooms(9, 9).unwrap();
        let t = GeodesicTable::new(&m);
        for &a in m.free_cells().iter().step_by(5) {
            for &b in m.free_cells().iter().step_by(7) {
                assert_eq!(t.distance(a, b), geodesic_oracle(&m, a, b));
                assert_eq!(t.distance(a, b), t.distance(b, a));
            }
        }
    }

    #[test]
    fn value_iteration_powers_of_gamma() {
        let m = GridMaze::open(3, 1);
        let q = value_iteration(&m, 0.9);
        let g = m.index_of(Cell::new(2, 0));
        let s = m.index_of(Cell::new(0, 0));
        let best = q[g][s].iter().cloned().fold(f64::MIN, f64::max);
        assert!((best - 0.9).abs() < 1e-15);
    }
}
