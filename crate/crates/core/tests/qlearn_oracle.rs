use palmer::buffer::TrajectoryLog;
use palmer::env::oracle::{value_iteration, GeodesicTable};
use palmer::env::{Cell, Environment, GridEnv, GridMaze, ObsMode};
use palmer::policy::{execute, GreedyQPolicy};
use palmer::qlearn::{step_distance, QFunction, TabularQ};
use proptest::prelude::*;

fn exhaustive_log(env: &GridEnv) -> TrajectoryLog {
    let mut log = TrajectoryLog::new(env.obs_dim(), 4);
    for &c in env.maze.free_cells() {
        for a in 0..4 {
            let (n, _) = env.step(&c, a).unwrap();
            log.append_episode(&[env.observe(&c), env.observe(&n)], &[a]).unwrap();
        }
    }
    log
}

fn fitted(env: &GridEnv) -> TabularQ {
    let log = exhaustive_log(env);
    let mut q = TabularQ::for_log(&log, 0.95).unwrap();
    q.fit_sweeps(&log, 10_000).unwrap();
    q
}

#[test]
fn corridor_values_are_powers_of_gamma() {
    let env = GridEnv::new(GridMaze::open(6, 1), ObsMode::Identity, 0).unwrap();
    let q = fitted(&env);
    let g = env.observe(&Cell::new(5, 0));
    for x in 0..5 {
        let s = env.observe(&Cell::new(x, 0));
        let v = q.q_values(s.as_slice(), g.as_slice());
        let want = 0.95f64.powi(4 - x);
        assert!((v[1] - want).abs() < 1e-12, "x={x}: {} vs {want}", v[1]);
        assert!((step_distance(&q, s.as_slice(), g.as_slice()) - (5 - x) as f64).abs() < 1e-9);
    }
}

#[test]
fn greedy_policy_follows_shortest_paths_in_rooms() {
    let env = GridEnv::new(GridMaze::rooms(9, 9).unwrap(), ObsMode::Identity, 0).unwrap();
    let q = fitted(&env);
    let table = GeodesicTable::new(&env.maze);
    let cells = env.maze.free_cells();
    for &s in cells.iter().step_by(3) {
        for &g in cells.iter().step_by(5) {
            let d = table.distance(s, g).unwrap();
            let mut p = GreedyQPolicy::new(&q);
            let r = execute(&env, &mut p, s, &g, d.max(1), |c| *c == g).unwrap();
            assert!(r.success, "{s:?} -> {g:?}");
            assert_eq!(r.steps_taken, d);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn tabular_fixed_point_equals_value_iteration(w in 2usize..7, h in 1usize..7, walls in prop::collection::vec((0i32..7, 0i32..7), 0..8)) {
        let blocked: Vec<Cell> = walls.into_iter().map(|(x, y)| Cell::new(x % w as i32, y % h as i32)).collect();
        let Ok(maze) = GridMaze::new(w, h, blocked) else { return Ok(()) };
        let env = GridEnv::new(maze, ObsMode::Identity, 0).unwrap();
        let q = fitted(&env);
        let vi = value_iteration(&env.maze, 0.95);
        for &s in env.maze.free_cells() {
            for &g in env.maze.free_cells() {
                let got = q.q_values(env.observe(&s).as_slice(), env.observe(&g).as_slice());
                let want = vi[env.maze.index_of(g)][env.maze.index_of(s)];
                for a in 0..4 {
                    prop_assert!((got[a] - want[a]).abs() < 1e-12);
                }
            }
        }
    }
}
