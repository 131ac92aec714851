use std::collections::HashSet;

use palmer::env::oracle::ObsDecoder;
use palmer::env::{random_walk, Cell, Environment, GridEnv, GridMaze, ObsMode};

#[test]
fn long_walk_covers_an_open_grid() {
    let env = GridEnv::new(GridMaze::open(10, 10), ObsMode::Identity, 0).unwrap();
    let walk = random_walk(&env, 20_000, 0).unwrap();
    let seen: HashSet<Cell> = walk.states.iter().copied().collect();
    assert_eq!(seen.len(), 100);
}

#[test]
fn logged_observations_match_hidden_states() {
    for mode in [ObsMode::Identity, ObsMode::OneHot, ObsMode::RandomFeatures { dim: 16 }] {
        let env = GridEnv::new(GridMaze::rooms(9, 9).unwrap(), mode, 7).unwrap();
        let walk = random_walk(&env, 2000, 1).unwrap();
        let decoder = ObsDecoder::new(&env);
        assert_eq!(walk.states.len(), walk.log.num_states());
        for (k, s) in walk.states.iter().enumerate() {
            assert_eq!(decoder.decode(walk.log.state(k)), Some(*s));
        }
        for t in 0..walk.log.total_steps() {
            let (next, _) = env.step(&walk.states[t], walk.log.action(t)).unwrap();
            assert_eq!(next, walk.states[t + 1]);
        }
    }
}

#[test]
fn walks_are_seed_deterministic() {
    let env = GridEnv::new(GridMaze::clover(12, 0.05, 2).unwrap(), ObsMode::Identity, 0).unwrap();
    let a = random_walk(&env, 500, 9).unwrap();
    let b = random_walk(&env, 500, 9).unwrap();
    let c = random_walk(&env, 500, 10).unwrap();
    assert_eq!(a.states, b.states);
    assert_ne!(a.states, c.states);
}
