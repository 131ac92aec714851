use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::embed::{embed_all, Encoder};
use crate::env::Observation;

fn random_log(seed: u64, episodes: usize, max_len: usize) -> TrajectoryLog {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut log = TrajectoryLog::new(2, 4);
    for _ in 0..episodes {
        let len = rng.random_range(1..=max_len);
        let states: Vec<Observation> = (0..=len)
            .map(|_| Observation(vec![rng.random_range(0..6) as f32, rng.random_range(0..6) as f32]))
            .collect();
        let actions: Vec<usize> = (0..len).map(|_| rng.random_range(0..4)).collect();
        log.append_episode(&states, &actions).unwrap();
    }
    log
}

fn brute_force(index: &EmbeddingIndex, log: &TrajectoryLog, zc: &[f64], zg: &[f64], cfg: &PerConfig) -> Option<(usize, usize)> {
    let mut best: Option<(f64, usize, usize)> = None;
    for e in log.episodes() {
        for i in e.state_start..=e.state_start + e.len {
            for j in i..=e.state_start + e.len {
                if j - i > cfg.l_max || l2(index.row(i), zc) > cfg.d_p || l2(index.row(j), zg) > cfg.d_p {
                    continue;
                }
                let r = cfg.reward(&log.segment_between(i, j).unwrap());
                if best.is_none_or(|(br, bi, bj)| r > br || (r == br && (i, j) < (bi, bj))) {
                    best = Some((r, i, j));
                }
            }
        }
    }
    best.map(|(_, i, j)| (i, j))
}

#[test]
fn self_query_at_zero_radius() {
    let log = random_log(1, 3, 20);
    let index = embed_all(&Encoder::identity(2), &log);
    let near = neighbors(&index, index.row(5), 0.0);
    assert!(near.contains(&5));
    assert_eq!(visitation_count(&index, index.row(5), 0.0), near.len());
}

#[test]
fn unit_radius_on_grid_is_four_neighborhood() {
    let mut log = TrajectoryLog::new(2, 4);
    let states: Vec<Observation> = (0..5)
        .flat_map(|x| (0..5).map(move |y| Observation(vec![x as f32, y as f32])))
        .collect();
    let actions = vec![0; states.len() - 1];
    log.append_episode(&states, &actions).unwrap();
    let index = embed_all(&Encoder::identity(2), &log);
    let near = neighbors(&index, &[2.0, 2.0], 1.0);
    let cells: Vec<&[f32]> = near.iter().map(|&i| log.state(i)).collect();
    assert_eq!(cells.len(), 5);
    assert!(cells.contains(&[2.0f32, 3.0].as_slice()));
    assert_eq!(visitation_count(&embed_all(&Encoder::identity(2), &TrajectoryLog::new(2, 4)), &[0.0, 0.0], 1.0), 0);
}

#[test]
fn same_query_gives_zero_length() {
    let log = random_log(2, 2, 30);
    let index = embed_all(&Encoder::identity(2), &log);
    let z = index.row(10).to_vec();
    let seg = retrieve_z(&index, &log, &z, &z, &PerConfig::new(0.1, 20)).unwrap();
    assert!(seg.is_empty());
}

#[test]
fn straight_walk_returns_whole_walk() {
    let mut log = TrajectoryLog::new(2, 4);
    let states: Vec<Observation> = (0..=10).map(|x| Observation(vec![x as f32, 0.0])).collect();
    log.append_episode(&states, &[1; 10]).unwrap();
    let index = embed_all(&Encoder::identity(2), &log);
    let cfg = PerConfig { d_p: 1e-9, l_max: 10, reward: RewardMode::NegLength };
    let seg = retrieve(&index, &log, &[0.0, 0.0], &[10.0, 0.0], &cfg).unwrap();
    assert_eq!((seg.start, seg.end, seg.len()), (0, 10, 10));
    assert_eq!(segment_len_metric(&index, &log, &[0.0, 0.0], &[10.0, 0.0], &cfg), 10.0);
    let short = PerConfig { l_max: 9, ..cfg };
    assert_eq!(segment_len_metric(&index, &log, &[0.0, 0.0], &[10.0, 0.0], &short), f64::INFINITY);
}

#[test]
fn matches_brute_force_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for trial in 0..40 {
        let log = random_log(trial, rng.random_range(1..5), 60);
        let index = embed_all(&Encoder::identity(2), &log);
        let zc = [rng.random_range(0.0..6.0), rng.random_range(0.0..6.0)];
        let zg = [rng.random_range(0.0..6.0), rng.random_range(0.0..6.0)];
        let mut cfg = PerConfig::new(rng.random_range(0.3..2.0), rng.random_range(1..30));
        let got = retrieve_z(&index, &log, &zc, &zg, &cfg).map(|s| (s.first_state, s.last_state()));
        assert_eq!(got, brute_force(&index, &log, &zc, &zg, &cfg), "neg-length trial {trial}");
        let rewards: Vec<f64> = (0..log.total_steps()).map(|_| -(rng.random_range(0..3) as f64)).collect();
        cfg.reward = RewardMode::per_step(&log, &rewards).unwrap();
        let got = retrieve_z(&index, &log, &zc, &zg, &cfg).map(|s| (s.first_state, s.last_state()));
        assert_eq!(got, brute_force(&index, &log, &zc, &zg, &cfg), "custom trial {trial}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn retrieval_is_sound_and_monotone_in_radius(seed in 0u64..1000, d_p in 0.2f64..2.0, grow in 0.0f64..1.5, l_max in 1usize..25) {
        let log = random_log(seed, 3, 40);
        let index = embed_all(&Encoder::identity(2), &log);
        let zc = index.row(seed as usize % index.len()).to_vec();
        let zg = index.row((seed as usize * 7 + 3) % index.len()).to_vec();
        let cfg = PerConfig::new(d_p, l_max);
        let wide = PerConfig::new(d_p + grow, l_max);
        let tight = retrieve_z(&index, &log, &zc, &zg, &cfg);
        if let Some(s) = tight {
            prop_assert!(l2(index.row(s.first_state), &zc) <= d_p);
            prop_assert!(l2(index.row(s.last_state()), &zg) <= d_p);
            prop_assert!(s.len() <= l_max);
            prop_assert_eq!(log.segment_between(s.first_state, s.last_state()).unwrap(), s);
        }
        let lt = tight.map_or(f64::INFINITY, |s| s.len() as f64);
        let lw = retrieve_z(&index, &log, &zc, &zg, &wide).map_or(f64::INFINITY, |s| s.len() as f64);
        prop_assert!(lw <= lt);
    }
}

#[test]
fn neighbors_match_naive_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..20 {
        let log = random_log(100 + trial, 4, 80);
        let index = embed_all(&Encoder::identity(2), &log);
        let z = [rng.random_range(-1.0..7.0), rng.random_range(-1.0..7.0)];
        let d_p = rng.random_range(0.0..3.0);
        let naive: Vec<usize> = (0..index.len()).filter(|&i| l2(index.row(i), &z) <= d_p).collect();
        assert_eq!(neighbors(&index, &z, d_p), naive);
        assert_eq!(visitation_count(&index, &z, d_p), naive.len());
    }
}
