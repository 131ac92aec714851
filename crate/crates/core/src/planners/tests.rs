use std::collections::{HashMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::embed::{embed_all, Encoder};
use crate::env::{random_walk, GridEnv, GridMaze, ObsMode};
use crate::qlearn::TabularQ;

fn grid(side: usize, steps: usize, seed: u64) -> (TrajectoryLog, EmbeddingIndex) {
    let env = GridEnv::new(GridMaze::open(side, side), ObsMode::Identity, 0).unwrap();
    let log = random_walk(&env, steps, seed).unwrap().log;
    let index = embed_all(&Encoder::identity(2), &log);
    (log, index)
}

fn bellman_ford(g: &Graph, src: usize) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; g.len()];
    dist[src] = 0.0;
    for _ in 0..g.len() {
        for u in 0..g.len() {
            for &(v, c) in g.edges_from(u) {
                if dist[u] + c < dist[v] {
                    dist[v] = dist[u] + c;
                }
            }
        }
    }
    dist
}

#[test]
fn dijkstra_matches_bellman_ford() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..200 {
        let n = rng.random_range(1..=50);
        let mut g = Graph::new(n);
        for _ in 0..rng.random_range(0..4 * n) {
            g.add_edge(rng.random_range(0..n), rng.random_range(0..n), rng.random_range(0..10) as f64);
        }
        let src = rng.random_range(0..n);
        let dst = rng.random_range(0..n);
        let oracle = bellman_ford(&g, src)[dst];
        match shortest_path(&g, src, dst).unwrap() {
            None => assert!(oracle.is_infinite()),
            Some((path, cost)) => {
                assert_eq!(cost, oracle);
                assert_eq!((path[0], *path.last().unwrap()), (src, dst));
                let walked: f64 = path
                    .windows(2)
                    .map(|w| {
                        g.edges_from(w[0])
                            .iter()
                            .filter(|(v, _)| *v == w[1])
                            .map(|(_, c)| *c)
                            .fold(f64::INFINITY, f64::min)
                    })
                    .sum();
                assert_eq!(walked, cost);
            }
        }
    }
}

#[test]
fn vertex_sampling() {
    let mut one = TrajectoryLog::new(2, 4);
    one.append_episode(&[vec![0.0f32, 0.0].into(), vec![0.0f32, 0.0].into()], &[0]).unwrap();
    let index = embed_all(&Encoder::identity(2), &one);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10 {
        assert!(sample_vertex(&index, Sampling::Uniform, 1.0, &mut rng).unwrap() < 2);
    }

    let mut log = TrajectoryLog::new(2, 4);
    let states: Vec<crate::env::Observation> = (0..10).map(|x| vec![x as f32, 0.0].into()).collect();
    log.append_episode(&states, &[1; 9]).unwrap();
    let index = embed_all(&Encoder::identity(2), &log);
    let sampler = VertexSampler::new(&index, Sampling::Uniform, 1.0).unwrap();
    let mut counts = [0usize; 10];
    for _ in 0..10_000 {
        counts[sampler.sample(&mut rng)] += 1;
    }
    assert!(counts.iter().all(|&c| (c as f64 / 1e4 - 0.1).abs() <= 0.02), "{counts:?}");

    let (log, index) = grid(6, 2000, 3);
    let weights = visitation_counts(&index, 1.0);
    assert!(weights.iter().all(|&c| c >= 1));
    let weighted = VertexSampler::new(&index, Sampling::VisitationWeighted, 1.0).unwrap();
    for _ in 0..100 {
        assert!(weighted.sample(&mut rng) < log.num_states());
    }
}

#[test]
fn coincident_vertices_get_zero_length_edges() {
    let (log, index) = grid(5, 300, 2);
    let per = PerConfig::new(0.5, 20);
    let cfg = PlannerConfig { r: 0.0, ..PlannerConfig::default() };
    let rm = rprm_from_vertices(&log, &index, &per, &cfg, vec![7, 7]).unwrap();
    assert_eq!(rm.num_edges(), 2);
    assert!(rm.edges.iter().all(|e| e.segment.unwrap().is_empty() && e.cost == 0.0));

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let rm = rprm_build(&log, &index, &per, &PlannerConfig { r: 0.0, num_vertices: 60, ..cfg }, &mut rng).unwrap();
    for e in &rm.edges {
        assert_eq!(log.state(rm.vertices[e.from]), log.state(rm.vertices[e.to]));
    }
}

fn connected(rm: &Roadmap) -> bool {
    let n = rm.num_vertices();
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    while let Some(u) = queue.pop_front() {
        for e in rm.edges_from(u) {
            if !seen[e.to] {
                seen[e.to] = true;
                queue.push_back(e.to);
            }
        }
    }
    seen.iter().all(|&s| s)
}

#[test]
fn dense_roadmap_on_open_grid_is_connected_and_sound() {
    let (log, index) = grid(10, 20_000, 4);
    let per = PerConfig::new(0.5, 20);
    let cfg = PlannerConfig { r: 5.0, num_vertices: 150, ..PlannerConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let rm = rprm_build(&log, &index, &per, &cfg, &mut rng).unwrap();
    rm.verify(&log, &index).unwrap();
    assert!(connected(&rm));
    let unfiltered = rprm_from_vertices(&log, &index, &per, &PlannerConfig { prefilter: false, ..cfg }, rm.vertices.clone()).unwrap();
    assert_eq!(unfiltered.edges, rm.edges);
}

#[test]
fn roadmap_bytes_round_trip() {
    let (log, index) = grid(6, 2000, 2);
    let per = PerConfig::new(0.5, 20);
    let cfg = PlannerConfig { r: 4.0, num_vertices: 40, ..PlannerConfig::default() };
    let rm = rprm_build(&log, &index, &per, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let bytes = rm.to_bytes();
    assert_eq!(Roadmap::from_bytes(&bytes).unwrap(), rm);
    assert!(Roadmap::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(Roadmap::from_bytes(&bad).is_err());
}

#[test]
fn query_degenerate_and_chain_cases() {
    let (log, index) = grid(8, 5000, 6);
    let per = PerConfig::new(0.5, 20);
    let cfg = PlannerConfig { r: 4.0, num_vertices: 40, ..PlannerConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let rm = rprm_build(&log, &index, &per, &cfg, &mut rng).unwrap();
    let s = log.state(rm.vertices[0]).to_vec();
    let plan = rprm_query(&rm, &log, &index, &per, &s, &s).unwrap().unwrap();
    assert_eq!(plan.total_len, 0);

    let far_a = [0.0f32, 0.0];
    let far_b = [7.0f32, 7.0];
    let plan = rprm_query(&rm, &log, &index, &per, &far_a, &far_b).unwrap().unwrap();
    assert_eq!(plan.total_len, plan.segments.iter().map(|s| s.len()).sum::<usize>());
    assert_eq!(plan.total_cost, plan.total_len as f64);
    assert_eq!(plan.segments.len(), plan.waypoints.len() + 1);
    for (k, seg) in plan.segments.iter().enumerate() {
        if k > 0 {
            let prev_end = plan.segments[k - 1].last_state();
            assert!(index.distance(prev_end, seg.first_state) <= 2.0 * per.d_p);
        }
    }
    assert_eq!(plan.states().len(), plan.total_len + plan.segments.len());
}

#[test]
fn query_cost_is_optimal_over_small_roadmaps() {
    let (log, index) = grid(6, 3000, 8);
    let per = PerConfig::new(0.5, 20);
    let cfg = PlannerConfig { r: 3.0, num_vertices: 8, ..PlannerConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let rm = rprm_build(&log, &index, &per, &cfg, &mut rng).unwrap();
        let a = log.state(rng.random_range(0..log.num_states())).to_vec();
        let b = log.state(rng.random_range(0..log.num_states())).to_vec();
        let got = rprm_query(&rm, &log, &index, &per, &a, &b).unwrap().map(|p| p.total_cost);
        assert_eq!(got, brute_force_cost(&rm, &log, &index, &per, &a, &b));
    }
}

/// Exhaustive simple-path enumeration over the augmented roadmap.
fn brute_force_cost(rm: &Roadmap, log: &TrajectoryLog, index: &EmbeddingIndex, per: &PerConfig, a: &[f32], b: &[f32]) -> Option<f64> {
    let n = rm.num_vertices();
    let za = index.embed(a);
    let zb = index.embed(b);
    let near_a = crate::per::neighbors(index, &za, per.d_p);
    let near_b = crate::per::neighbors(index, &zb, per.d_p);
    let link = |x: &[usize], y: &[usize]| {
        crate::per::retrieve_between(log, x, y, per).filter(|s| s.len() as f64 <= rm.r).map(|s| s.len() as f64)
    };
    let mut cost: HashMap<(usize, usize), f64> = HashMap::new();
    let mut put = |u: usize, v: usize, c: f64| {
        let e = cost.entry((u, v)).or_insert(c);
        *e = e.min(c);
    };
    for e in &rm.edges {
        put(e.from, e.to, e.cost);
    }
    for v in 0..n {
        if let Some(c) = link(&near_a, rm.near(v)) {
            put(n, v, c);
        }
        if let Some(c) = link(rm.near(v), &near_b) {
            put(v, n + 1, c);
        }
    }
    if let Some(c) = link(&near_a, &near_b) {
        put(n, n + 1, c);
    }
    fn dfs(u: usize, goal: usize, acc: f64, used: &mut Vec<bool>, cost: &HashMap<(usize, usize), f64>, best: &mut Option<f64>) {
        if u == goal {
            *best = Some(best.map_or(acc, |b| b.min(acc)));
            return;
        }
        for v in 0..used.len() {
            if let Some(&c) = cost.get(&(u, v)) {
                if !used[v] {
                    used[v] = true;
                    dfs(v, goal, acc + c, used, cost, best);
                    used[v] = false;
                }
            }
        }
    }
    let mut best = None;
    let mut used = vec![false; n + 2];
    used[n] = true;
    dfs(n, n + 1, 0.0, &mut used, &cost, &mut best);
    best
}

#[test]
fn rrt_trees_are_sound_and_star_costs_dominate() {
    let (log, index) = grid(10, 20_000, 10);
    let per = PerConfig::new(0.5, 20);
    let cfg = PlannerConfig { r: 4.0, iterations: 200, ..PlannerConfig::default() };
    let rrt = rrt_build(&log, &index, &per, &cfg, 0, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
    let star = rrt_star_build(&log, &index, &per, &cfg, 0, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
    for tree in [&rrt, &star] {
        tree.verify(&log, &index).unwrap();
        assert!(tree.len() > 20);
        let costs = tree.costs_from_root(&per).expect("acyclic");
        for (node, c) in tree.nodes.iter().zip(&costs) {
            assert_eq!(node.cost, *c);
        }
    }
    let rrt_cost: HashMap<usize, f64> = rrt.nodes.iter().map(|n| (n.state, n.cost)).collect();
    let shared: Vec<(f64, f64)> = star
        .nodes
        .iter()
        .filter_map(|n| rrt_cost.get(&n.state).map(|&c| (n.cost, c)))
        .collect();
    assert!(!shared.is_empty());
    let better = shared.iter().filter(|(s, r)| s <= r).count();
    assert!(better as f64 >= 0.9 * shared.len() as f64, "{better}/{}", shared.len());
}

#[test]
fn single_node_tree_has_zero_cost() {
    let (log, index) = grid(5, 100, 12);
    let per = PerConfig::new(0.5, 20);
    let cfg = PlannerConfig { iterations: 0, ..PlannerConfig::default() };
    let tree = rrt_star_build(&log, &index, &per, &cfg, 3, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(tree.len(), 1);
    assert_eq!(tree.nodes[0].cost, 0.0);
}

#[test]
fn baseline_threshold_behaviour() {
    let (log, index) = grid(6, 3000, 13);
    let mut q = TabularQ::for_log(&log, 0.95).unwrap();
    q.fit_sweeps(&log, 200).unwrap();
    let cfg = PlannerConfig { num_vertices: 30, ..PlannerConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let rm = baseline_q_roadmap(&log, &index, &q, 0.0, &cfg, &mut rng).unwrap();
    for e in &rm.edges {
        assert_eq!(log.state(rm.vertices[e.from]), log.state(rm.vertices[e.to]));
    }
    let dq = pairwise_dq(&log, &q, &rm.vertices);
    for target in [0.0, 2.0, 5.0] {
        let t = degree_matched_threshold(&dq, 30, target);
        let deg = q_threshold_roadmap(rm.vertices.clone(), &dq, t, cfg.r).mean_degree();
        assert!((deg - target).abs() <= 1.5, "target {target} got {deg}");
    }
}
