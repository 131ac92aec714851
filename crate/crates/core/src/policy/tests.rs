use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::embed::{embed_all, Encoder};
use crate::env::{random_walk, Cell, GridEnv, GridMaze, ObsMode};
use crate::planners::{rprm_build, PlannerConfig};
use crate::qlearn::TabularQ;

struct Fixture {
    env: GridEnv,
    log: TrajectoryLog,
    index: EmbeddingIndex,
    q: TabularQ,
    per: PerConfig,
}

fn fixture(side: usize, steps: usize) -> Fixture {
    let env = GridEnv::new(GridMaze::open(side, side), ObsMode::Identity, 0).unwrap();
    let log = random_walk(&env, steps, 3).unwrap().log;
    let index = embed_all(&Encoder::identity(2), &log);
    let mut q = TabularQ::for_log(&log, 0.95).unwrap();
    q.fit_sweeps(&log, 500).unwrap();
    Fixture {
        env,
        log,
        index,
        q,
        per: PerConfig::new(0.5, 20),
    }
}

impl Fixture {
    fn memory(&self) -> Memory<'_> {
        Memory {
            log: &self.log,
            index: &self.index,
            q: &self.q,
            per: &self.per,
        }
    }
}

#[test]
fn zero_budget_rejected() {
    let f = fixture(4, 200);
    let mut p = GreedyQPolicy::new(&f.q);
    let s = Cell::new(0, 0);
    assert!(execute(&f.env, &mut p, s, &s, 0, |c| *c == s).is_err());
}

#[test]
fn start_at_goal_takes_no_steps() {
    let f = fixture(4, 200);
    let mut p = PerPolicy::new(f.memory());
    let s = Cell::new(1, 1);
    let r = execute(&f.env, &mut p, s, &s, 5, |c| *c == s).unwrap();
    assert!(r.success);
    assert_eq!(r.steps_taken, 0);
    let log = r.to_log(4).unwrap();
    assert_eq!(log.num_states(), 1);
}

#[test]
fn retrieval_policies_reach_goals() {
    let f = fixture(6, 3000);
    let roadmap = rprm_build(
        &f.log,
        &f.index,
        &f.per,
        &PlannerConfig {
            num_vertices: 30,
            r: 4.0,
            ..PlannerConfig::default()
        },
        &mut ChaCha8Rng::seed_from_u64(0),
    )
    .unwrap();
    let pairs = [
        (Cell::new(0, 0), Cell::new(5, 5)),
        (Cell::new(5, 0), Cell::new(0, 4)),
        (Cell::new(2, 3), Cell::new(4, 1)),
    ];
    for (s, g) in pairs {
        let mut pm = PerPolicy::new(f.memory());
        let r = execute(&f.env, &mut pm, s, &g, 40, |c| *c == g).unwrap();
        assert!(r.success, "pi_m {s:?} -> {g:?}");
        for k in [1, 3] {
            let mut ps = StitchPolicy::new(f.memory(), &roadmap, k);
            let r = execute(&f.env, &mut ps, s, &g, 40, |c| *c == g).unwrap();
            assert!(r.success, "stitched k={k} {s:?} -> {g:?}");
            assert_eq!(r.trace.len(), r.steps_taken);
            assert_eq!(r.actions.len() + 1, r.observations.len());
        }
    }
}

#[test]
fn empty_neighborhood_falls_back_to_greedy() {
    let f = fixture(6, 300);
    let far = vec![100.0f32, 100.0];
    let info = pi_m_step(&f.memory(), &[0.0, 0.0], &far);
    assert_eq!(info.mode, StepMode::Fallback);
    assert_eq!(info.action, greedy_q_step(&f.q, &[0.0, 0.0], &far));
}

#[test]
fn local_target_leaves_current_neighborhood() {
    let f = fixture(6, 2000);
    let s = [1.0f32, 1.0];
    let g = [4.0f32, 4.0];
    let info = pi_m_step(&f.memory(), &s, &g);
    if let Some(t) = info.target {
        let z = f.index.embed(&s);
        assert!(crate::util::l2(f.index.row(t), &z) > f.per.d_p);
        assert!(!same_bits(f.log.state(t), &s));
    }
    assert_ne!(info.mode, StepMode::Fallback);
}

#[test]
fn random_policy_is_seeded() {
    let f = fixture(5, 100);
    let s = Cell::new(0, 0);
    let g = Cell::new(4, 4);
    let a = execute(&f.env, &mut RandomPolicy::new(4, 9), s, &g, 30, |c| *c == g).unwrap();
    let b = execute(&f.env, &mut RandomPolicy::new(4, 9), s, &g, 30, |c| *c == g).unwrap();
    assert_eq!(a.actions, b.actions);
    assert!(a.actions.iter().all(|&x| x < 4));
}

#[test]
fn trace_is_json_lines() {
    let f = fixture(5, 1000);
    let s = Cell::new(0, 0);
    let g = Cell::new(3, 2);
    let r = execute(&f.env, &mut PerPolicy::new(f.memory()), s, &g, 20, |c| *c == g).unwrap();
    let mut buf = Vec::new();
    r.write_trace(&mut buf, |c| [c.x as f64, c.y as f64]).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), r.steps_taken);
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["action"].as_u64().unwrap() < 4);
        assert!(v["mode"].is_string());
    }
}
