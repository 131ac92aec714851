use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Environment;
use crate::buffer::TrajectoryLog;
use crate::error::{Error, Result};

/// A collected walk: the learner-facing log plus the hidden ground-truth
/// states it visited (`steps + 1` of them).
#[derive(Clone, Debug)]
pub struct Walk<S> {
    pub log: TrajectoryLog,
    pub states: Vec<S>,
}

/// Uniform random walk of `steps` transitions from a seeded start state, as
/// one continuous episode with no resets.
pub fn random_walk<E: Environment>(env: &E, steps: usize, seed: u64) -> Result<Walk<E::State>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = env.sample_state(&mut rng);
    walk_with(env, start, steps, &mut rng)
}

pub fn random_walk_from<E: Environment>(
    env: &E,
    start: E::State,
    steps: usize,
    seed: u64,
) -> Result<Walk<E::State>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    walk_with(env, start, steps, &mut rng)
}

fn walk_with<E: Environment, R: Rng>(
    env: &E,
    start: E::State,
    steps: usize,
    rng: &mut R,
) -> Result<Walk<E::State>> {
    if steps == 0 {
        return Err(Error::InvalidInput("random walk needs at least one step".into()));
    }
    let mut states = Vec::with_capacity(steps + 1);
    let mut obs = Vec::with_capacity(steps + 1);
    let mut actions = Vec::with_capacity(steps);
    let mut s = start;
    obs.push(env.observe(&s));
    states.push(s.clone());
    for _ in 0..steps {
        let a = rng.random_range(0..env.num_actions());
        let (next, _) = env.step(&s, a)?;
        s = next;
        actions.push(a);
        obs.push(env.observe(&s));
        states.push(s.clone());
    }
    let mut log = TrajectoryLog::new(env.obs_dim(), env.num_actions());
    log.append_episode(&obs, &actions)?;
    Ok(Walk { log, states })
}
