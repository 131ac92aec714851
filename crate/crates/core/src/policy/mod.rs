//! Execution policies and the rollout engine.
//!
//! All retrieval-driven policies pick their action as
//! `argmax_a Q(s_t, a, target)` where `target` is a state taken from a
//! retrieved or stitched buffer trajectory. The target is the first state
//! along that trajectory lying outside the `d_p`-ball of `s_t`.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::buffer::TrajectoryLog;
use crate::embed::EmbeddingIndex;
use crate::env::{Environment, Observation};
use crate::error::{Error, Result};
use crate::per::{neighbors, retrieve_between, PerConfig};
use crate::planners::{plan_from, GoalLinks, Roadmap};
use crate::qlearn::QFunction;
use crate::util::{argmax, l2, same_bits};

/// How an action was chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepMode {
    /// Toward a state of a retrieved segment.
    Retrieved,
    /// Toward a state of a stitched roadmap plan.
    Planned,
    /// Retrieved trajectory stays inside the current neighborhood; acting
    /// toward the goal itself.
    GoalDirect,
    /// Retrieval failed; greedy Q toward the goal.
    Fallback,
    /// Roadmap query failed; single-segment retrieval used instead.
    PlanFallback,
    Greedy,
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub action: usize,
    pub mode: StepMode,
    /// Global buffer index of the local target, if any.
    pub target: Option<usize>,
}

/// `argmax_a Q(s, a, g)`, ties to the lowest action.
pub fn greedy_q_step<Q: QFunction + ?Sized>(q: &Q, s: &[f32], g: &[f32]) -> usize {
    argmax(&q.q_values(s, g))
}

/// The models a retrieval policy reads.
#[derive(Clone, Copy)]
pub struct Memory<'a> {
    pub log: &'a TrajectoryLog,
    pub index: &'a EmbeddingIndex,
    pub q: &'a dyn QFunction,
    pub per: &'a PerConfig,
}

impl Memory<'_> {
    /// First state of `states` (global indices) outside the `d_p`-ball of
    /// `z_t` and not identical to `obs`.
    fn local_target(&self, obs: &[f32], z_t: &[f64], states: impl IntoIterator<Item = usize>) -> Option<usize> {
        states
            .into_iter()
            .find(|&k| l2(self.index.row(k), z_t) > self.per.d_p && !same_bits(self.log.state(k), obs))
    }

    fn toward(&self, obs: &[f32], target: usize, mode: StepMode) -> StepInfo {
        StepInfo {
            action: greedy_q_step(self.q, obs, self.log.state(target)),
            mode,
            target: Some(target),
        }
    }

    fn direct(&self, obs: &[f32], goal: &[f32], mode: StepMode) -> StepInfo {
        StepInfo {
            action: greedy_q_step(self.q, obs, goal),
            mode,
            target: None,
        }
    }

    fn pi_m(&self, obs: &[f32], goal: &[f32], near_goal: &[usize]) -> StepInfo {
        let z_t = self.index.embed(obs);
        let near_t = neighbors(self.index, &z_t, self.per.d_p);
        match retrieve_between(self.log, &near_t, near_goal, self.per) {
            None => self.direct(obs, goal, StepMode::Fallback),
            Some(seg) => match self.local_target(obs, &z_t, seg.state_indices()) {
                Some(t) => self.toward(obs, t, StepMode::Retrieved),
                None => self.direct(obs, goal, StepMode::GoalDirect),
            },
        }
    }
}

/// One step of the local retrieval policy `π_M`.
pub fn pi_m_step(memory: &Memory<'_>, s_t: &[f32], s_g: &[f32]) -> StepInfo {
    let near_goal = neighbors(memory.index, &memory.index.embed(s_g), memory.per.d_p);
    memory.pi_m(s_t, s_g, &near_goal)
}

/// One step of the replanning policy `π_M*`.
pub fn pi_mstar_step(memory: &Memory<'_>, roadmap: &Roadmap, s_t: &[f32], s_g: &[f32]) -> Result<StepInfo> {
    let links = GoalLinks::new(roadmap, memory.log, memory.index, memory.per, s_g);
    let near_goal = neighbors(memory.index, &memory.index.embed(s_g), memory.per.d_p);
    let mut p = StitchPolicy::with_links(*memory, roadmap, 1, links, near_goal, s_g);
    p.act(s_t)
}

/// A closed-loop controller toward a fixed goal.
pub trait Policy {
    /// Starts a new rollout toward `goal`.
    fn reset(&mut self, goal: &[f32]) -> Result<()>;

    fn act(&mut self, obs: &[f32]) -> Result<StepInfo>;
}

pub struct GreedyQPolicy<'a> {
    q: &'a dyn QFunction,
    goal: Vec<f32>,
}

impl<'a> GreedyQPolicy<'a> {
    pub fn new(q: &'a dyn QFunction) -> Self {
        GreedyQPolicy { q, goal: Vec::new() }
    }
}

impl Policy for GreedyQPolicy<'_> {
    fn reset(&mut self, goal: &[f32]) -> Result<()> {
        self.goal = goal.to_vec();
        Ok(())
    }

    fn act(&mut self, obs: &[f32]) -> Result<StepInfo> {
        Ok(StepInfo {
            action: greedy_q_step(self.q, obs, &self.goal),
            mode: StepMode::Greedy,
            target: None,
        })
    }
}

/// `π_M`: retrieve a segment toward the goal at every step.
pub struct PerPolicy<'a> {
    memory: Memory<'a>,
    goal: Vec<f32>,
    near_goal: Vec<usize>,
}

impl<'a> PerPolicy<'a> {
    pub fn new(memory: Memory<'a>) -> Self {
        PerPolicy {
            memory,
            goal: Vec::new(),
            near_goal: Vec::new(),
        }
    }
}

impl Policy for PerPolicy<'_> {
    fn reset(&mut self, goal: &[f32]) -> Result<()> {
        self.goal = goal.to_vec();
        self.near_goal = neighbors(self.memory.index, &self.memory.index.embed(goal), self.memory.per.d_p);
        Ok(())
    }

    fn act(&mut self, obs: &[f32]) -> Result<StepInfo> {
        Ok(self.memory.pi_m(obs, &self.goal, &self.near_goal))
    }
}

/// `π_M*`: stitch a roadmap plan, replanning every `replan_every` steps;
/// between replans the target is the plan state `replan_every` steps in.
pub struct StitchPolicy<'a> {
    memory: Memory<'a>,
    roadmap: &'a Roadmap,
    replan_every: usize,
    goal: Vec<f32>,
    links: Option<GoalLinks>,
    near_goal: Vec<usize>,
    held: Option<(usize, usize)>,
}

impl<'a> StitchPolicy<'a> {
    pub fn new(memory: Memory<'a>, roadmap: &'a Roadmap, replan_every: usize) -> Self {
        StitchPolicy {
            memory,
            roadmap,
            replan_every: replan_every.max(1),
            goal: Vec::new(),
            links: None,
            near_goal: Vec::new(),
            held: None,
        }
    }

    fn with_links(
        memory: Memory<'a>,
        roadmap: &'a Roadmap,
        replan_every: usize,
        links: GoalLinks,
        near_goal: Vec<usize>,
        goal: &[f32],
    ) -> Self {
        StitchPolicy {
            links: Some(links),
            near_goal,
            goal: goal.to_vec(),
            ..Self::new(memory, roadmap, replan_every)
        }
    }
}

impl Policy for StitchPolicy<'_> {
    fn reset(&mut self, goal: &[f32]) -> Result<()> {
        let m = &self.memory;
        self.goal = goal.to_vec();
        self.links = Some(GoalLinks::new(self.roadmap, m.log, m.index, m.per, goal));
        self.near_goal = neighbors(m.index, &m.index.embed(goal), m.per.d_p);
        self.held = None;
        Ok(())
    }

    fn act(&mut self, obs: &[f32]) -> Result<StepInfo> {
        let m = self.memory;
        if let Some((target, left)) = self.held {
            if left > 0 && !same_bits(m.log.state(target), obs) {
                self.held = Some((target, left - 1));
                return Ok(m.toward(obs, target, StepMode::Planned));
            }
            self.held = None;
        }
        let links = self
            .links
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("policy used before reset".into()))?;
        let Some(plan) = plan_from(self.roadmap, m.log, m.index, m.per, obs, links)? else {
            let mut info = m.pi_m(obs, &self.goal, &self.near_goal);
            if info.mode == StepMode::Retrieved {
                info.mode = StepMode::PlanFallback;
            }
            return Ok(info);
        };
        let z_t = m.index.embed(obs);
        let states = plan.states();
        match m.local_target(obs, &z_t, states.iter().copied()) {
            None => Ok(m.direct(obs, &self.goal, StepMode::GoalDirect)),
            Some(t) => {
                if self.replan_every > 1 {
                    let pos = states.iter().position(|&s| s == t).expect("target from plan");
                    let held = states[(pos + self.replan_every - 1).min(states.len() - 1)];
                    self.held = Some((held, self.replan_every - 1));
                }
                Ok(m.toward(obs, t, StepMode::Planned))
            }
        }
    }
}

/// Uniformly random actions.
pub struct RandomPolicy {
    num_actions: usize,
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(num_actions: usize, seed: u64) -> Self {
        RandomPolicy {
            num_actions,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Policy for RandomPolicy {
    fn reset(&mut self, _goal: &[f32]) -> Result<()> {
        Ok(())
    }

    fn act(&mut self, _obs: &[f32]) -> Result<StepInfo> {
        Ok(StepInfo {
            action: self.rng.random_range(0..self.num_actions),
            mode: StepMode::Random,
            target: None,
        })
    }
}

/// A recorded rollout.
#[derive(Clone, Debug)]
pub struct RolloutResult<S> {
    pub success: bool,
    pub steps_taken: usize,
    pub goal: Observation,
    pub states: Vec<S>,
    pub observations: Vec<Observation>,
    pub actions: Vec<usize>,
    pub trace: Vec<StepInfo>,
}

impl<S> RolloutResult<S> {
    /// The rollout as a one-episode log.
    pub fn to_log(&self, num_actions: usize) -> Result<TrajectoryLog> {
        let dim = self.goal.dim();
        let mut log = TrajectoryLog::new(dim, num_actions);
        log.append_episode(&self.observations, &self.actions)?;
        Ok(log)
    }

    /// Number of steps that fell back from the intended retrieval mode.
    pub fn fallback_steps(&self) -> usize {
        self.trace
            .iter()
            .filter(|t| matches!(t.mode, StepMode::Fallback | StepMode::PlanFallback))
            .count()
    }

    /// JSON-lines trace: one object per step with the pre-step pose.
    pub fn write_trace<W: Write>(&self, mut out: W, pose: impl Fn(&S) -> [f64; 2]) -> Result<()> {
        for (k, info) in self.trace.iter().enumerate() {
            let line = serde_json::json!({
                "step": k,
                "action": info.action,
                "mode": info.mode,
                "target": info.target,
                "pose": pose(&self.states[k]),
            });
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

/// Runs `policy` from `start` toward `goal` for at most `budget` steps,
/// stopping as soon as `reached` holds.
pub fn execute<E: Environment, P: Policy + ?Sized>(
    env: &E,
    policy: &mut P,
    start: E::State,
    goal: &E::State,
    budget: usize,
    reached: impl Fn(&E::State) -> bool,
) -> Result<RolloutResult<E::State>> {
    if budget == 0 {
        return Err(Error::InvalidInput("rollout budget must be at least 1".into()));
    }
    let goal_obs = env.observe(goal);
    policy.reset(goal_obs.as_slice())?;
    let mut s = start;
    let mut result = RolloutResult {
        success: false,
        steps_taken: 0,
        goal: goal_obs,
        states: vec![s.clone()],
        observations: vec![env.observe(&s)],
        actions: Vec::new(),
        trace: Vec::new(),
    };
    loop {
        if reached(&s) {
            result.success = true;
            break;
        }
        if result.steps_taken == budget {
            break;
        }
        let obs = result.observations.last().expect("nonempty");
        let info = policy.act(obs.as_slice())?;
        let (next, _) = env.step(&s, info.action)?;
        s = next;
        result.actions.push(info.action);
        result.trace.push(info);
        result.observations.push(env.observe(&s));
        result.states.push(s.clone());
        result.steps_taken += 1;
    }
    Ok(result)
}

#[cfg(test)]
mod tests;
