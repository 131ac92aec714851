//! The replay buffer: episodic trajectory storage with global indexing.
//!
//! States are stored once per episode (`len + 1` states for `len`
//! transitions), so the contiguity invariant `next_obs(k) == obs(k+1)` holds
//! by construction for everything already in the log. Global state indices
//! run over all episodes in order; global transition indices likewise.

mod hindsight;
mod plog;

pub use hindsight::{sample_hindsight, HindsightMode, HindsightSample};
pub use plog::{PLOG_MAGIC, PLOG_VERSION};

use crate::env::Observation;
use crate::error::{Error, Result};
use crate::util::same_bits;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EpisodeMeta {
    pub id: usize,
    /// Global index of the episode's first state.
    pub state_start: usize,
    /// Global index of the episode's first transition.
    pub transition_start: usize,
    /// Number of transitions.
    pub len: usize,
}

/// A borrowed view of one stored transition.
#[derive(Clone, Copy, Debug)]
pub struct Transition<'a> {
    pub obs: &'a [f32],
    pub action: usize,
    pub next_obs: &'a [f32],
    pub episode_id: usize,
    pub step_index: usize,
    pub global_index: usize,
}

/// An owned transition, the unit accepted by [`TrajectoryLog::append_trajectory`].
#[derive(Clone, Debug, PartialEq)]
pub struct OwnedTransition {
    pub obs: Observation,
    pub action: usize,
    pub next_obs: Observation,
}

/// A contiguous slice `[start, end]` of one episode (`end - start`
/// transitions, `end - start + 1` states).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Segment {
    pub episode: usize,
    pub start: usize,
    pub end: usize,
    /// Global state index of `start`.
    pub first_state: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    pub fn last_state(&self) -> usize {
        self.first_state + self.len()
    }

    /// Global state indices covered by the segment, in order.
    pub fn state_indices(&self) -> std::ops::RangeInclusive<usize> {
        self.first_state..=self.last_state()
    }

    /// `self ∘ next` when `next` picks up exactly where `self` ends.
    pub fn then(&self, next: &Segment) -> Option<Segment> {
        (self.episode == next.episode && self.end == next.start).then_some(Segment {
            episode: self.episode,
            start: self.start,
            end: next.end,
            first_state: self.first_state,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryLog {
    obs_dim: usize,
    num_actions: usize,
    episodes: Vec<EpisodeMeta>,
    states: Vec<f32>,
    actions: Vec<u32>,
}

impl TrajectoryLog {
    pub fn new(obs_dim: usize, num_actions: usize) -> Self {
        TrajectoryLog {
            obs_dim,
            num_actions,
            episodes: Vec::new(),
            states: Vec::new(),
            actions: Vec::new(),
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn episodes(&self) -> &[EpisodeMeta] {
        &self.episodes
    }

    pub fn num_episodes(&self) -> usize {
        self.episodes.len()
    }

    /// Σ episode lengths.
    pub fn total_steps(&self) -> usize {
        self.actions.len()
    }

    /// `total_steps + num_episodes`.
    pub fn num_states(&self) -> usize {
        self.states.len() / self.obs_dim.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn state(&self, global: usize) -> &[f32] {
        &self.states[global * self.obs_dim..(global + 1) * self.obs_dim]
    }

    pub fn action(&self, global_transition: usize) -> usize {
        self.actions[global_transition] as usize
    }

    /// Episode position and step index of a global state.
    pub fn locate_state(&self, global: usize) -> Option<(usize, usize)> {
        let e = self.episodes.partition_point(|m| m.state_start <= global).checked_sub(1)?;
        let meta = &self.episodes[e];
        let step = global - meta.state_start;
        (step <= meta.len).then_some((e, step))
    }

    /// Episode position and step index of a global transition.
    pub fn locate_transition(&self, global: usize) -> Option<(usize, usize)> {
        let e = self
            .episodes
            .partition_point(|m| m.transition_start <= global)
            .checked_sub(1)?;
        let meta = &self.episodes[e];
        let step = global - meta.transition_start;
        (step < meta.len).then_some((e, step))
    }

    /// Global state index of the state following transition `global`.
    pub fn transition_states(&self, global: usize) -> (usize, usize) {
        let (e, step) = self.locate_transition(global).expect("transition in range");
        let s = self.episodes[e].state_start + step;
        (s, s + 1)
    }

    pub fn transition(&self, global: usize) -> Transition<'_> {
        let (e, step) = self.locate_transition(global).expect("transition in range");
        let s = self.episodes[e].state_start + step;
        Transition {
            obs: self.state(s),
            action: self.actions[global] as usize,
            next_obs: self.state(s + 1),
            episode_id: self.episodes[e].id,
            step_index: step,
            global_index: global,
        }
    }

    pub fn transitions(&self) -> impl Iterator<Item = Transition<'_>> + '_ {
        (0..self.total_steps()).map(move |t| self.transition(t))
    }

    /// Append an episode given as `len + 1` states and `len` actions.
    pub fn append_episode(&mut self, states: &[Observation], actions: &[usize]) -> Result<usize> {
        if states.len() != actions.len() + 1 {
            return Err(Error::InvalidInput(format!(
                "episode needs len+1 states: {} states for {} actions",
                states.len(),
                actions.len()
            )));
        }
        for s in states {
            if s.dim() != self.obs_dim {
                return Err(Error::InvalidInput(format!(
                    "observation dim {} != buffer dim {}",
                    s.dim(),
                    self.obs_dim
                )));
            }
        }
        if let Some(&a) = actions.iter().find(|&&a| a >= self.num_actions) {
            return Err(Error::InvalidInput(format!("action {a} out of range")));
        }
        let id = self.episodes.len();
        self.episodes.push(EpisodeMeta {
            id,
            state_start: self.num_states(),
            transition_start: self.total_steps(),
            len: actions.len(),
        });
        for s in states {
            self.states.extend_from_slice(&s.0);
        }
        self.actions.extend(actions.iter().map(|&a| a as u32));
        Ok(id)
    }

    /// Append a run of transitions as a new episode. The run must chain:
    /// `next_obs` of each transition equals `obs` of the next, bit for bit.
    pub fn append_trajectory(&mut self, transitions: &[OwnedTransition]) -> Result<usize> {
        if transitions.is_empty() {
            return Err(Error::InvalidInput("empty transition run".into()));
        }
        for (k, pair) in transitions.windows(2).enumerate() {
            if !same_bits(&pair[0].next_obs.0, &pair[1].obs.0) {
                return Err(Error::Discontinuous(k));
            }
        }
        let mut states = Vec::with_capacity(transitions.len() + 1);
        states.push(transitions[0].obs.clone());
        states.extend(transitions.iter().map(|t| t.next_obs.clone()));
        let actions: Vec<usize> = transitions.iter().map(|t| t.action).collect();
        self.append_episode(&states, &actions)
    }

    /// Copy every episode of `other` onto the end of this log.
    pub fn extend_from(&mut self, other: &TrajectoryLog) -> Result<()> {
        if other.obs_dim != self.obs_dim || other.num_actions != self.num_actions {
            return Err(Error::InvalidInput("buffer layouts differ".into()));
        }
        for meta in &other.episodes {
            let states: Vec<Observation> = (meta.state_start..=meta.state_start + meta.len)
                .map(|s| Observation(other.state(s).to_vec()))
                .collect();
            let actions: Vec<usize> = (meta.transition_start..meta.transition_start + meta.len)
                .map(|t| other.action(t))
                .collect();
            self.append_episode(&states, &actions)?;
        }
        Ok(())
    }

    /// The first `steps` transitions, cutting the last episode short.
    pub fn truncated(&self, steps: usize) -> Result<TrajectoryLog> {
        if steps > self.total_steps() {
            return Err(Error::InsufficientData {
                have: self.total_steps(),
                need: steps,
            });
        }
        let mut out = TrajectoryLog::new(self.obs_dim, self.num_actions);
        let mut remaining = steps;
        for meta in &self.episodes {
            if remaining == 0 {
                break;
            }
            let take = meta.len.min(remaining);
            let states: Vec<Observation> = (meta.state_start..=meta.state_start + take)
                .map(|s| Observation(self.state(s).to_vec()))
                .collect();
            let actions: Vec<usize> = (meta.transition_start..meta.transition_start + take)
                .map(|t| self.action(t))
                .collect();
            out.append_episode(&states, &actions)?;
            remaining -= take;
        }
        Ok(out)
    }

    /// Steps `i..=j` of episode `episode` (by position).
    pub fn segment(&self, episode: usize, i: usize, j: usize) -> Result<Segment> {
        let meta = self
            .episodes
            .get(episode)
            .ok_or_else(|| Error::OutOfRange(format!("episode {episode}")))?;
        if i > j {
            return Err(Error::OutOfRange(format!("segment start {i} after end {j}")));
        }
        if j > meta.len {
            return Err(Error::OutOfRange(format!(
                "segment end {j} beyond episode length {}",
                meta.len
            )));
        }
        Ok(Segment {
            episode,
            start: i,
            end: j,
            first_state: meta.state_start + i,
        })
    }

    /// Segment between two global state indices of the same episode.
    pub fn segment_between(&self, from: usize, to: usize) -> Result<Segment> {
        let (e1, i) = self
            .locate_state(from)
            .ok_or_else(|| Error::OutOfRange(format!("state {from}")))?;
        let (e2, j) = self
            .locate_state(to)
            .ok_or_else(|| Error::OutOfRange(format!("state {to}")))?;
        if e1 != e2 {
            return Err(Error::OutOfRange("states belong to different episodes".into()));
        }
        self.segment(e1, i, j)
    }

    pub fn segment_states<'a>(&'a self, seg: &Segment) -> impl Iterator<Item = &'a [f32]> + 'a {
        seg.state_indices().map(move |s| self.state(s))
    }

    pub fn segment_actions(&self, seg: &Segment) -> Vec<usize> {
        let t0 = self.episodes[seg.episode].transition_start + seg.start;
        (t0..t0 + seg.len()).map(|t| self.action(t)).collect()
    }

    /// Every state in `episode` as an owned observation list.
    pub fn episode_observations(&self, episode: usize) -> Vec<Observation> {
        let meta = self.episodes[episode];
        (meta.state_start..=meta.state_start + meta.len)
            .map(|s| Observation(self.state(s).to_vec()))
            .collect()
    }

    /// Checks that every `(obs, action, next_obs)` is consistent with
    /// `step`, which maps a state observation and action to the expected
    /// next observation.
    pub fn replay_check<F>(&self, mut step: F) -> Result<()>
    where
        F: FnMut(&[f32], usize) -> Option<Vec<f32>>,
    {
        for t in self.transitions() {
            match step(t.obs, t.action) {
                Some(next) if same_bits(&next, t.next_obs) => {}
                _ => return Err(Error::Discontinuous(t.global_index)),
            }
        }
        Ok(())
    }
}
