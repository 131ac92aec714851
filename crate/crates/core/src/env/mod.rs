//! Deterministic desk-scale environments.
//!
//! Two families are provided: a 4-connected grid maze ([`GridEnv`]) and a
//! continuous point mass with wall segments ([`PointMassEnv`]). Both hide
//! their ground-truth state behind an observation lifting map; learners only
//! ever see [`Observation`] vectors.
//!
//! [`oracle`] holds ground-truth geometry (BFS distances, observation
//! decoding). It exists for tests and evaluation only.

mod grid;
mod observe;
pub mod oracle;
mod point_mass;
mod walk;

pub use grid::{Cell, Direction, GridEnv, GridMaze};
pub use observe::{GridObserver, ObsMode};
pub use point_mass::{MassState, PointMassEnv, PointMassSpec};
pub use walk::{random_walk, random_walk_from, Walk};

use rand::Rng;

use crate::error::Result;

/// An observation as seen by the learner.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation(pub Vec<f32>);

impl Observation {
    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

impl From<Vec<f32>> for Observation {
    fn from(v: Vec<f32>) -> Self {
        Observation(v)
    }
}

/// A deterministic environment with a discrete action set.
///
/// Environments are value objects: `step` is a pure function of
/// `(state, action)`, so one instance can be shared across rollouts.
pub trait Environment: Send + Sync {
    type State: Clone + PartialEq + std::fmt::Debug + Send + Sync;

    fn num_actions(&self) -> usize;

    fn obs_dim(&self) -> usize;

    /// Advance one step. Returns the next state and whether the move was
    /// (partially) blocked.
    fn step(&self, state: &Self::State, action: usize) -> Result<(Self::State, bool)>;

    fn observe(&self, state: &Self::State) -> Observation;

    /// Draw a valid start state.
    fn sample_state<R: Rng + ?Sized>(&self, rng: &mut R) -> Self::State;
}
