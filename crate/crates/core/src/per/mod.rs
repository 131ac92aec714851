//! Perceptual experience retrieval over the embedding index.
//!
//! Given a current state `s_c` and goal `s_g`, retrieval returns the best
//! contiguous buffer segment `τ_ij` (same episode, `i ≤ j ≤ i + L_max`)
//! whose first state lies within `d_p` of `s_c` and whose last state lies
//! within `d_p` of `s_g`, in embedding space.

use std::sync::Arc;

use serde::Serialize;

use crate::buffer::{Segment, TrajectoryLog};
use crate::embed::EmbeddingIndex;
use crate::error::{Error, Result};
use crate::util::l2;

/// The segment reward `R(τ)`.
#[derive(Clone, Debug, PartialEq)]
pub enum RewardMode {
    /// `R(τ) = −len(τ)`.
    NegLength,
    /// `R(τ)` is the sum of per-transition rewards (indexed by global
    /// transition), stored as prefix sums.
    Custom(Arc<Vec<f64>>),
}

impl RewardMode {
    /// Builds a custom reward from one value per global transition.
    pub fn per_step(log: &TrajectoryLog, rewards: &[f64]) -> Result<Self> {
        if rewards.len() != log.total_steps() {
            return Err(Error::InvalidInput(format!(
                "{} rewards for {} transitions",
                rewards.len(),
                log.total_steps()
            )));
        }
        let mut prefix = Vec::with_capacity(rewards.len() + 1);
        prefix.push(0.0);
        let mut acc = 0.0;
        for r in rewards {
            acc += r;
            prefix.push(acc);
        }
        Ok(RewardMode::Custom(Arc::new(prefix)))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PerConfig {
    pub d_p: f64,
    pub l_max: usize,
    pub reward: RewardMode,
}

impl PerConfig {
    pub fn new(d_p: f64, l_max: usize) -> Self {
        PerConfig {
            d_p,
            l_max,
            reward: RewardMode::NegLength,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.d_p > 0.0) || self.l_max == 0 {
            return Err(Error::Config(format!(
                "retrieval needs d_p > 0 and L_max ≥ 1 (got {}, {})",
                self.d_p, self.l_max
            )));
        }
        Ok(())
    }

    /// `R(τ)` for a segment of `log`.
    pub fn reward(&self, seg: &Segment) -> f64 {
        match &self.reward {
            RewardMode::NegLength => -(seg.len() as f64),
            RewardMode::Custom(prefix) => {
                let t0 = seg.first_state - seg.episode;
                prefix[t0 + seg.len()] - prefix[t0]
            }
        }
    }
}

/// Global indices of all states within `d_p` of `z`, ascending.
///
/// The scan runs over distinct embedding rows; every state sharing a
/// qualifying row is returned.
pub fn neighbors(index: &EmbeddingIndex, z: &[f64], d_p: f64) -> Vec<usize> {
    let mut out: Vec<usize> = index
        .groups()
        .iter()
        .filter(|g| l2(index.row(g.representative), z) <= d_p)
        .flat_map(|g| g.members.iter().copied())
        .collect();
    out.sort_unstable();
    out
}

/// `|N_dp(z)|`.
pub fn visitation_count(index: &EmbeddingIndex, z: &[f64], d_p: f64) -> usize {
    index
        .groups()
        .iter()
        .filter(|g| l2(index.row(g.representative), z) <= d_p)
        .map(|g| g.members.len())
        .sum()
}

/// Best segment from a state in `near_c` to a state in `near_g` (both
/// ascending global state indices). Ties go to the lowest start index,
/// then the lowest end index.
pub fn retrieve_between(
    log: &TrajectoryLog,
    near_c: &[usize],
    near_g: &[usize],
    cfg: &PerConfig,
) -> Option<Segment> {
    let (i, j) = match &cfg.reward {
        RewardMode::NegLength => shortest_pair(log, near_c, near_g, cfg.l_max)?,
        RewardMode::Custom(prefix) => best_reward_pair(log, near_c, near_g, cfg.l_max, prefix)?,
    };
    Some(log.segment_between(i, j).expect("pair lies in one episode"))
}

fn episode_of(log: &TrajectoryLog, state: usize) -> usize {
    log.locate_state(state).expect("state in range").0
}

fn shortest_pair(log: &TrajectoryLog, near_c: &[usize], near_g: &[usize], l_max: usize) -> Option<(usize, usize)> {
    let mut best: Option<(usize, usize, usize)> = None;
    let mut p = 0;
    for &j in near_g {
        while p < near_c.len() && near_c[p] <= j {
            p += 1;
        }
        let Some(&i) = p.checked_sub(1).map(|k| &near_c[k]) else {
            continue;
        };
        let len = j - i;
        if len > l_max || episode_of(log, i) != episode_of(log, j) {
            continue;
        }
        if best.is_none_or(|(bl, bi, _)| (len, i) < (bl, bi)) {
            best = Some((len, i, j));
        }
    }
    best.map(|(_, i, j)| (i, j))
}

fn best_reward_pair(
    log: &TrajectoryLog,
    near_c: &[usize],
    near_g: &[usize],
    l_max: usize,
    prefix: &[f64],
) -> Option<(usize, usize)> {
    let mut best: Option<(f64, usize, usize)> = None;
    for &j in near_g {
        let e = episode_of(log, j);
        let ep_start = log.episodes()[e].state_start;
        let lo = j.saturating_sub(l_max).max(ep_start);
        let from = near_c.partition_point(|&i| i < lo);
        for &i in near_c[from..].iter().take_while(|&&i| i <= j) {
            let r = prefix[j - e] - prefix[i - e];
            let better = match best {
                None => true,
                Some((br, bi, bj)) => r > br || (r == br && (i, j) < (bi, bj)),
            };
            if better {
                best = Some((r, i, j));
            }
        }
    }
    best.map(|(_, i, j)| (i, j))
}

/// Retrieval for query embeddings `zc`, `zg`.
pub fn retrieve_z(
    index: &EmbeddingIndex,
    log: &TrajectoryLog,
    zc: &[f64],
    zg: &[f64],
    cfg: &PerConfig,
) -> Option<Segment> {
    retrieve_between(log, &neighbors(index, zc, cfg.d_p), &neighbors(index, zg, cfg.d_p), cfg)
}

/// Retrieval for query observations.
pub fn retrieve(
    index: &EmbeddingIndex,
    log: &TrajectoryLog,
    s_c: &[f32],
    s_g: &[f32],
    cfg: &PerConfig,
) -> Option<Segment> {
    retrieve_z(index, log, &index.embed(s_c), &index.embed(s_g), cfg)
}

/// `len(τ_M(s_c, s_g))`, or `+∞` when nothing qualifies.
pub fn segment_len_metric(
    index: &EmbeddingIndex,
    log: &TrajectoryLog,
    s_c: &[f32],
    s_g: &[f32],
    cfg: &PerConfig,
) -> f64 {
    retrieve(index, log, s_c, s_g, cfg).map_or(f64::INFINITY, |s| s.len() as f64)
}

/// A human-readable account of one retrieval.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RetrievalTrace {
    pub near_current: usize,
    pub near_goal: usize,
    pub chosen: Option<(usize, usize)>,
    pub episode: Option<usize>,
    pub len: Option<usize>,
    pub reward: Option<f64>,
}

pub fn probe(index: &EmbeddingIndex, log: &TrajectoryLog, s_c: &[f32], s_g: &[f32], cfg: &PerConfig) -> RetrievalTrace {
    let nc = neighbors(index, &index.embed(s_c), cfg.d_p);
    let ng = neighbors(index, &index.embed(s_g), cfg.d_p);
    let seg = retrieve_between(log, &nc, &ng, cfg);
    RetrievalTrace {
        near_current: nc.len(),
        near_goal: ng.len(),
        chosen: seg.map(|s| (s.first_state, s.last_state())),
        episode: seg.map(|s| s.episode),
        len: seg.map(|s| s.len()),
        reward: seg.map(|s| cfg.reward(&s)),
    }
}

#[cfg(test)]
mod tests;
