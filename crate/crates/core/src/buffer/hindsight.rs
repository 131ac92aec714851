use rand::Rng;
use rand_distr::{Distribution, Geometric};

use super::TrajectoryLog;
use crate::error::{Error, Result};

/// How the goal offset `T` is drawn for hindsight relabelling.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HindsightMode {
    /// `T ~ Geom(p)` on `{1, 2, ...}`; used for Q-learning.
    Geometric { p: f64 },
    /// Half the time `T ~ U{0..=t_max}`, otherwise `T ~ U{t_max+1..=remaining}`;
    /// used for encoder training.
    Mixed { t_max: usize },
}

/// A relabelled sample `(s_t, a_t, s_{t+1}, s_g = s_{t+T})`, all as global
/// indices into the log.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HindsightSample {
    pub transition: usize,
    pub state: usize,
    pub action: usize,
    pub next_state: usize,
    pub goal_state: usize,
    pub offset: usize,
}

const MAX_ATTEMPTS: usize = 100_000;

/// Draw one hindsight sample. Goals never leave the source episode; draws
/// whose goal would fall past the episode end are rejected and redrawn.
pub fn sample_hindsight<R: Rng + ?Sized>(
    log: &TrajectoryLog,
    mode: HindsightMode,
    rng: &mut R,
) -> Result<HindsightSample> {
    if log.total_steps() == 0 {
        return Err(Error::EmptyLog);
    }
    if log.episodes().iter().all(|e| e.len < 2) {
        return Err(Error::InvalidInput(
            "hindsight sampling needs an episode of at least 2 steps".into(),
        ));
    }
    let geom = match mode {
        HindsightMode::Geometric { p } => {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::InvalidInput(format!("geometric p={p} not in (0,1]")));
            }
            Some(Geometric::new(p).map_err(|e| Error::InvalidInput(e.to_string()))?)
        }
        HindsightMode::Mixed { .. } => None,
    };
    for _ in 0..MAX_ATTEMPTS {
        let t = rng.random_range(0..log.total_steps());
        let (e, step) = log.locate_transition(t).expect("in range");
        let meta = log.episodes()[e];
        let remaining = meta.len - step;
        let offset = match (mode, &geom) {
            (HindsightMode::Geometric { .. }, Some(g)) => 1 + g.sample(rng) as usize,
            (HindsightMode::Mixed { t_max }, _) => {
                if rng.random_bool(0.5) {
                    rng.random_range(0..=t_max)
                } else {
                    if remaining <= t_max {
                        continue;
                    }
                    rng.random_range(t_max + 1..=remaining)
                }
            }
            _ => unreachable!(),
        };
        if offset > remaining {
            continue;
        }
        let state = meta.state_start + step;
        return Ok(HindsightSample {
            transition: t,
            state,
            action: log.action(t),
            next_state: state + 1,
            goal_state: state + offset,
            offset,
        });
    }
    Err(Error::InvalidInput("could not draw an in-episode goal".into()))
}
