use std::collections::HashMap;

use super::{QFunction, QSample, TrainableQ};
use crate::buffer::TrajectoryLog;
use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"PQTB";
const VERSION: u32 = 1;

/// Table over `(state, goal, action)` keyed by exact observation bits.
///
/// States are interned on first sight; unseen states read as all-zero.
#[derive(Clone, Debug)]
pub struct TabularQ {
    gamma: f64,
    num_actions: usize,
    obs_dim: usize,
    keys: Vec<Vec<f32>>,
    ids: HashMap<Vec<u32>, usize>,
    online: Vec<f64>,
    target: Vec<f64>,
}

fn key(obs: &[f32]) -> Vec<u32> {
    obs.iter().map(|x| x.to_bits()).collect()
}

impl TabularQ {
    pub fn new(obs_dim: usize, num_actions: usize, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidInput(format!("gamma={gamma} not in (0,1)")));
        }
        if num_actions == 0 || obs_dim == 0 {
            return Err(Error::InvalidInput("tabular Q needs actions and observations".into()));
        }
        Ok(TabularQ {
            gamma,
            num_actions,
            obs_dim,
            keys: Vec::new(),
            ids: HashMap::new(),
            online: Vec::new(),
            target: Vec::new(),
        })
    }

    /// A table with every state of `log` interned.
    pub fn for_log(log: &TrajectoryLog, gamma: f64) -> Result<Self> {
        let mut q = Self::new(log.obs_dim(), log.num_actions(), gamma)?;
        q.intern_log(log);
        Ok(q)
    }

    pub fn num_states(&self) -> usize {
        self.keys.len()
    }

    pub fn id_of(&self, obs: &[f32]) -> Option<usize> {
        self.ids.get(&key(obs)).copied()
    }

    /// Interns every state in `log`, growing the table once.
    pub fn intern_log(&mut self, log: &TrajectoryLog) {
        let fresh: Vec<usize> = (0..log.num_states())
            .filter(|&k| {
                let s = log.state(k);
                if self.ids.contains_key(&key(s)) {
                    return false;
                }
                self.ids.insert(key(s), self.keys.len());
                self.keys.push(s.to_vec());
                true
            })
            .collect();
        if !fresh.is_empty() {
            self.regrow(self.keys.len() - fresh.len());
        }
    }

    fn intern(&mut self, obs: &[f32]) -> usize {
        if let Some(id) = self.id_of(obs) {
            return id;
        }
        let id = self.keys.len();
        self.ids.insert(key(obs), id);
        self.keys.push(obs.to_vec());
        self.regrow(id);
        id
    }

    fn regrow(&mut self, old_n: usize) {
        let n = self.keys.len();
        let a = self.num_actions;
        let mut online = vec![0.0; n * n * a];
        let mut target = vec![0.0; n * n * a];
        for s in 0..old_n {
            let src = s * old_n * a..(s + 1) * old_n * a;
            let dst = s * n * a..s * n * a + old_n * a;
            online[dst.clone()].copy_from_slice(&self.online[src.clone()]);
            target[dst].copy_from_slice(&self.target[src]);
        }
        self.online = online;
        self.target = target;
    }

    fn slot(&self, s: usize, g: usize) -> usize {
        (s * self.keys.len() + g) * self.num_actions
    }

    fn max_target(&self, s: usize, g: usize) -> f64 {
        let at = self.slot(s, g);
        self.target[at..at + self.num_actions]
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Synchronous full sweeps over the distinct transitions of `log` for
    /// every interned goal, until the table stops changing. Returns the
    /// number of sweeps performed.
    pub fn fit_sweeps(&mut self, log: &TrajectoryLog, max_sweeps: usize) -> Result<usize> {
        if log.total_steps() == 0 {
            return Err(Error::EmptyLog);
        }
        self.intern_log(log);
        let mut edges: Vec<(usize, usize, usize)> = log
            .transitions()
            .map(|t| {
                (
                    self.id_of(t.obs).expect("interned"),
                    t.action,
                    self.id_of(t.next_obs).expect("interned"),
                )
            })
            .collect();
        edges.sort_unstable();
        edges.dedup();
        let n = self.keys.len();
        for sweep in 1..=max_sweeps {
            self.sync_target();
            let mut changed = false;
            for g in 0..n {
                for &(s, a, next) in &edges {
                    let y = if next == g {
                        1.0
                    } else {
                        self.gamma * self.max_target(next, g)
                    };
                    let at = self.slot(s, g) + a;
                    if self.online[at] != y {
                        self.online[at] = y;
                        changed = true;
                    }
                }
            }
            if !changed {
                self.sync_target();
                return Ok(sweep);
            }
        }
        self.sync_target();
        Ok(max_sweeps)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(MAGIC, VERSION);
        w.f64(self.gamma);
        w.u32(self.num_actions as u32);
        w.u32(self.obs_dim as u32);
        w.u64(self.keys.len() as u64);
        for k in &self.keys {
            w.f32s(k);
        }
        w.f64s(&self.online);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::open(bytes, MAGIC, VERSION)?;
        let gamma = r.f64()?;
        let num_actions = r.u32()? as usize;
        let obs_dim = r.u32()? as usize;
        let mut q = Self::new(obs_dim, num_actions, gamma)
            .map_err(|e| Error::CorruptHeader(e.to_string()))?;
        let n = r.u64()? as usize;
        for _ in 0..n {
            let k = r.f32s()?;
            if k.len() != obs_dim {
                return Err(Error::CorruptHeader("state key has wrong dimension".into()));
            }
            q.ids.insert(key(&k), q.keys.len());
            q.keys.push(k);
        }
        if q.ids.len() != n {
            return Err(Error::CorruptHeader("duplicate state keys".into()));
        }
        let online = r.f64s()?;
        if online.len() != n * n * num_actions {
            return Err(Error::CorruptHeader("table size does not match state count".into()));
        }
        r.finish()?;
        q.target = online.clone();
        q.online = online;
        Ok(q)
    }
}

impl QFunction for TabularQ {
    fn num_actions(&self) -> usize {
        self.num_actions
    }

    fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    fn gamma(&self) -> f64 {
        self.gamma
    }

    fn q_values(&self, s: &[f32], g: &[f32]) -> Vec<f64> {
        match (self.id_of(s), self.id_of(g)) {
            (Some(s), Some(g)) => {
                let at = self.slot(s, g);
                self.online[at..at + self.num_actions].to_vec()
            }
            _ => vec![0.0; self.num_actions],
        }
    }

    fn same_state(&self, a: &[f32], b: &[f32]) -> bool {
        crate::util::same_bits(a, b)
    }
}

impl TrainableQ for TabularQ {
    fn prepare(&mut self, log: &TrajectoryLog) {
        self.intern_log(log);
    }

    /// Sequential per-sample updates toward a frozen target:
    /// `Q ← Q + lr·(y − Q)`. Returns the mean squared TD error measured
    /// before each sample's update.
    fn td_update(&mut self, batch: &[QSample<'_>], lr: f64) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::InvalidInput("empty TD batch".into()));
        }
        let mut total = 0.0;
        for smp in batch {
            if smp.action >= self.num_actions {
                return Err(Error::InvalidInput(format!("action {} out of range", smp.action)));
            }
            let s = self.intern(smp.state);
            let next = self.intern(smp.next_state);
            let g = self.intern(smp.goal);
            let y = if next == g {
                1.0
            } else {
                self.gamma * self.max_target(next, g)
            };
            let at = self.slot(s, g) + smp.action;
            let err = y - self.online[at];
            total += err * err;
            self.online[at] += lr * err;
        }
        Ok(total / batch.len() as f64)
    }

    fn sync_target(&mut self) {
        self.target.copy_from_slice(&self.online);
    }
}
