//! `.plog` binary format.
//!
//! ```text
//! magic        4 bytes  "PLOG"
//! version      u32
//! obs_dim      u32
//! num_actions  u32
//! num_episodes u32
//! episode table: num_episodes × u32 (transition count)
//! per episode: (len+1) × obs_dim × f32 states, then len × u32 actions
//! ```
//! All integers and floats are little-endian.

use std::path::Path;

use super::{EpisodeMeta, TrajectoryLog};
use crate::error::{Error, Result};

pub const PLOG_MAGIC: &[u8; 4] = b"PLOG";
pub const PLOG_VERSION: u32 = 1;

const HEADER_LEN: usize = 20;

impl TrajectoryLog {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(
            HEADER_LEN + 4 * self.episodes.len() + 4 * self.states.len() + 4 * self.actions.len(),
        );
        out.extend_from_slice(PLOG_MAGIC);
        for v in [
            PLOG_VERSION,
            self.obs_dim as u32,
            self.num_actions as u32,
            self.episodes.len() as u32,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for e in &self.episodes {
            out.extend_from_slice(&(e.len as u32).to_le_bytes());
        }
        for e in &self.episodes {
            let states = &self.states[e.state_start * self.obs_dim..(e.state_start + e.len + 1) * self.obs_dim];
            for s in states {
                out.extend_from_slice(&s.to_le_bytes());
            }
            for a in &self.actions[e.transition_start..e.transition_start + e.len] {
                out.extend_from_slice(&a.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::CorruptHeader(format!("{} bytes is shorter than the header", bytes.len())));
        }
        if &bytes[0..4] != PLOG_MAGIC {
            return Err(Error::CorruptHeader("bad magic".into()));
        }
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
        let version = word(4);
        if version != PLOG_VERSION {
            return Err(Error::Version {
                found: version,
                expected: PLOG_VERSION,
            });
        }
        let obs_dim = word(8) as usize;
        let num_actions = word(12) as usize;
        let num_episodes = word(16) as usize;
        if obs_dim == 0 {
            return Err(Error::CorruptHeader("zero observation dim".into()));
        }
        let table_end = HEADER_LEN + 4 * num_episodes;
        if bytes.len() < table_end {
            return Err(Error::Truncated("episode table".into()));
        }
        let lens: Vec<usize> = (0..num_episodes).map(|e| word(HEADER_LEN + 4 * e) as usize).collect();
        let body: usize = lens.iter().map(|&l| 4 * ((l + 1) * obs_dim + l)).sum();
        if bytes.len() < table_end + body {
            return Err(Error::Truncated(format!(
                "expected {} body bytes, found {}",
                body,
                bytes.len() - table_end
            )));
        }
        if bytes.len() > table_end + body {
            return Err(Error::CorruptHeader("trailing bytes after last episode".into()));
        }
        let mut log = TrajectoryLog::new(obs_dim, num_actions);
        let mut at = table_end;
        for (id, &len) in lens.iter().enumerate() {
            log.episodes.push(EpisodeMeta {
                id,
                state_start: log.states.len() / obs_dim,
                transition_start: log.actions.len(),
                len,
            });
            for _ in 0..(len + 1) * obs_dim {
                log.states.push(f32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes")));
                at += 4;
            }
            for _ in 0..len {
                let a = word(at);
                if a as usize >= num_actions {
                    return Err(Error::CorruptHeader(format!("action {a} out of range")));
                }
                log.actions.push(a);
                at += 4;
            }
        }
        Ok(log)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
