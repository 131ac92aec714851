use std::collections::HashMap;

use super::Encoder;
use crate::buffer::TrajectoryLog;
use crate::util::l2;

/// Embeddings of every buffer state, row `i` aligned with global state
/// index `i`, together with the encoder that produced them.
#[derive(Clone, Debug)]
pub struct EmbeddingIndex {
    encoder: Encoder,
    z: Vec<f64>,
    rows: usize,
    max_step: f64,
    groups: Vec<Group>,
}

/// States sharing one bit-identical embedding row.
#[derive(Clone, Debug)]
pub struct Group {
    /// Lowest member; its row stands for the group.
    pub representative: usize,
    /// Ascending global state indices.
    pub members: Vec<usize>,
}

const CHUNK: usize = 4096;

/// Projects every state of `log` through `encoder`.
pub fn embed_all(encoder: &Encoder, log: &TrajectoryLog) -> EmbeddingIndex {
    let dim = encoder.latent_dim();
    let n = log.num_states();
    let mut z: Vec<f64> = Vec::with_capacity(n * dim);
    let mut start = 0;
    while start < n {
        let end = (start + CHUNK).min(n);
        let rows: Vec<&[f32]> = (start..end).map(|k| log.state(k)).collect();
        z.extend(encoder.embed_batch(&rows).iter());
        start = end;
    }
    let mut ids: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut groups: Vec<Group> = Vec::new();
    for (i, row) in z.chunks_exact(dim.max(1)).enumerate().take(n) {
        let key: Vec<u64> = row.iter().map(|v| v.to_bits()).collect();
        match ids.get(&key) {
            Some(&g) => groups[g].members.push(i),
            None => {
                ids.insert(key, groups.len());
                groups.push(Group {
                    representative: i,
                    members: vec![i],
                });
            }
        }
    }
    let mut index = EmbeddingIndex {
        encoder: encoder.clone(),
        z,
        rows: n,
        max_step: 0.0,
        groups,
    };
    index.max_step = (0..log.total_steps())
        .map(|t| {
            let (a, b) = log.transition_states(t);
            l2(index.row(a), index.row(b))
        })
        .fold(0.0, f64::max);
    index
}

impl EmbeddingIndex {
    pub fn len(&self) -> usize {
        self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn dim(&self) -> usize {
        self.encoder.latent_dim()
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.z[i * d..(i + 1) * d]
    }

    pub fn embed(&self, obs: &[f32]) -> Vec<f64> {
        self.encoder.embed(obs)
    }

    /// `d_φ` between two indexed states.
    pub fn distance(&self, i: usize, j: usize) -> f64 {
        l2(self.row(i), self.row(j))
    }

    /// Largest `d_φ` between consecutive states of any stored transition.
    pub fn max_step(&self) -> f64 {
        self.max_step
    }

    /// Distinct embedding rows with the states that share them, in order
    /// of first appearance.
    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn matrix(&self) -> &[f64] {
        &self.z
    }
}
