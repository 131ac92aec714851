//! Ground-truth audit of planning-graph edges.

use serde::{Deserialize, Serialize};

use crate::buffer::TrajectoryLog;
use crate::env::oracle::{GeodesicTable, ObsDecoder};
use crate::env::{Direction, GridEnv};
use crate::planners::{Roadmap, RoadmapEdge};
use crate::util::same_bits;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeCount {
    pub false_edges: usize,
    pub total: usize,
}

/// Why an edge was judged false, or `None` when it is sound.
pub fn edge_fault(
    edge: &RoadmapEdge,
    roadmap: &Roadmap,
    log: &TrajectoryLog,
    env: &GridEnv,
    decoder: &ObsDecoder,
    table: &GeodesicTable,
    slack: f64,
) -> Option<String> {
    let a = decoder.decode(log.state(roadmap.vertices[edge.from]));
    let b = decoder.decode(log.state(roadmap.vertices[edge.to]));
    let (Some(a), Some(b)) = (a, b) else {
        return Some("endpoint is not a free cell".into());
    };
    match table.distance(a, b) {
        None => return Some(format!("{a:?} and {b:?} are not connected")),
        Some(d) if d as f64 > slack * roadmap.r => {
            return Some(format!("{a:?} -> {b:?} needs {d} steps, claimed at most {}", roadmap.r))
        }
        Some(_) => {}
    }
    if let Some(seg) = edge.segment {
        let actions = log.segment_actions(&seg);
        let states: Vec<&[f32]> = log.segment_states(&seg).collect();
        for (k, &act) in actions.iter().enumerate() {
            let Some(c) = decoder.decode(states[k]) else {
                return Some("segment state is not a free cell".into());
            };
            let dir = Direction::from_index(act).ok()?;
            let (next, _) = env.maze.step(c, dir);
            if !same_bits(&env.observer.observe(next).0, states[k + 1]) {
                return Some(format!("segment transition {k} does not replay"));
            }
        }
    }
    None
}

/// Counts edges whose endpoints are more than `slack × r` true steps apart
/// (or disconnected), plus retrieval edges whose segment does not replay
/// under the true dynamics.
pub fn false_edge_count(
    roadmap: &Roadmap,
    log: &TrajectoryLog,
    env: &GridEnv,
    decoder: &ObsDecoder,
    table: &GeodesicTable,
    slack: f64,
) -> EdgeCount {
    let false_edges = roadmap
        .edges
        .iter()
        .filter(|e| edge_fault(e, roadmap, log, env, decoder, table, slack).is_some())
        .count();
    EdgeCount {
        false_edges,
        total: roadmap.num_edges(),
    }
}
