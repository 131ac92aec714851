use rand::Rng;

use super::{PlannerConfig, Roadmap, RoadmapEdge, VertexSampler};
use crate::buffer::TrajectoryLog;
use crate::embed::EmbeddingIndex;
use crate::error::Result;
use crate::qlearn::{d_q_batch, QFunction};

/// Row-major `V × V` matrix of `d_Q` between vertex states (diagonal 0).
pub fn pairwise_dq<Q: QFunction + ?Sized>(log: &TrajectoryLog, q: &Q, vertices: &[usize]) -> Vec<f64> {
    let n = vertices.len();
    let pairs: Vec<(&[f32], &[f32])> = (0..n)
        .flat_map(|u| (0..n).map(move |v| (u, v)))
        .filter(|(u, v)| u < v)
        .map(|(u, v)| (log.state(vertices[u]), log.state(vertices[v])))
        .collect();
    let upper = d_q_batch(q, &pairs);
    let mut m = vec![0.0; n * n];
    let mut k = 0;
    for u in 0..n {
        for v in u + 1..n {
            m[u * n + v] = upper[k];
            m[v * n + u] = upper[k];
            k += 1;
        }
    }
    m
}

/// Edges wherever `d_Q ≤ threshold`, in both directions; edges carry no
/// segment and cost `d_Q`.
pub fn q_threshold_roadmap(vertices: Vec<usize>, dq: &[f64], threshold: f64, r: f64) -> Roadmap {
    let n = vertices.len();
    let mut edges = Vec::new();
    for u in 0..n {
        for v in 0..n {
            if u != v && dq[u * n + v] <= threshold {
                edges.push(RoadmapEdge {
                    from: u,
                    to: v,
                    segment: None,
                    cost: dq[u * n + v],
                });
            }
        }
    }
    Roadmap::assemble(vertices, edges, r, 0.0, vec![Vec::new(); n])
}

/// Q-threshold roadmap over freshly sampled vertices.
pub fn baseline_q_roadmap<Q: QFunction + ?Sized, R: Rng + ?Sized>(
    log: &TrajectoryLog,
    index: &EmbeddingIndex,
    q: &Q,
    threshold: f64,
    cfg: &PlannerConfig,
    rng: &mut R,
) -> Result<Roadmap> {
    let sampler = VertexSampler::new(index, cfg.sampling, 0.0)?;
    let vertices: Vec<usize> = (0..cfg.num_vertices).map(|_| sampler.sample(rng)).collect();
    let dq = pairwise_dq(log, q, &vertices);
    Ok(q_threshold_roadmap(vertices, &dq, threshold, cfg.r))
}

/// The threshold whose Q-threshold roadmap has mean out-degree closest to
/// `target_degree` (ties to the smaller threshold).
pub fn degree_matched_threshold(dq: &[f64], n: usize, target_degree: f64) -> f64 {
    let mut upper: Vec<f64> = (0..n)
        .flat_map(|u| (u + 1..n).map(move |v| dq[u * n + v]))
        .collect();
    upper.sort_by(f64::total_cmp);
    if upper.is_empty() {
        return 0.0;
    }
    let degree = |k: usize| 2.0 * k as f64 / n as f64;
    let mut best = (f64::INFINITY, 0.0);
    let mut k = 0;
    while k < upper.len() {
        let t = upper[k];
        while k < upper.len() && upper[k] <= t {
            k += 1;
        }
        let gap = (degree(k) - target_degree).abs();
        if gap < best.0 {
            best = (gap, t);
        }
    }
    if target_degree.abs() < best.0 {
        return upper[0].next_down();
    }
    best.1
}
