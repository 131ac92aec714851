//! Retrieval-based planners.
//!
//! Edges are never drawn geometrically: an edge `u → v` exists only when
//! retrieval finds a stored segment from near `u` to near `v` of at most
//! `r` steps, and the edge carries that segment. A plan is the
//! concatenation of edge segments along a shortest path.

mod baseline;
mod graph;
mod rrt;

pub use baseline::{baseline_q_roadmap, degree_matched_threshold, pairwise_dq, q_threshold_roadmap};
pub use graph::{shortest_path, Graph};
pub use rrt::{rrt_build, rrt_star_build, RrtNode, RrtTree};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::buffer::{Segment, TrajectoryLog};
use crate::codec::{Reader, Writer};
use crate::embed::EmbeddingIndex;
use crate::error::{Error, Result};
use crate::per::{neighbors, retrieve_between, PerConfig};
use crate::util::l2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    Uniform,
    /// Probability proportional to `1 / (1 + visitation count)`.
    VisitationWeighted,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    /// Reachability radius in steps.
    pub r: f64,
    pub num_vertices: usize,
    pub sampling: Sampling,
    /// Tree-growing iterations for the RRT planners.
    pub iterations: usize,
    /// Skip retrievals between vertices too far apart in embedding space
    /// to admit any segment of at most `r` steps.
    pub prefilter: bool,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            r: 8.0,
            num_vertices: 300,
            sampling: Sampling::Uniform,
            iterations: 500,
            prefilter: true,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.r >= 0.0) {
            return Err(Error::Config(format!("r={} must be non-negative", self.r)));
        }
        Ok(())
    }
}

/// `|N_dp|` for every buffer state, computed over distinct embedding rows.
pub fn visitation_counts(index: &EmbeddingIndex, d_p: f64) -> Vec<usize> {
    let groups = index.groups();
    let mut counts = vec![0usize; index.len()];
    for a in groups {
        let c: usize = groups
            .iter()
            .filter(|b| l2(index.row(a.representative), index.row(b.representative)) <= d_p)
            .map(|b| b.members.len())
            .sum();
        for &m in &a.members {
            counts[m] = c;
        }
    }
    counts
}

/// Draws buffer states as roadmap vertices.
#[derive(Clone, Debug)]
pub struct VertexSampler {
    n: usize,
    weighted: Option<WeightedIndex<f64>>,
}

impl VertexSampler {
    pub fn new(index: &EmbeddingIndex, sampling: Sampling, d_p: f64) -> Result<Self> {
        if index.is_empty() {
            return Err(Error::EmptyLog);
        }
        let weighted = match sampling {
            Sampling::Uniform => None,
            Sampling::VisitationWeighted => {
                let w: Vec<f64> = visitation_counts(index, d_p)
                    .into_iter()
                    .map(|c| 1.0 / (1.0 + c as f64))
                    .collect();
                Some(WeightedIndex::new(&w).map_err(|e| Error::InvalidInput(e.to_string()))?)
            }
        };
        Ok(VertexSampler { n: index.len(), weighted })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match &self.weighted {
            None => rng.random_range(0..self.n),
            Some(w) => w.sample(rng),
        }
    }
}

/// One draw from [`VertexSampler`].
pub fn sample_vertex<R: Rng + ?Sized>(
    index: &EmbeddingIndex,
    sampling: Sampling,
    d_p: f64,
    rng: &mut R,
) -> Result<usize> {
    Ok(VertexSampler::new(index, sampling, d_p)?.sample(rng))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoadmapEdge {
    pub from: usize,
    pub to: usize,
    /// The retrieved segment; `None` for baseline edges.
    pub segment: Option<Segment>,
    pub cost: f64,
}

/// A planning graph over buffer states. Edges are directed and stored per
/// direction.
#[derive(Clone, Debug, PartialEq)]
pub struct Roadmap {
    /// Global state index of each vertex.
    pub vertices: Vec<usize>,
    pub edges: Vec<RoadmapEdge>,
    pub r: f64,
    pub d_p: f64,
    near: Vec<Vec<usize>>,
    out: Vec<Vec<usize>>,
}

impl Roadmap {
    pub(crate) fn assemble(
        vertices: Vec<usize>,
        mut edges: Vec<RoadmapEdge>,
        r: f64,
        d_p: f64,
        near: Vec<Vec<usize>>,
    ) -> Self {
        edges.sort_by_key(|e| (e.from, e.to));
        let mut out = vec![Vec::new(); vertices.len()];
        for (k, e) in edges.iter().enumerate() {
            out[e.from].push(k);
        }
        Roadmap {
            vertices,
            edges,
            r,
            d_p,
            near,
            out,
        }
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Mean out-degree.
    pub fn mean_degree(&self) -> f64 {
        if self.vertices.is_empty() {
            0.0
        } else {
            self.edges.len() as f64 / self.vertices.len() as f64
        }
    }

    pub fn edges_from(&self, v: usize) -> impl Iterator<Item = &RoadmapEdge> + '_ {
        self.out[v].iter().map(move |&k| &self.edges[k])
    }

    pub fn graph(&self) -> Graph {
        let mut g = Graph::new(self.vertices.len());
        for e in &self.edges {
            g.add_edge(e.from, e.to, e.cost);
        }
        g
    }

    /// Buffer states within `d_p` of vertex `v`.
    pub fn near(&self, v: usize) -> &[usize] {
        &self.near[v]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(b"PRMP", 1);
        w.f64(self.r);
        w.f64(self.d_p);
        w.u64(self.vertices.len() as u64);
        for (&v, near) in self.vertices.iter().zip(&self.near) {
            w.u64(v as u64);
            w.u64(near.len() as u64);
            for &k in near {
                w.u64(k as u64);
            }
        }
        w.u64(self.edges.len() as u64);
        for e in &self.edges {
            w.u64(e.from as u64);
            w.u64(e.to as u64);
            w.f64(e.cost);
            match e.segment {
                None => w.u32(0),
                Some(s) => {
                    w.u32(1);
                    for x in [s.episode, s.start, s.end, s.first_state] {
                        w.u64(x as u64);
                    }
                }
            }
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::open(bytes, b"PRMP", 1)?;
        let radius = r.f64()?;
        let d_p = r.f64()?;
        let n = r.u64()? as usize;
        let mut vertices = Vec::new();
        let mut near = Vec::new();
        for _ in 0..n {
            vertices.push(r.u64()? as usize);
            let m = r.u64()? as usize;
            near.push((0..m).map(|_| r.u64().map(|k| k as usize)).collect::<Result<Vec<_>>>()?);
        }
        let m = r.u64()? as usize;
        let mut edges = Vec::new();
        for _ in 0..m {
            let from = r.u64()? as usize;
            let to = r.u64()? as usize;
            let cost = r.f64()?;
            let segment = match r.u32()? {
                0 => None,
                1 => {
                    let mut x = [0usize; 4];
                    for v in &mut x {
                        *v = r.u64()? as usize;
                    }
                    Some(Segment {
                        episode: x[0],
                        start: x[1],
                        end: x[2],
                        first_state: x[3],
                    })
                }
                t => return Err(Error::CorruptHeader(format!("edge tag {t}"))),
            };
            if from >= n || to >= n {
                return Err(Error::OutOfRange(format!("edge {from}->{to} with {n} vertices")));
            }
            edges.push(RoadmapEdge { from, to, segment, cost });
        }
        r.finish()?;
        Ok(Roadmap::assemble(vertices, edges, radius, d_p, near))
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Checks every edge: its segment exists contiguously in `log`, starts
    /// within `d_p` of the source vertex, ends within `d_p` of the target
    /// vertex, and spans at most `r` steps.
    pub fn verify(&self, log: &TrajectoryLog, index: &EmbeddingIndex) -> std::result::Result<(), String> {
        for e in &self.edges {
            let Some(seg) = e.segment else {
                return Err(format!("edge {}->{} carries no segment", e.from, e.to));
            };
            check_segment(log, index, &seg, self.vertices[e.from], self.vertices[e.to], self.d_p, self.r)
                .map_err(|m| format!("edge {}->{}: {m}", e.from, e.to))?;
        }
        Ok(())
    }
}

pub(crate) fn check_segment(
    log: &TrajectoryLog,
    index: &EmbeddingIndex,
    seg: &Segment,
    from: usize,
    to: usize,
    d_p: f64,
    r: f64,
) -> std::result::Result<(), String> {
    match log.segment_between(seg.first_state, seg.last_state()) {
        Ok(s) if s == *seg => {}
        _ => return Err("segment is not a contiguous stored slice".into()),
    }
    if index.distance(seg.first_state, from) > d_p {
        return Err(format!("start is {} from its vertex", index.distance(seg.first_state, from)));
    }
    if index.distance(seg.last_state(), to) > d_p {
        return Err(format!("end is {} from its vertex", index.distance(seg.last_state(), to)));
    }
    if seg.len() as f64 > r {
        return Err(format!("length {} exceeds r", seg.len()));
    }
    Ok(())
}

/// Shared retrieval plumbing for the planners.
pub(crate) struct Retriever<'a> {
    pub log: &'a TrajectoryLog,
    pub index: &'a EmbeddingIndex,
    pub per: &'a PerConfig,
    pub r: f64,
    pub prefilter: bool,
}

impl Retriever<'_> {
    pub fn near(&self, z: &[f64]) -> Vec<usize> {
        neighbors(self.index, z, self.per.d_p)
    }

    /// Embedding distance beyond which no segment of at most `r` steps
    /// can join the two neighborhoods.
    fn bound(&self) -> f64 {
        let b = 2.0 * self.per.d_p + self.r * self.index.max_step();
        b + 1e-9 * (1.0 + b)
    }

    /// A segment of at most `r` steps from near `za` to near `zb`.
    pub fn link(&self, za: &[f64], near_a: &[usize], zb: &[f64], near_b: &[usize]) -> Option<Segment> {
        if self.prefilter && l2(za, zb) > self.bound() {
            return None;
        }
        retrieve_between(self.log, near_a, near_b, self.per).filter(|s| s.len() as f64 <= self.r)
    }

    pub fn cost(&self, seg: &Segment) -> f64 {
        -self.per.reward(seg)
    }
}

/// Builds an R-PRM roadmap: sample vertices, then try a retrieval for
/// every ordered vertex pair.
pub fn rprm_build<R: Rng + ?Sized>(
    log: &TrajectoryLog,
    index: &EmbeddingIndex,
    per: &PerConfig,
    cfg: &PlannerConfig,
    rng: &mut R,
) -> Result<Roadmap> {
    per.validate()?;
    cfg.validate()?;
    let sampler = VertexSampler::new(index, cfg.sampling, per.d_p)?;
    let vertices: Vec<usize> = (0..cfg.num_vertices).map(|_| sampler.sample(rng)).collect();
    rprm_from_vertices(log, index, per, cfg, vertices)
}

/// R-PRM edges over a given vertex set.
pub fn rprm_from_vertices(
    log: &TrajectoryLog,
    index: &EmbeddingIndex,
    per: &PerConfig,
    cfg: &PlannerConfig,
    vertices: Vec<usize>,
) -> Result<Roadmap> {
    per.validate()?;
    cfg.validate()?;
    let ret = Retriever {
        log,
        index,
        per,
        r: cfg.r,
        prefilter: cfg.prefilter,
    };
    let near: Vec<Vec<usize>> = vertices.iter().map(|&v| ret.near(index.row(v))).collect();
    let mut edges = Vec::new();
    for (u, &su) in vertices.iter().enumerate() {
        for (v, &sv) in vertices.iter().enumerate() {
            if u == v {
                continue;
            }
            if let Some(seg) = ret.link(index.row(su), &near[u], index.row(sv), &near[v]) {
                edges.push(RoadmapEdge {
                    from: u,
                    to: v,
                    segment: Some(seg),
                    cost: ret.cost(&seg),
                });
            }
        }
    }
    Ok(Roadmap::assemble(vertices, edges, cfg.r, per.d_p, near))
}

/// A plan: edge segments concatenated along a roadmap shortest path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StitchedTrajectory {
    /// Roadmap vertices visited between start and goal.
    pub waypoints: Vec<usize>,
    pub segments: Vec<Segment>,
    pub total_len: usize,
    pub total_cost: f64,
}

impl StitchedTrajectory {
    /// Global state indices of the concatenated segments, junction states
    /// of both sides included.
    pub fn states(&self) -> Vec<usize> {
        self.segments.iter().flat_map(|s| s.state_indices()).collect()
    }

    pub fn actions(&self, log: &TrajectoryLog) -> Vec<usize> {
        self.segments.iter().flat_map(|s| log.segment_actions(s)).collect()
    }
}

/// Goal-side links of a query, reusable across replanning steps.
#[derive(Clone, Debug)]
pub struct GoalLinks {
    z_goal: Vec<f64>,
    near_goal: Vec<usize>,
    into_goal: Vec<(usize, Segment)>,
}

impl GoalLinks {
    pub fn new(roadmap: &Roadmap, log: &TrajectoryLog, index: &EmbeddingIndex, per: &PerConfig, goal: &[f32]) -> Self {
        let ret = Retriever {
            log,
            index,
            per,
            r: roadmap.r,
            prefilter: true,
        };
        let z_goal = index.embed(goal);
        let near_goal = ret.near(&z_goal);
        let into_goal = (0..roadmap.num_vertices())
            .filter_map(|v| {
                ret.link(index.row(roadmap.vertices[v]), roadmap.near(v), &z_goal, &near_goal)
                    .map(|s| (v, s))
            })
            .collect();
        GoalLinks {
            z_goal,
            near_goal,
            into_goal,
        }
    }
}

/// Stitched plan from `start` to the goal of `links`, or `None` when the
/// augmented graph does not connect them.
pub fn plan_from(
    roadmap: &Roadmap,
    log: &TrajectoryLog,
    index: &EmbeddingIndex,
    per: &PerConfig,
    start: &[f32],
    links: &GoalLinks,
) -> Result<Option<StitchedTrajectory>> {
    let ret = Retriever {
        log,
        index,
        per,
        r: roadmap.r,
        prefilter: true,
    };
    let z_start = index.embed(start);
    let near_start = ret.near(&z_start);
    let n = roadmap.num_vertices();
    let (s, g) = (n, n + 1);
    let mut graph = roadmap.graph();
    graph.add_vertex();
    graph.add_vertex();
    let mut extra: Vec<(usize, usize, Segment)> = Vec::new();
    if let Some(seg) = ret.link(&z_start, &near_start, &links.z_goal, &links.near_goal) {
        extra.push((s, g, seg));
    }
    for v in 0..n {
        if let Some(seg) = ret.link(&z_start, &near_start, index.row(roadmap.vertices[v]), roadmap.near(v)) {
            extra.push((s, v, seg));
        }
    }
    for &(v, seg) in &links.into_goal {
        extra.push((v, g, seg));
    }
    for &(a, b, seg) in &extra {
        graph.add_edge(a, b, ret.cost(&seg));
    }
    let Some((path, cost)) = shortest_path(&graph, s, g)? else {
        return Ok(None);
    };
    let segment_of = |a: usize, b: usize| -> Segment {
        let candidates = extra
            .iter()
            .filter(|(x, y, _)| *x == a && *y == b)
            .map(|(_, _, seg)| (ret.cost(seg), *seg))
            .chain(
                (a < n && b < n)
                    .then(|| roadmap.edges_from(a).filter(|e| e.to == b))
                    .into_iter()
                    .flatten()
                    .map(|e| (e.cost, e.segment.expect("retrieval edges carry segments"))),
            );
        candidates
            .min_by(|x, y| x.0.total_cmp(&y.0))
            .expect("path edges exist")
            .1
    };
    let segments: Vec<Segment> = path.windows(2).map(|w| segment_of(w[0], w[1])).collect();
    Ok(Some(StitchedTrajectory {
        waypoints: path[1..path.len() - 1].to_vec(),
        total_len: segments.iter().map(Segment::len).sum(),
        segments,
        total_cost: cost,
    }))
}

/// Inserts `start` and `goal` into the roadmap and stitches the shortest
/// path between them.
pub fn rprm_query(
    roadmap: &Roadmap,
    log: &TrajectoryLog,
    index: &EmbeddingIndex,
    per: &PerConfig,
    start: &[f32],
    goal: &[f32],
) -> Result<Option<StitchedTrajectory>> {
    let links = GoalLinks::new(roadmap, log, index, per, goal);
    plan_from(roadmap, log, index, per, start, &links)
}

/// JSON export: vertices (with a pose when `pose` can supply one) and
/// edges with lengths and costs.
pub fn roadmap_json(
    roadmap: &Roadmap,
    log: &TrajectoryLog,
    pose: &dyn Fn(&[f32]) -> Option<[f64; 2]>,
) -> serde_json::Value {
    let vertices: Vec<serde_json::Value> = roadmap
        .vertices
        .iter()
        .enumerate()
        .map(|(id, &s)| serde_json::json!({ "id": id, "state": s, "pose": pose(log.state(s)) }))
        .collect();
    let edges: Vec<serde_json::Value> = roadmap
        .edges
        .iter()
        .map(|e| {
            serde_json::json!({
                "from": e.from,
                "to": e.to,
                "len": e.segment.map(|s| s.len()),
                "cost": e.cost,
                "segment": e.segment,
            })
        })
        .collect();
    serde_json::json!({
        "r": roadmap.r,
        "d_p": roadmap.d_p,
        "mean_degree": roadmap.mean_degree(),
        "vertices": vertices,
        "edges": edges,
    })
}

#[cfg(test)]
mod tests;
