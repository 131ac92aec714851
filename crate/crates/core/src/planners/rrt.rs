use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_segment, PlannerConfig, Retriever, VertexSampler};
use crate::buffer::{Segment, TrajectoryLog};
use crate::embed::EmbeddingIndex;
use crate::error::{Error, Result};
use crate::per::{retrieve_between, PerConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RrtNode {
    /// Global buffer state index.
    pub state: usize,
    pub parent: Option<usize>,
    pub cost: f64,
    /// Segment from the parent's neighborhood to this node's.
    pub segment: Option<Segment>,
}

/// A tree grown from one root by retrieval.
#[derive(Clone, Debug, PartialEq)]
pub struct RrtTree {
    pub nodes: Vec<RrtNode>,
    pub r: f64,
    pub d_p: f64,
    children: Vec<Vec<usize>>,
    near: Vec<Vec<usize>>,
}

impl RrtTree {
    fn new(root: usize, near: Vec<usize>, r: f64, d_p: f64) -> Self {
        RrtTree {
            nodes: vec![RrtNode {
                state: root,
                parent: None,
                cost: 0.0,
                segment: None,
            }],
            r,
            d_p,
            children: vec![Vec::new()],
            near: vec![near],
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, node: RrtNode, near: Vec<usize>) -> usize {
        let id = self.nodes.len();
        if let Some(p) = node.parent {
            self.children[p].push(id);
        }
        self.nodes.push(node);
        self.children.push(Vec::new());
        self.near.push(near);
        id
    }

    fn reparent(&mut self, node: usize, parent: usize, seg: Segment, edge_cost: f64) {
        if let Some(old) = self.nodes[node].parent {
            self.children[old].retain(|&c| c != node);
        }
        self.children[parent].push(node);
        self.nodes[node].parent = Some(parent);
        self.nodes[node].segment = Some(seg);
        let delta = self.nodes[parent].cost + edge_cost - self.nodes[node].cost;
        let mut stack = vec![node];
        while let Some(v) = stack.pop() {
            self.nodes[v].cost += delta;
            stack.extend(self.children[v].iter().copied());
        }
    }

    /// Costs recomputed from the root by summing edge costs along parent
    /// links; `None` if the parent links contain a cycle.
    pub fn costs_from_root(&self, per: &PerConfig) -> Option<Vec<f64>> {
        let mut costs = Vec::with_capacity(self.nodes.len());
        for start in 0..self.nodes.len() {
            let mut total = 0.0;
            let mut v = start;
            let mut hops = 0;
            while let Some(p) = self.nodes[v].parent {
                total += -per.reward(&self.nodes[v].segment.expect("non-root nodes carry segments"));
                v = p;
                hops += 1;
                if hops > self.nodes.len() {
                    return None;
                }
            }
            costs.push(total);
        }
        Some(costs)
    }

    /// Edge soundness for every parent link.
    pub fn verify(&self, log: &TrajectoryLog, index: &EmbeddingIndex) -> std::result::Result<(), String> {
        for (id, node) in self.nodes.iter().enumerate() {
            let Some(p) = node.parent else { continue };
            let seg = node.segment.ok_or_else(|| format!("node {id} has no segment"))?;
            check_segment(log, index, &seg, self.nodes[p].state, node.state, self.d_p, self.r)
                .map_err(|m| format!("node {id}: {m}"))?;
        }
        Ok(())
    }
}

fn grow<R: Rng + ?Sized>(
    log: &TrajectoryLog,
    index: &EmbeddingIndex,
    per: &PerConfig,
    cfg: &PlannerConfig,
    s_init: usize,
    rng: &mut R,
    rewire: bool,
) -> Result<RrtTree> {
    per.validate()?;
    cfg.validate()?;
    if s_init >= index.len() {
        return Err(Error::OutOfRange(format!("root state {s_init}")));
    }
    let ret = Retriever {
        log,
        index,
        per,
        r: cfg.r,
        prefilter: false,
    };
    let sampler = VertexSampler::new(index, cfg.sampling, per.d_p)?;
    let mut tree = RrtTree::new(s_init, ret.near(index.row(s_init)), cfg.r, per.d_p);
    let mut seen: HashSet<usize> = HashSet::from([s_init]);
    let steer = cfg.r.floor() as usize;
    for _ in 0..cfg.iterations {
        let s_rand = sampler.sample(rng);
        let z_rand = index.row(s_rand);
        let near_rand = ret.near(z_rand);
        let mut nearest: Option<(usize, usize, Segment)> = None;
        for v in 0..tree.len() {
            if let Some(seg) = retrieve_between(log, &tree.near[v], &near_rand, per) {
                if nearest.is_none_or(|(l, _, _)| seg.len() < l) {
                    nearest = Some((seg.len(), v, seg));
                }
            }
        }
        let Some((_, v_near, toward)) = nearest else {
            continue;
        };
        let s_new = toward.first_state + steer.min(toward.len());
        if !seen.insert(s_new) {
            continue;
        }
        let z_new = index.row(s_new);
        let near_new = ret.near(z_new);
        let link_to_new = |v: usize, tree: &RrtTree| {
            ret.link(index.row(tree.nodes[v].state), &tree.near[v], z_new, &near_new)
        };
        let Some(first) = link_to_new(v_near, &tree) else {
            seen.remove(&s_new);
            continue;
        };
        let mut parent = (v_near, first, tree.nodes[v_near].cost + ret.cost(&first));
        let mut near_set = Vec::new();
        if rewire {
            for v in 0..tree.len() {
                if let Some(seg) = link_to_new(v, &tree) {
                    let c = tree.nodes[v].cost + ret.cost(&seg);
                    if c < parent.2 {
                        parent = (v, seg, c);
                    }
                    near_set.push(v);
                }
            }
        }
        let new_id = tree.push(
            RrtNode {
                state: s_new,
                parent: Some(parent.0),
                cost: parent.2,
                segment: Some(parent.1),
            },
            near_new,
        );
        for v in near_set {
            if v == parent.0 {
                continue;
            }
            let z_v = index.row(tree.nodes[v].state);
            let Some(seg) = ret.link(z_new, &tree.near[new_id], z_v, &tree.near[v]) else {
                continue;
            };
            let c = ret.cost(&seg);
            if tree.nodes[new_id].cost + c < tree.nodes[v].cost {
                tree.reparent(v, new_id, seg, c);
            }
        }
    }
    Ok(tree)
}

/// R-RRT: extend from the nearest node (by retrieved segment length)
/// toward a sampled state, stepping to the `r`'th state of the retrieved
/// segment (its last state when shorter).
pub fn rrt_build<R: Rng + ?Sized>(
    log: &TrajectoryLog,
    index: &EmbeddingIndex,
    per: &PerConfig,
    cfg: &PlannerConfig,
    s_init: usize,
    rng: &mut R,
) -> Result<RrtTree> {
    grow(log, index, per, cfg, s_init, rng, false)
}

/// R-RRT*: as [`rrt_build`], choosing the cheapest parent among nodes
/// that reach the new state within `r` steps and rewiring those nodes
/// through it when strictly cheaper.
pub fn rrt_star_build<R: Rng + ?Sized>(
    log: &TrajectoryLog,
    index: &EmbeddingIndex,
    per: &PerConfig,
    cfg: &PlannerConfig,
    s_init: usize,
    rng: &mut R,
) -> Result<RrtTree> {
    grow(log, index, per, cfg, s_init, rng, true)
}
