use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

/// A directed graph with non-negative edge costs, as adjacency lists.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Graph {
    adj: Vec<Vec<(usize, f64)>>,
}

impl Graph {
    pub fn new(n: usize) -> Self {
        Graph { adj: vec![Vec::new(); n] }
    }

    pub fn len(&self) -> usize {
        self.adj.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adj.is_empty()
    }

    pub fn add_vertex(&mut self) -> usize {
        self.adj.push(Vec::new());
        self.adj.len() - 1
    }

    pub fn add_edge(&mut self, from: usize, to: usize, cost: f64) {
        self.adj[from].push((to, cost));
    }

    pub fn edges_from(&self, v: usize) -> &[(usize, f64)] {
        &self.adj[v]
    }

    pub fn num_edges(&self) -> usize {
        self.adj.iter().map(Vec::len).sum()
    }
}

#[derive(PartialEq)]
struct Entry {
    cost: f64,
    vertex: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.vertex.cmp(&self.vertex))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Dijkstra from `src` to `dst`. Returns the vertex path and its cost, or
/// `None` when `dst` is unreachable. Among equal-cost frontiers the lowest
/// vertex index is settled first, and a predecessor is only replaced by a
/// strictly cheaper one.
pub fn shortest_path(graph: &Graph, src: usize, dst: usize) -> Result<Option<(Vec<usize>, f64)>> {
    let n = graph.len();
    if src >= n || dst >= n {
        return Err(Error::OutOfRange(format!("vertex {} not in graph of {n}", src.max(dst))));
    }
    for v in 0..n {
        if let Some(&(_, c)) = graph.edges_from(v).iter().find(|(_, c)| !(*c >= 0.0)) {
            return Err(Error::NegativeCost(c));
        }
    }
    let mut dist = vec![f64::INFINITY; n];
    let mut prev = vec![usize::MAX; n];
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    dist[src] = 0.0;
    heap.push(Entry { cost: 0.0, vertex: src });
    while let Some(Entry { cost, vertex }) = heap.pop() {
        if done[vertex] {
            continue;
        }
        done[vertex] = true;
        if vertex == dst {
            break;
        }
        for &(next, c) in graph.edges_from(vertex) {
            let nd = cost + c;
            if nd < dist[next] {
                dist[next] = nd;
                prev[next] = vertex;
                heap.push(Entry { cost: nd, vertex: next });
            }
        }
    }
    if !dist[dst].is_finite() {
        return Ok(None);
    }
    let mut path = vec![dst];
    let mut v = dst;
    while v != src {
        v = prev[v];
        path.push(v);
    }
    path.reverse();
    Ok(Some((path, dist[dst])))
}
