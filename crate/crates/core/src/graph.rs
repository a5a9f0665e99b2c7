//! Weighted undirected graph with tombstoned edges.
//!
//! Nodes are dense integers `0..n`. Edge weights are integers `>= 1`, so every
//! distance and every bound comparison downstream is exact.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type NodeId = usize;
pub type Weight = u64;

/// Undirected edge identifier with normalized endpoint order (`lo < hi`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EdgeId {
    pub lo: NodeId,
    pub hi: NodeId,
}

impl EdgeId {
    pub fn new(a: NodeId, b: NodeId) -> Self {
        if a <= b {
            EdgeId { lo: a, hi: b }
        } else {
            EdgeId { lo: b, hi: a }
        }
    }

    pub fn other(&self, x: NodeId) -> NodeId {
        if x == self.lo {
            self.hi
        } else {
            self.lo
        }
    }

    pub fn touches(&self, x: NodeId) -> bool {
        self.lo == x || self.hi == x
    }
}

impl fmt::Display for EdgeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{},{}}}", self.lo, self.hi)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("self-loop on node {0}")]
    SelfLoop(NodeId),
    #[error("duplicate edge {0}")]
    MultiEdge(EdgeId),
    #[error("edge {0} has weight {1}, weights must be at least 1")]
    WeightTooSmall(EdgeId, Weight),
    #[error("graph is disconnected")]
    Disconnected,
    #[error("graph is empty")]
    Empty,
    #[error("node {0} out of range")]
    UnknownNode(NodeId),
    #[error("edge {0} does not exist")]
    UnknownEdge(EdgeId),
    #[error("edge {0} already failed")]
    AlreadyDead(EdgeId),
    #[error("nodes {0} and {1} are not connected")]
    Unreachable(NodeId, NodeId),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Edge {
    pub id: EdgeId,
    pub weight: Weight,
    pub alive: bool,
}

#[derive(Debug, Clone)]
pub struct Graph {
    n: usize,
    edges: Vec<Edge>,
    index: BTreeMap<EdgeId, usize>,
    adj: Vec<Vec<(NodeId, usize)>>,
}

impl Graph {
    /// Builds a graph from `(u, v, w)` triples. The input must be simple,
    /// have weights `>= 1` and be connected.
    pub fn from_edges(n: usize, triples: &[(NodeId, NodeId, Weight)]) -> Result<Self, GraphError> {
        let g = Self::from_edges_unchecked(n, triples)?;
        if !g.is_connected() {
            return Err(GraphError::Disconnected);
        }
        Ok(g)
    }

    /// Like [`Graph::from_edges`] but does not require connectivity.
    pub fn from_edges_unchecked(
        n: usize,
        triples: &[(NodeId, NodeId, Weight)],
    ) -> Result<Self, GraphError> {
        if n == 0 {
            return Err(GraphError::Empty);
        }
        let mut g = Graph { n, edges: Vec::new(), index: BTreeMap::new(), adj: vec![Vec::new(); n] };
        for &(u, v, w) in triples {
            g.add_edge(u, v, w)?;
        }
        Ok(g)
    }

    fn add_edge(&mut self, u: NodeId, v: NodeId, w: Weight) -> Result<(), GraphError> {
        if u >= self.n {
            return Err(GraphError::UnknownNode(u));
        }
        if v >= self.n {
            return Err(GraphError::UnknownNode(v));
        }
        if u == v {
            return Err(GraphError::SelfLoop(u));
        }
        let id = EdgeId::new(u, v);
        if w < 1 {
            return Err(GraphError::WeightTooSmall(id, w));
        }
        if self.index.contains_key(&id) {
            return Err(GraphError::MultiEdge(id));
        }
        let idx = self.edges.len();
        self.edges.push(Edge { id, weight: w, alive: true });
        self.index.insert(id, idx);
        self.adj[u].push((v, idx));
        self.adj[v].push((u, idx));
        Ok(())
    }

    /// Parses the `u v w` edge-list format. Blank lines and `#` comments are
    /// ignored; the node count is one more than the largest id mentioned.
    pub fn parse(text: &str) -> Result<Self, GraphError> {
        let mut triples = Vec::new();
        let mut max_id = None::<NodeId>;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 3 {
                return Err(GraphError::Parse {
                    line: lineno + 1,
                    msg: format!("expected `u v w`, got {:?}", line),
                });
            }
            let num = |s: &str| -> Result<u64, GraphError> {
                s.parse::<u64>().map_err(|e| GraphError::Parse {
                    line: lineno + 1,
                    msg: format!("{s:?}: {e}"),
                })
            };
            let u = num(parts[0])? as NodeId;
            let v = num(parts[1])? as NodeId;
            let w = num(parts[2])?;
            max_id = Some(max_id.map_or(u.max(v), |m| m.max(u).max(v)));
            triples.push((u, v, w));
        }
        let n = max_id.map(|m| m + 1).ok_or(GraphError::Empty)?;
        Self::from_edges(n, &triples)
    }

    /// Serializes the alive and dead edges back into the edge-list format.
    pub fn to_edge_list(&self) -> String {
        let mut s = String::new();
        for e in &self.edges {
            if !e.alive {
                s.push_str("# failed: ");
            }
            s.push_str(&format!("{} {} {}\n", e.id.lo, e.id.hi, e.weight));
        }
        s
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn alive_edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(|e| e.alive)
    }

    pub fn edge(&self, id: EdgeId) -> Option<&Edge> {
        self.index.get(&id).map(|&i| &self.edges[i])
    }

    pub fn weight(&self, id: EdgeId) -> Option<Weight> {
        self.edge(id).map(|e| e.weight)
    }

    pub fn is_alive(&self, id: EdgeId) -> bool {
        self.edge(id).is_some_and(|e| e.alive)
    }

    /// Alive neighbors of `u` with the connecting edge weight.
    pub fn neighbors(&self, u: NodeId) -> impl Iterator<Item = (NodeId, Weight)> + '_ {
        self.adj[u].iter().filter_map(move |&(v, i)| {
            let e = &self.edges[i];
            e.alive.then_some((v, e.weight))
        })
    }

    /// Marks an edge as failed. The edge stays in the graph as a tombstone.
    pub fn fail_edge(&mut self, id: EdgeId) -> Result<(), GraphError> {
        let &i = self.index.get(&id).ok_or(GraphError::UnknownEdge(id))?;
        if !self.edges[i].alive {
            return Err(GraphError::AlreadyDead(id));
        }
        self.edges[i].alive = false;
        Ok(())
    }

    /// Single-source shortest path distances over alive edges.
    pub fn distances_from(&self, src: NodeId) -> Vec<Option<Weight>> {
        let mut dist = vec![None; self.n];
        let mut heap = BinaryHeap::new();
        dist[src] = Some(0);
        heap.push(Reverse((0u64, src)));
        while let Some(Reverse((d, u))) = heap.pop() {
            if dist[u].is_some_and(|du| du < d) {
                continue;
            }
            for (v, w) in self.neighbors(u) {
                let nd = d + w;
                if dist[v].is_none_or(|dv| nd < dv) {
                    dist[v] = Some(nd);
                    heap.push(Reverse((nd, v)));
                }
            }
        }
        dist
    }

    pub fn shortest_path_distance(&self, u: NodeId, v: NodeId) -> Result<Weight, GraphError> {
        self.distances_from(u)[v].ok_or(GraphError::Unreachable(u, v))
    }

    /// All-pairs distances via repeated Dijkstra.
    pub fn all_pairs(&self) -> Result<Vec<Vec<Weight>>, GraphError> {
        (0..self.n)
            .map(|u| {
                self.distances_from(u)
                    .into_iter()
                    .enumerate()
                    .map(|(v, d)| d.ok_or(GraphError::Unreachable(u, v)))
                    .collect()
            })
            .collect()
    }

    pub fn diameter(&self) -> Result<Weight, GraphError> {
        let ap = self.all_pairs()?;
        Ok(ap.iter().flat_map(|row| row.iter().copied()).max().unwrap_or(0))
    }

    /// `N(u, r)`: nodes within distance `r` of `u`, including `u`.
    pub fn neighborhood(&self, u: NodeId, r: Weight) -> Vec<NodeId> {
        self.distances_from(u)
            .into_iter()
            .enumerate()
            .filter_map(|(v, d)| d.filter(|&d| d <= r).map(|_| v))
            .collect()
    }

    pub fn is_connected(&self) -> bool {
        self.distances_from(0).iter().all(Option::is_some)
    }

    /// Whether the alive graph stays connected after removing `extra` too.
    pub fn connected_without(&self, extra: &[EdgeId]) -> bool {
        let mut g = self.clone();
        for &e in extra {
            if let Some(&i) = g.index.get(&e) {
                g.edges[i].alive = false;
            }
        }
        g.is_connected()
    }

    /// Copy of the graph where every edge leaving the `keep` set is dead.
    pub fn induced(&self, keep: &[bool]) -> Graph {
        let mut g = self.clone();
        for e in g.edges.iter_mut() {
            if !(keep[e.id.lo] && keep[e.id.hi]) {
                e.alive = false;
            }
        }
        g
    }
}
