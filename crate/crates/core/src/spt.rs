//! Per-node shortest path trees and their repair under edge deletion.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use serde::{Deserialize, Serialize};

use crate::graph::{EdgeId, Graph, NodeId, Weight};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShortestPathTree {
    pub root: NodeId,
    pub parent: Vec<Option<NodeId>>,
    pub dist: Vec<Weight>,
}

/// Tree edges that changed in a repair.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SptDelta {
    pub removed: Vec<EdgeId>,
    pub added: Vec<EdgeId>,
}

impl SptDelta {
    pub fn is_empty(&self) -> bool {
        self.removed.is_empty() && self.added.is_empty()
    }
}

/// Picks, for each non-root node, the smallest-id neighbor that lies on a
/// shortest path. Only nodes flagged in `which` are (re)assigned.
fn assign_parents(g: &Graph, root: NodeId, dist: &[Weight], parent: &mut [Option<NodeId>], which: &[bool]) {
    for v in 0..g.n() {
        if v == root || !which[v] {
            continue;
        }
        parent[v] = g
            .neighbors(v)
            .filter(|&(u, w)| dist[u] + w == dist[v])
            .map(|(u, _)| u)
            .min();
    }
}

pub fn build_spt(g: &Graph, root: NodeId) -> ShortestPathTree {
    let dist: Vec<Weight> = g
        .distances_from(root)
        .into_iter()
        .map(|d| d.expect("build_spt requires a connected graph"))
        .collect();
    let mut parent = vec![None; g.n()];
    assign_parents(g, root, &dist, &mut parent, &vec![true; g.n()]);
    ShortestPathTree { root, parent, dist }
}

impl ShortestPathTree {
    pub fn contains_edge(&self, e: EdgeId) -> bool {
        self.parent[e.lo] == Some(e.hi) || self.parent[e.hi] == Some(e.lo)
    }

    /// For a tree edge, the endpoint farther from the root.
    pub fn child_endpoint(&self, e: EdgeId) -> Option<NodeId> {
        if self.parent[e.lo] == Some(e.hi) {
            Some(e.lo)
        } else if self.parent[e.hi] == Some(e.lo) {
            Some(e.hi)
        } else {
            None
        }
    }

    pub fn tree_edges(&self) -> BTreeSet<EdgeId> {
        self.parent
            .iter()
            .enumerate()
            .filter_map(|(v, p)| p.map(|p| EdgeId::new(v, p)))
            .collect()
    }

    /// Tree path from the root to `v`, both ends included.
    pub fn path_from_root(&self, v: NodeId) -> Vec<NodeId> {
        let mut p = vec![v];
        let mut cur = v;
        while let Some(par) = self.parent[cur] {
            p.push(par);
            cur = par;
        }
        p.reverse();
        p
    }

    /// Nodes in the subtree rooted at `v` (including `v`).
    pub fn subtree(&self, v: NodeId) -> Vec<bool> {
        let n = self.parent.len();
        let mut children: Vec<Vec<NodeId>> = vec![Vec::new(); n];
        for (x, p) in self.parent.iter().enumerate() {
            if let Some(p) = p {
                children[*p].push(x);
            }
        }
        let mut mark = vec![false; n];
        let mut stack = vec![v];
        while let Some(x) = stack.pop() {
            mark[x] = true;
            stack.extend(children[x].iter().copied());
        }
        mark
    }
}

/// Repairs `spt` after `failed` died in `g`.
///
/// Every node below a dead tree edge is re-settled by a Dijkstra restricted to
/// those subtrees, seeded from the untouched part of the tree. Returns the
/// changed tree edges; a non-tree edge yields an empty delta.
pub fn update_spt(spt: &mut ShortestPathTree, failed: EdgeId, g: &Graph) -> SptDelta {
    let dead: Vec<EdgeId> = spt.tree_edges().into_iter().filter(|e| !g.is_alive(*e)).collect();
    if dead.is_empty() {
        return SptDelta::default();
    }
    debug_assert!(g.is_alive(failed) || !spt.contains_edge(failed) || dead.contains(&failed));
    let n = g.n();
    let before = spt.tree_edges();
    let mut cut = vec![false; n];
    for e in &dead {
        let c = spt.child_endpoint(*e).expect("tree edge");
        for (x, m) in spt.subtree(c).into_iter().enumerate() {
            cut[x] |= m;
        }
    }
    let mut dist: Vec<Option<Weight>> =
        (0..n).map(|v| if cut[v] { None } else { Some(spt.dist[v]) }).collect();
    let mut heap = BinaryHeap::new();
    for v in (0..n).filter(|&v| cut[v]) {
        let seed = g.neighbors(v).filter(|&(u, _)| !cut[u]).map(|(u, w)| spt.dist[u] + w).min();
        if let Some(d) = seed {
            dist[v] = Some(d);
            heap.push(Reverse((d, v)));
        }
    }
    while let Some(Reverse((d, u))) = heap.pop() {
        if dist[u].is_some_and(|du| du < d) {
            continue;
        }
        for (v, w) in g.neighbors(u) {
            if !cut[v] {
                continue;
            }
            let nd = d + w;
            if dist[v].is_none_or(|dv| nd < dv) {
                dist[v] = Some(nd);
                heap.push(Reverse((nd, v)));
            }
        }
    }
    for v in 0..n {
        spt.dist[v] = dist[v].expect("alive graph must stay connected");
    }
    assign_parents(g, spt.root, &spt.dist.clone(), &mut spt.parent, &cut);
    let after = spt.tree_edges();
    SptDelta {
        removed: before.difference(&after).copied().collect(),
        added: after.difference(&before).copied().collect(),
    }
}

/// Which shortest path trees each edge belongs to.
#[derive(Debug, Clone, Default)]
pub struct SptIndex {
    roots: BTreeMap<EdgeId, BTreeSet<NodeId>>,
}

impl SptIndex {
    pub fn build(trees: &[ShortestPathTree]) -> Self {
        let mut idx = SptIndex::default();
        for t in trees {
            for e in t.tree_edges() {
                idx.roots.entry(e).or_default().insert(t.root);
            }
        }
        idx
    }

    pub fn apply(&mut self, root: NodeId, delta: &SptDelta) {
        for e in &delta.removed {
            if let Some(s) = self.roots.get_mut(e) {
                s.remove(&root);
            }
        }
        for e in &delta.added {
            self.roots.entry(*e).or_default().insert(root);
        }
    }

    pub fn roots_of(&self, e: EdgeId) -> Vec<NodeId> {
        self.roots.get(&e).map(|s| s.iter().copied().collect()).unwrap_or_default()
    }
}

/// Roots whose tree contains `e`, each paired with the endpoint whose path to
/// the root survives the failure.
pub fn affected_spts(index: &SptIndex, trees: &[ShortestPathTree], e: EdgeId) -> Vec<(NodeId, NodeId)> {
    index
        .roots_of(e)
        .into_iter()
        .filter_map(|r| {
            let t = &trees[r];
            t.child_endpoint(e).map(|c| (r, e.other(c)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(n: usize, t: &[(usize, usize, u64)]) -> Graph {
        Graph::from_edges(n, t).unwrap()
    }

    #[test]
    fn star_and_tie_break() {
        let star = g(4, &[(0, 1, 1), (0, 2, 1), (0, 3, 1)]);
        let t = build_spt(&star, 0);
        assert!((1..4).all(|v| t.parent[v] == Some(0)));
        let tri = g(3, &[(0, 1, 1), (1, 2, 1), (0, 2, 1)]);
        assert_eq!(build_spt(&tri, 0).parent[2], Some(0));
        let sq = g(4, &[(0, 1, 1), (1, 2, 1), (2, 3, 1), (3, 0, 1)]);
        // node 2 from root 0 ties between parents 1 and 3 -> 1
        assert_eq!(build_spt(&sq, 0).parent[2], Some(1));
    }

    #[test]
    fn non_tree_failure_is_identity() {
        let mut gr = g(3, &[(0, 1, 1), (1, 2, 1), (0, 2, 10)]);
        let mut t = build_spt(&gr, 0);
        let before = t.clone();
        gr.fail_edge(EdgeId::new(0, 2)).unwrap();
        let d = update_spt(&mut t, EdgeId::new(0, 2), &gr);
        assert!(d.is_empty());
        assert_eq!(t, before);
    }

    #[test]
    fn reparent_after_failure() {
        let mut gr = g(3, &[(0, 1, 1), (1, 2, 1), (0, 2, 3)]);
        let mut t = build_spt(&gr, 0);
        gr.fail_edge(EdgeId::new(1, 2)).unwrap();
        let d = update_spt(&mut t, EdgeId::new(1, 2), &gr);
        assert_eq!(t.parent[2], Some(0));
        assert_eq!(t.dist[2], 3);
        assert_eq!(d.removed, vec![EdgeId::new(1, 2)]);
        assert_eq!(d.added, vec![EdgeId::new(0, 2)]);
    }

    #[test]
    fn cycle_detour() {
        let mut gr = g(3, &[(0, 1, 1), (1, 2, 1), (0, 2, 10)]);
        let mut t = build_spt(&gr, 0);
        gr.fail_edge(EdgeId::new(0, 1)).unwrap();
        update_spt(&mut t, EdgeId::new(0, 1), &gr);
        assert_eq!(t.dist[1], 11);
        assert_eq!(t.parent[1], Some(2));
        assert_eq!(t, build_spt(&gr, 0));
    }

    #[test]
    fn affected_on_path() {
        let gr = g(3, &[(0, 1, 1), (1, 2, 1)]);
        let trees: Vec<_> = (0..3).map(|r| build_spt(&gr, r)).collect();
        let idx = SptIndex::build(&trees);
        let a = affected_spts(&idx, &trees, EdgeId::new(0, 1));
        assert_eq!(a, vec![(0, 0), (1, 1), (2, 1)]);
        let tri = g(3, &[(0, 1, 1), (1, 2, 1), (0, 2, 5)]);
        let trees: Vec<_> = (0..3).map(|r| build_spt(&tri, r)).collect();
        let idx = SptIndex::build(&trees);
        assert!(affected_spts(&idx, &trees, EdgeId::new(0, 2)).is_empty());
    }
}
