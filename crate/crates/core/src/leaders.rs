//! Per-node knowledge of which cluster and leader every nearby node has.
//!
//! Node `v` keeps, for each base level `i`, the cluster and leader of every
//! node within `r_i`. Lookups and moves derive `P_i(v)` from this table, so
//! it may lag behind the hierarchy until refresh messages arrive.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::graph::{NodeId, Weight};
use crate::partition::{ClusterId, Hierarchy, Level};
use crate::spt::ShortestPathTree;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LeaderDirectory {
    /// `tables[v][base level][x] = (cluster, leader)`.
    tables: Vec<BTreeMap<Level, BTreeMap<NodeId, (ClusterId, NodeId)>>>,
}

/// Believed cluster in a node's neighborhood.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnownCluster {
    pub cluster: ClusterId,
    pub leader: NodeId,
    /// Neighborhood nodes believed to be in the cluster.
    pub members: Vec<NodeId>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SetupCost {
    pub messages: u64,
    pub weighted_cost: u64,
}

/// Largest radius among the levels that read `base`'s clusters.
pub fn alias_radius(h: &Hierarchy, base: Level) -> Weight {
    h.levels
        .iter()
        .filter(|li| li.level == base || li.copy_of == Some(base))
        .map(|li| h.radius(li.level))
        .max()
        .unwrap_or(0)
}

/// Fills every node's tables from the hierarchy. Each node queries every node
/// within `r_i` and gets a reply, so the setup cost is `2 d(u, x)` per pair.
pub fn preprocess_leaders(h: &Hierarchy, spts: &[ShortestPathTree]) -> (LeaderDirectory, SetupCost) {
    let n = h.n();
    let mut dir = LeaderDirectory { tables: vec![BTreeMap::new(); n] };
    let mut cost = SetupCost::default();
    for li in &h.levels {
        if li.copy_of.is_some() {
            continue;
        }
        let i = li.level;
        let r = alias_radius(h, i);
        for v in 0..n {
            let mut row = BTreeMap::new();
            for x in 0..n {
                let d = spts[v].dist[x];
                if d <= r {
                    row.insert(x, (h.cluster_of(x, i), h.leader_of(x, i)));
                    if x != v {
                        cost.messages += 2;
                        cost.weighted_cost += 2 * d;
                    }
                }
            }
            dir.tables[v].insert(i, row);
        }
    }
    (dir, cost)
}

impl LeaderDirectory {
    /// What `v` believes about `x` at base level `base`.
    pub fn get(&self, v: NodeId, base: Level, x: NodeId) -> Option<(ClusterId, NodeId)> {
        self.tables[v].get(&base).and_then(|row| row.get(&x)).copied()
    }

    /// Records newer knowledge. Cluster ids only grow along splits, so an
    /// older update never overwrites a newer one.
    pub fn learn(&mut self, v: NodeId, base: Level, x: NodeId, cluster: ClusterId, leader: NodeId) {
        let row = self.tables[v].entry(base).or_default();
        match row.get(&x) {
            Some(&(c, _)) if c > cluster => {}
            _ => {
                row.insert(x, (cluster, leader));
            }
        }
    }

    /// Overwrites knowledge unconditionally (used when levels are rebuilt).
    pub fn set(&mut self, v: NodeId, base: Level, x: NodeId, cluster: ClusterId, leader: NodeId) {
        self.tables[v].entry(base).or_default().insert(x, (cluster, leader));
    }

    /// `P_i(v)` as `v` currently believes it: clusters of nodes within `r`
    /// according to `v`'s own shortest path distances.
    pub fn neighborhood_clusters(
        &self,
        v: NodeId,
        base: Level,
        r: Weight,
        dist: &[Weight],
    ) -> Vec<KnownCluster> {
        let mut by_cluster: BTreeMap<ClusterId, KnownCluster> = BTreeMap::new();
        let Some(row) = self.tables[v].get(&base) else {
            return Vec::new();
        };
        for (&x, &(c, l)) in row {
            if dist[x] <= r {
                by_cluster
                    .entry(c)
                    .or_insert_with(|| KnownCluster { cluster: c, leader: l, members: Vec::new() })
                    .members
                    .push(x);
            }
        }
        by_cluster.into_values().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate::{ring, WeightRange};
    use crate::graph::Graph;
    use crate::partition::Mode;
    use crate::spt::build_spt;

    #[test]
    fn single_edge_and_level_minus_one() {
        let g = Graph::from_edges(2, &[(0, 1, 1)]).unwrap();
        let h = Hierarchy::build(&g, 2, Mode::Strong, 0).unwrap();
        let spts: Vec<_> = (0..2).map(|r| build_spt(&g, r)).collect();
        let (dir, _) = preprocess_leaders(&h, &spts);
        for v in 0..2 {
            let p0 = dir.neighborhood_clusters(v, 0, h.radius(0), &spts[v].dist);
            assert_eq!(p0.len(), 1);
            assert_eq!(p0[0].members, vec![0, 1]);
            let pm = dir.neighborhood_clusters(v, -1, 0, &spts[v].dist);
            assert_eq!(pm.len(), 1);
            assert_eq!(pm[0].leader, v);
        }
    }

    #[test]
    fn ring_tables_match_hierarchy() {
        let g = ring(16, WeightRange::default(), 0).unwrap();
        let h = Hierarchy::build(&g, 2, Mode::Weak, 9).unwrap();
        let spts: Vec<_> = (0..16).map(|r| build_spt(&g, r)).collect();
        let (dir, cost) = preprocess_leaders(&h, &spts);
        assert!(cost.messages > 0);
        for v in 0..16 {
            for i in -1..=h.top {
                let known: Vec<ClusterId> = dir
                    .neighborhood_clusters(v, i, h.radius(i), &spts[v].dist)
                    .iter()
                    .map(|k| k.cluster)
                    .collect();
                let truth: Vec<ClusterId> =
                    h.true_neighborhood_clusters(&spts[v].dist, i).into_iter().collect();
                assert_eq!(known, truth);
            }
        }
    }
}
