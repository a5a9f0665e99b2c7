use std::collections::BTreeSet;

use ftdir_core::generate::{erdos_renyi, WeightRange};
use ftdir_core::graph::{EdgeId, Graph, Weight};
use ftdir_core::message::{CostKey, Payload, SizeClass};
use ftdir_core::partition::{verify_partition, Hierarchy, Mode};
use ftdir_core::scenario::optimal_move_cost;
use ftdir_core::spt::{build_spt, update_spt};
use ftdir_core::{Sim, SimConfig};
use proptest::prelude::*;

/// All-pairs distances by Floyd–Warshall over alive edges.
fn floyd(g: &Graph) -> Vec<Vec<Option<Weight>>> {
    let n = g.n();
    let mut d = vec![vec![None; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = Some(0);
    }
    for e in g.alive_edges() {
        let (a, b) = (e.id.lo, e.id.hi);
        let w = Some(d[a][b].map_or(e.weight, |x: Weight| x.min(e.weight)));
        d[a][b] = w;
        d[b][a] = w;
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if let (Some(a), Some(b)) = (d[i][k], d[k][j]) {
                    if d[i][j].is_none_or(|c| a + b < c) {
                        d[i][j] = Some(a + b);
                    }
                }
            }
        }
    }
    d
}

fn graph_strategy() -> impl Strategy<Value = (Graph, u64)> {
    (4usize..=32, 15u32..=45, 1u64..=6, any::<u64>()).prop_map(|(n, p, wmax, seed)| {
        (erdos_renyi(n, p, WeightRange { min: 1, max: wmax }, seed).unwrap(), seed)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn repaired_spt_equals_rebuild((g, seed) in graph_strategy(), picks in prop::collection::vec(any::<prop::sample::Index>(), 1..5)) {
        let n = g.n();
        let mut g = g;
        let mut trees: Vec<_> = (0..n).map(|r| build_spt(&g, r)).collect();
        let _ = seed;
        for pick in picks {
            let alive: Vec<EdgeId> = g.alive_edges().map(|e| e.id).filter(|&e| g.connected_without(&[e])).collect();
            if alive.is_empty() {
                break;
            }
            let e = *pick.get(&alive);
            g.fail_edge(e).unwrap();
            for t in trees.iter_mut() {
                if t.contains_edge(e) {
                    update_spt(t, e, &g);
                }
            }
            let oracle = floyd(&g);
            for (r, t) in trees.iter().enumerate() {
                let fresh = build_spt(&g, r);
                prop_assert_eq!(&t.dist, &fresh.dist);
                for v in 0..n {
                    prop_assert_eq!(Some(t.dist[v]), oracle[r][v]);
                }
                prop_assert_eq!(t, &fresh);
            }
        }
    }

    #[test]
    fn distances_never_shrink_under_deletion((g, _s) in graph_strategy(), pick in any::<prop::sample::Index>()) {
        let edges: Vec<EdgeId> = g.alive_edges().map(|e| e.id).filter(|&e| g.connected_without(&[e])).collect();
        prop_assume!(!edges.is_empty());
        let before = floyd(&g);
        let mut h = g.clone();
        h.fail_edge(*pick.get(&edges)).unwrap();
        let after = floyd(&h);
        for u in 0..g.n() {
            for v in 0..g.n() {
                prop_assert!(after[u][v].unwrap() >= before[u][v].unwrap());
            }
        }
    }

    #[test]
    fn fresh_hierarchy_is_a_valid_partition((g, seed) in graph_strategy(), rho in 2u64..=4, weak in any::<bool>()) {
        let mode = if weak { Mode::Weak } else { Mode::Strong };
        let h = Hierarchy::build(&g, rho, mode, seed).unwrap();
        let rep = verify_partition(&h, &g, false);
        prop_assert!(rep.pass());
        prop_assert_eq!(rep.sigma_achieved, h.sigma);
        prop_assert_eq!(rep.intersect_achieved, h.intersect);
        for i in -1..=h.top {
            let mut seen = BTreeSet::new();
            for c in h.level_clusters(i) {
                prop_assert!(c.members.contains(&c.leader));
                prop_assert_eq!(c.tree.root, c.leader);
                for &m in &c.members {
                    prop_assert!(seen.insert(m), "node {} in two clusters at level {}", m, i);
                    prop_assert!(c.tree.contains(m));
                    prop_assert_eq!(h.cluster_of(m, i), c.id);
                }
            }
            prop_assert_eq!(seen.len(), g.n());
        }
        prop_assert_eq!(h.level_clusters(h.top).len(), 1);
    }

    #[test]
    fn message_cost_is_graph_distance((g, seed) in graph_strategy(), a in any::<prop::sample::Index>(), b in any::<prop::sample::Index>()) {
        let n = g.n();
        let (u, v) = (a.index(n), b.index(n));
        let oracle = floyd(&g)[u][v].unwrap();
        let h = Hierarchy::build(&g, 2, Mode::Strong, seed).unwrap();
        let mut sim = Sim::new(g, h, SimConfig::default());
        let key = CostKey::Op { op: 0 };
        sim.send(u, v, key, SizeClass::Constant, Payload::Wake { level: 0 });
        sim.run().unwrap();
        let e = sim.ledger.get(key);
        prop_assert_eq!(e.messages, 1);
        prop_assert_eq!(e.weighted_cost, oracle);
        prop_assert_eq!(sim.now(), oracle);
    }

    #[test]
    fn optimal_move_cost_matches_oracle((g, _s) in graph_strategy(), movers in prop::collection::vec(any::<prop::sample::Index>(), 1..12)) {
        let n = g.n();
        let seq: Vec<usize> = movers.iter().map(|i| i.index(n)).collect();
        let d = floyd(&g);
        let mut expect = 0;
        let mut prev = 0;
        for &v in &seq {
            expect += d[prev][v].unwrap();
            prev = v;
        }
        prop_assert_eq!(optimal_move_cost(0, &seq, &[&g]), expect);
    }
}
