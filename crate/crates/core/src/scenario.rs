//! Scenario files, workload generation and the run driver.

use std::collections::BTreeSet;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::generate::{self, GenerateError, GraphSpec, WeightRange};
use crate::graph::{EdgeId, Graph, NodeId, Weight};
use crate::message::Time;
use crate::partition::{Hierarchy, Mode, PartitionError};
use crate::sim::{OpKind, PathEntry, Sim, SimConfig, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestKind {
    Lookup,
    Move,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Request {
    pub kind: RequestKind,
    pub node: NodeId,
    /// Issue time in concurrent workloads; ignored when sequential.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub at: Option<Time>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureSpec {
    pub edge: (NodeId, NodeId),
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub at: Option<Time>,
    /// Fail right after this request completes (sequential workloads).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub after_request: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub graph: GraphSpec,
    #[serde(default)]
    pub weights: WeightRange,
    #[serde(default)]
    pub graph_seed: u64,
    pub mode: Mode,
    pub rho: u64,
    /// Seed for the hierarchy construction.
    pub seed: u64,
    pub publish: NodeId,
    pub requests: Vec<Request>,
    pub sequential: bool,
    #[serde(default)]
    pub failures: Vec<FailureSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<Time>,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Generate(#[from] GenerateError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("could not draw a connectivity-preserving failure schedule after {0} attempts")]
    NoValidSchedule(usize),
}

impl Scenario {
    pub fn graph(&self) -> Result<Graph, ScenarioError> {
        Ok(generate::build(&self.graph, self.weights, self.graph_seed)?)
    }

    fn validate(&self, g: &Graph) -> Result<(), ScenarioError> {
        let n = g.n();
        if self.publish >= n || self.requests.iter().any(|r| r.node >= n) {
            return Err(ScenarioError::Invalid("request node out of range".into()));
        }
        if self.rho < 2 {
            return Err(ScenarioError::Invalid(format!("rho must be at least 2, got {}", self.rho)));
        }
        for f in &self.failures {
            if g.edge(EdgeId::new(f.edge.0, f.edge.1)).is_none() {
                return Err(ScenarioError::Invalid(format!("no edge {:?}", f.edge)));
            }
            if f.at.is_none() && f.after_request.is_none() {
                return Err(ScenarioError::Invalid(format!("failure {:?} has no time", f.edge)));
            }
        }
        Ok(())
    }
}

/// A finished run.
pub struct RunOutput {
    pub sim: Sim,
    pub path: Result<Vec<PathEntry>, SimError>,
}

impl RunOutput {
    pub fn all_completed(&self) -> bool {
        self.sim.ops.iter().all(|o| o.done() && !o.stuck)
    }
}

/// Builds the graph and hierarchy, then runs the workload.
pub fn run_scenario(sc: &Scenario) -> Result<RunOutput, ScenarioError> {
    let g = sc.graph()?;
    sc.validate(&g)?;
    let hier = Hierarchy::build(&g, sc.rho, sc.mode, sc.seed)?;
    let mut sim = Sim::new(g, hier, SimConfig { horizon: sc.horizon });
    let publish = sim.add_op(OpKind::Publish, sc.publish);
    let ids: Vec<_> = sc
        .requests
        .iter()
        .map(|r| {
            let kind = match r.kind {
                RequestKind::Lookup => OpKind::Lookup,
                RequestKind::Move => OpKind::Move,
            };
            sim.add_op(kind, r.node)
        })
        .collect();
    for f in sc.failures.iter().filter(|f| f.after_request.is_none()) {
        sim.schedule_failure(f.at.unwrap(), EdgeId::new(f.edge.0, f.edge.1));
    }
    sim.schedule_issue(0, publish);
    if sc.sequential {
        run_until_done(&mut sim, publish)?;
        sim.snapshot_path(Some(publish));
        for (k, &op) in ids.iter().enumerate() {
            sim.schedule_issue(sim.now(), op);
            run_until_done(&mut sim, op)?;
            sim.snapshot_path(Some(op));
            for f in sc.failures.iter().filter(|f| f.after_request == Some(k)) {
                sim.schedule_failure(sim.now(), EdgeId::new(f.edge.0, f.edge.1));
            }
        }
    } else {
        for (r, &op) in sc.requests.iter().zip(&ids) {
            sim.schedule_issue(r.at.unwrap_or(0), op);
        }
        for f in sc.failures.iter().filter(|f| f.after_request.is_some()) {
            sim.schedule_failure(f.at.unwrap_or(0), EdgeId::new(f.edge.0, f.edge.1));
        }
    }
    sim.run()?;
    sim.snapshot_path(None);
    let path = sim.path_view();
    Ok(RunOutput { sim, path })
}

fn run_until_done(sim: &mut Sim, op: usize) -> Result<(), SimError> {
    while !sim.ops[op].done() {
        if !sim.step()? {
            break;
        }
    }
    Ok(())
}

/// `Σ d(v_i, v_{i+1})` over the publish origin followed by the movers, with
/// each distance taken on the graph as it stands when that move is issued.
/// `graphs[i]` is the graph at the time of the i-th move.
pub fn optimal_move_cost(origin: NodeId, movers: &[NodeId], graphs: &[&Graph]) -> Weight {
    let mut prev = origin;
    let mut total = 0;
    for (i, &v) in movers.iter().enumerate() {
        let g = graphs[i.min(graphs.len() - 1)];
        total += g.shortest_path_distance(prev, v).expect("connected graph");
        prev = v;
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphKind {
    Ring,
    Grid,
    Random,
}

impl std::str::FromStr for GraphKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "ring" => Ok(GraphKind::Ring),
            "grid" => Ok(GraphKind::Grid),
            "random" => Ok(GraphKind::Random),
            _ => Err(format!("unknown graph kind {s:?} (ring, grid, random)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenParams {
    pub n: usize,
    /// Edge probability in percent for random graphs.
    pub p_percent: u32,
    pub weights: WeightRange,
    pub mode: Mode,
    pub rho: u64,
    pub moves: usize,
    pub lookups: usize,
    pub failures: usize,
    pub sequential: bool,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            n: 16,
            p_percent: 20,
            weights: WeightRange { min: 1, max: 4 },
            mode: Mode::Strong,
            rho: 2,
            moves: 8,
            lookups: 8,
            failures: 1,
            sequential: true,
        }
    }
}

const SCHEDULE_RETRIES: usize = 64;

/// Draws a graph, a workload and a failure schedule that keeps the graph
/// connected throughout.
pub fn generate_scenario(kind: GraphKind, p: &GenParams, seed: u64) -> Result<Scenario, ScenarioError> {
    let graph = match kind {
        GraphKind::Ring => GraphSpec::Ring { n: p.n },
        GraphKind::Grid => {
            let rows = (p.n as f64).sqrt().floor().max(1.0) as usize;
            GraphSpec::Grid { rows, cols: p.n.div_ceil(rows) }
        }
        GraphKind::Random => GraphSpec::Random { n: p.n, p_percent: p.p_percent },
    };
    let g = generate::build(&graph, p.weights, seed)?;
    let n = g.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_f00d);
    let publish = rng.random_range(0..n);
    let mut requests = Vec::new();
    let total = p.moves + p.lookups;
    let mut kinds: Vec<RequestKind> =
        std::iter::repeat_n(RequestKind::Move, p.moves).chain(std::iter::repeat_n(RequestKind::Lookup, p.lookups)).collect();
    // interleave deterministically
    for i in (1..kinds.len()).rev() {
        let j = rng.random_range(0..=i);
        kinds.swap(i, j);
    }
    let horizon_guess = g.diameter().unwrap_or(1).max(1) * 4;
    for kind in kinds {
        let at = (!p.sequential).then(|| rng.random_range(0..=horizon_guess));
        requests.push(Request { kind, node: rng.random_range(0..n), at });
    }
    let failures = draw_failures(&g, p.failures, total, p.sequential, horizon_guess, &mut rng)?;
    Ok(Scenario {
        name: format!("{kind:?}-n{n}-s{seed}").to_lowercase(),
        graph,
        weights: p.weights,
        graph_seed: seed,
        mode: p.mode,
        rho: p.rho,
        seed,
        publish,
        requests,
        sequential: p.sequential,
        failures,
        horizon: None,
    })
}

fn draw_failures(
    g: &Graph,
    f: usize,
    requests: usize,
    sequential: bool,
    horizon: Time,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<FailureSpec>, ScenarioError> {
    if f == 0 {
        return Ok(Vec::new());
    }
    let edges: Vec<EdgeId> = g.alive_edges().map(|e| e.id).collect();
    for _ in 0..SCHEDULE_RETRIES {
        let picked: Vec<EdgeId> = edges.choose_multiple(rng, f.min(edges.len())).copied().collect();
        if picked.len() < f {
            break;
        }
        let mut h = g.clone();
        if picked.iter().all(|&e| h.connected_without(&[e]) && h.fail_edge(e).is_ok()) {
            let mut slots: BTreeSet<usize> = BTreeSet::new();
            let out = picked
                .into_iter()
                .map(|e| {
                    let (at, after) = if sequential {
                        let mut k = rng.random_range(0..requests.max(1));
                        while slots.contains(&k) && slots.len() < requests {
                            k = (k + 1) % requests.max(1);
                        }
                        slots.insert(k);
                        (None, Some(k))
                    } else {
                        (Some(rng.random_range(0..=horizon)), None)
                    };
                    FailureSpec { edge: (e.lo, e.hi), at, after_request: after }
                })
                .collect();
            return Ok(out);
        }
    }
    Err(ScenarioError::NoValidSchedule(SCHEDULE_RETRIES))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn optimal_cost_on_unit_path() {
        let g = generate::path(3, WeightRange::default(), 0).unwrap();
        assert_eq!(optimal_move_cost(0, &[0], &[&g]), 0);
        assert_eq!(optimal_move_cost(0, &[1, 2], &[&g]), 2);
    }

    #[test]
    fn tree_failure_rejected() {
        let g = generate::tree(12, WeightRange::default(), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(draw_failures(&g, 1, 4, true, 10, &mut rng).is_err());
    }

    #[test]
    fn scenario_roundtrips_json() {
        let sc = generate_scenario(GraphKind::Ring, &GenParams::default(), 4).unwrap();
        let text = serde_json::to_string_pretty(&sc).unwrap();
        let back: Scenario = serde_json::from_str(&text).unwrap();
        assert_eq!(sc, back);
    }
}
