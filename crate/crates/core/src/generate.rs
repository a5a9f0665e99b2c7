//! Graph generators used by scenarios and tests.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Graph, GraphError, NodeId, Weight};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GraphSpec {
    Ring { n: usize },
    Path { n: usize },
    Grid { rows: usize, cols: usize },
    Random { n: usize, p_percent: u32 },
    Tree { n: usize },
    /// Edge list given inline in `u v w` format.
    EdgeList { text: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightRange {
    pub min: Weight,
    pub max: Weight,
}

impl Default for WeightRange {
    fn default() -> Self {
        WeightRange { min: 1, max: 1 }
    }
}

#[derive(Debug, Error)]
pub enum GenerateError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("no connected graph after {0} attempts")]
    RetriesExhausted(usize),
    #[error("invalid generator parameters: {0}")]
    Params(String),
}

const MAX_RETRIES: usize = 200;

fn draw(rng: &mut ChaCha8Rng, w: WeightRange) -> Weight {
    if w.min >= w.max {
        w.min.max(1)
    } else {
        rng.random_range(w.min.max(1)..=w.max)
    }
}

pub fn ring(n: usize, w: WeightRange, seed: u64) -> Result<Graph, GenerateError> {
    if n < 3 {
        return Err(GenerateError::Params(format!("ring needs n >= 3, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t: Vec<_> = (0..n).map(|i| (i, (i + 1) % n, draw(&mut rng, w))).collect();
    Ok(Graph::from_edges(n, &t)?)
}

pub fn path(n: usize, w: WeightRange, seed: u64) -> Result<Graph, GenerateError> {
    if n < 2 {
        return Err(GenerateError::Params(format!("path needs n >= 2, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t: Vec<_> = (0..n - 1).map(|i| (i, i + 1, draw(&mut rng, w))).collect();
    Ok(Graph::from_edges(n, &t)?)
}

pub fn grid(rows: usize, cols: usize, w: WeightRange, seed: u64) -> Result<Graph, GenerateError> {
    if rows == 0 || cols == 0 || rows * cols < 2 {
        return Err(GenerateError::Params(format!("grid {rows}x{cols} too small")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let id = |r: usize, c: usize| r * cols + c;
    let mut t = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            if c + 1 < cols {
                t.push((id(r, c), id(r, c + 1), draw(&mut rng, w)));
            }
            if r + 1 < rows {
                t.push((id(r, c), id(r + 1, c), draw(&mut rng, w)));
            }
        }
    }
    Ok(Graph::from_edges(rows * cols, &t)?)
}

/// Random spanning tree (each node attaches to a uniformly chosen earlier node).
pub fn tree(n: usize, w: WeightRange, seed: u64) -> Result<Graph, GenerateError> {
    if n < 2 {
        return Err(GenerateError::Params(format!("tree needs n >= 2, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t: Vec<_> = (1..n).map(|v| (rng.random_range(0..v), v, draw(&mut rng, w))).collect();
    Ok(Graph::from_edges(n, &t)?)
}

/// Erdős–Rényi `G(n, p)`, redrawn until connected.
pub fn erdos_renyi(
    n: usize,
    p_percent: u32,
    w: WeightRange,
    seed: u64,
) -> Result<Graph, GenerateError> {
    if n < 2 || p_percent == 0 || p_percent > 100 {
        return Err(GenerateError::Params(format!("random n={n} p={p_percent}%")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_RETRIES {
        let mut t: Vec<(NodeId, NodeId, Weight)> = Vec::new();
        for u in 0..n {
            for v in u + 1..n {
                if rng.random_range(0..100) < p_percent {
                    t.push((u, v, draw(&mut rng, w)));
                }
            }
        }
        let g = Graph::from_edges_unchecked(n, &t)?;
        if g.is_connected() {
            return Ok(g);
        }
    }
    Err(GenerateError::RetriesExhausted(MAX_RETRIES))
}

pub fn build(spec: &GraphSpec, w: WeightRange, seed: u64) -> Result<Graph, GenerateError> {
    match spec {
        GraphSpec::Ring { n } => ring(*n, w, seed),
        GraphSpec::Path { n } => path(*n, w, seed),
        GraphSpec::Grid { rows, cols } => grid(*rows, *cols, w, seed),
        GraphSpec::Random { n, p_percent } => erdos_renyi(*n, *p_percent, w, seed),
        GraphSpec::Tree { n } => tree(*n, w, seed),
        GraphSpec::EdgeList { text } => Ok(Graph::parse(text)?),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ring_and_grid_shapes() {
        let g = ring(16, WeightRange::default(), 1).unwrap();
        assert_eq!(g.edges().len(), 16);
        assert_eq!(g.diameter().unwrap(), 8);
        let g = grid(8, 8, WeightRange::default(), 1).unwrap();
        assert_eq!(g.edges().len(), 2 * 8 * 7);
        assert_eq!(g.diameter().unwrap(), 14);
    }

    #[test]
    fn random_is_connected_and_reproducible() {
        let w = WeightRange { min: 1, max: 5 };
        let a = erdos_renyi(32, 20, w, 7).unwrap();
        let b = erdos_renyi(32, 20, w, 7).unwrap();
        assert!(a.is_connected());
        assert_eq!(a.to_edge_list(), b.to_edge_list());
    }

    #[test]
    fn rejects_bad_params() {
        assert!(ring(2, WeightRange::default(), 0).is_err());
        assert!(erdos_renyi(10, 0, WeightRange::default(), 0).is_err());
    }
}
