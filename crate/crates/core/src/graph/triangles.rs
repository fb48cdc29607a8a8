//! Synthetic TRIANGLES generator: class `k` holds graphs with exactly `k + 1`
//! triangles.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{count_triangles, Graph, GraphDataset};
use crate::error::{Error, Result};
use crate::rng::{seeded, Rng};

pub const NUM_CLASSES: usize = 10;
/// Rejection-sampling budget per generated graph.
pub const MAX_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrianglesConfig {
    pub per_class: usize,
    /// Inclusive node-count interval.
    pub node_range: (usize, usize),
    pub seed: u64,
}

impl Default for TrianglesConfig {
    fn default() -> Self {
        Self {
            per_class: 30,
            node_range: (10, 30),
            seed: 0,
        }
    }
}

fn choose3(n: usize) -> f64 {
    let n = n as f64;
    n * (n - 1.0) * (n - 2.0) / 6.0
}

/// Samples one graph with exactly `target` triangles.
///
/// Each attempt draws a node count from `node_range` and an Erdős–Rényi
/// graph whose edge probability makes the expected triangle count equal to
/// `target`; the draw is kept only if the exact count matches.
pub fn generate_graph_with_triangles(
    target: usize,
    node_range: (usize, usize),
    label: usize,
    rng: &mut Rng,
) -> Result<Graph> {
    let (lo, hi) = node_range;
    for _ in 0..MAX_ATTEMPTS {
        let n = rng.random_range(lo..=hi);
        let capacity = choose3(n);
        if (target as f64) > capacity {
            continue;
        }
        let p = (target as f64 / capacity).cbrt().min(1.0);
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.random::<f64>() < p {
                    edges.push((i, j));
                }
            }
        }
        let g = Graph::unattributed(n, edges, label, 0)?;
        if count_triangles(&g) == target {
            return Ok(g);
        }
    }
    Err(Error::Generation {
        class: label,
        msg: format!(
            "no graph with {target} triangles on {lo}..={hi} nodes after {MAX_ATTEMPTS} attempts"
        ),
    })
}

/// Builds the 10-class dataset, `per_class` graphs per class, deterministic in `seed`.
pub fn generate_triangles_dataset(cfg: &TrianglesConfig) -> Result<GraphDataset> {
    let (lo, hi) = cfg.node_range;
    if cfg.per_class == 0 {
        return Err(Error::InvalidDataset("per_class must be at least 1".into()));
    }
    if lo < 4 || hi > 64 || lo > hi {
        return Err(Error::InvalidDataset(format!(
            "node range [{lo}, {hi}] must lie within [4, 64]"
        )));
    }
    let mut rng = seeded(cfg.seed);
    let mut graphs = Vec::with_capacity(NUM_CLASSES * cfg.per_class);
    for class in 0..NUM_CLASSES {
        for _ in 0..cfg.per_class {
            graphs.push(generate_graph_with_triangles(class + 1, cfg.node_range, class, &mut rng)?);
        }
    }
    GraphDataset::new("TRIANGLES", graphs, NUM_CLASSES, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k4_is_the_only_four_node_graph_with_four_triangles() {
        let mut rng = seeded(3);
        let g = generate_graph_with_triangles(4, (4, 4), 3, &mut rng).unwrap();
        assert_eq!(g.num_edges(), 6);
        assert_eq!(count_triangles(&g), 4);
    }

    #[test]
    fn infeasible_class_is_reported() {
        let cfg = TrianglesConfig {
            per_class: 1,
            node_range: (4, 4),
            seed: 0,
        };
        // 4 nodes carry 0, 1, 2 or 4 triangles; 3 is impossible.
        match generate_triangles_dataset(&cfg) {
            Err(Error::Generation { class, .. }) => assert_eq!(class, 2),
            other => panic!("expected generation error, got {other:?}"),
        }
    }

    #[test]
    fn labels_match_oracle_and_generation_is_deterministic() {
        let cfg = TrianglesConfig {
            per_class: 30,
            node_range: (10, 30),
            seed: 0,
        };
        let d = generate_triangles_dataset(&cfg).unwrap();
        assert_eq!(d.len(), 300);
        assert!(d.graphs.iter().all(|g| count_triangles(g) == g.label + 1));
        let again = generate_triangles_dataset(&cfg).unwrap();
        assert_eq!(d.to_json().unwrap(), again.to_json().unwrap());
    }

    #[test]
    fn rejects_bad_ranges() {
        for range in [(3, 10), (10, 65), (20, 10)] {
            let cfg = TrianglesConfig {
                per_class: 1,
                node_range: range,
                seed: 0,
            };
            assert!(generate_triangles_dataset(&cfg).is_err());
        }
    }
}
