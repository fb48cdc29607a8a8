use ndarray::Array2;

use crate::graph::Graph;

/// Symmetric-normalised adjacency with self-loops, D̃^{-1/2}(A+I)D̃^{-1/2},
/// stored row-wise as sparse entries.
#[derive(Debug, Clone)]
pub struct NormAdjacency {
    rows: Vec<Vec<(usize, f64)>>,
}

pub fn normalize_adjacency(g: &Graph) -> NormAdjacency {
    let nbrs = g.neighbours();
    let deg: Vec<f64> = nbrs.iter().map(|l| l.len() as f64 + 1.0).collect();
    let rows = nbrs
        .iter()
        .enumerate()
        .map(|(i, list)| {
            let mut row = Vec::with_capacity(list.len() + 1);
            row.push((i, 1.0 / deg[i]));
            row.extend(list.iter().map(|&j| (j, 1.0 / (deg[i] * deg[j]).sqrt())));
            row.sort_unstable_by_key(|e| e.0);
            row
        })
        .collect();
    NormAdjacency { rows }
}

impl NormAdjacency {
    pub fn num_nodes(&self) -> usize {
        self.rows.len()
    }

    /// Â · h. Â is symmetric, so this is also Âᵀ · h.
    pub fn propagate(&self, h: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros(h.raw_dim());
        for (i, row) in self.rows.iter().enumerate() {
            let mut dst = out.row_mut(i);
            for &(j, w) in row {
                dst.scaled_add(w, &h.row(j));
            }
        }
        out
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let n = self.num_nodes();
        let mut a = Array2::zeros((n, n));
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, w) in row {
                a[[i, j]] = w;
            }
        }
        a
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn isolated_node() {
        let g = Graph::unattributed(1, [], 0, 0).unwrap();
        assert_eq!(normalize_adjacency(&g).to_dense(), ndarray::array![[1.0]]);
    }

    #[test]
    fn single_edge_is_all_halves() {
        let g = Graph::unattributed(2, [(0, 1)], 0, 0).unwrap();
        let a = normalize_adjacency(&g).to_dense();
        assert!(a.iter().all(|&v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn triangle_is_all_thirds() {
        let g = Graph::unattributed(3, [(0, 1), (1, 2), (0, 2)], 0, 0).unwrap();
        let a = normalize_adjacency(&g).to_dense();
        assert!(a.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn propagate_matches_dense_product() {
        let g = Graph::unattributed(5, [(0, 1), (1, 2), (2, 3), (1, 4), (0, 4)], 0, 0).unwrap();
        let adj = normalize_adjacency(&g);
        let dense = adj.to_dense();
        assert_eq!(dense, dense.t());
        let h = Array2::from_shape_fn((5, 3), |(i, j)| (i as f64 - 2.0) * 0.3 + j as f64);
        let sparse = adj.propagate(&h);
        let full = dense.dot(&h);
        for (a, b) in sparse.iter().zip(full.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-14);
        }
    }
}
