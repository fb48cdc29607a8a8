use std::fmt::Write as _;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::encoder::{encode_graph, EncoderParams};
use crate::error::{Error, Result};
use crate::graph::{GraphDataset, LocoSplit};
use crate::par::Exec;

/// Two-component principal component projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    pub mean: Array1<f64>,
    /// 2 × d, rows are unit principal axes (zero rows when d < 2).
    pub components: Array2<f64>,
    pub explained_variance: [f64; 2],
}

impl Pca {
    pub fn fit(x: ArrayView2<f64>) -> Result<Self> {
        let (n, d) = x.dim();
        if n == 0 || d == 0 {
            return Err(Error::contract("PCA needs at least one non-empty row"));
        }
        let mean = x.mean_axis(ndarray::Axis(0)).expect("n > 0");
        let centered = &x - &mean;
        let denom = (n.max(2) - 1) as f64;
        let cov = centered.t().dot(&centered) / denom;
        let eig = SymmetricEigen::new(DMatrix::from_fn(d, d, |i, j| cov[[i, j]]));
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        let mut components = Array2::zeros((2, d));
        let mut explained_variance = [0.0; 2];
        for (k, &idx) in order.iter().take(2).enumerate() {
            let v = eig.eigenvectors.column(idx);
            // Sign convention: the largest-magnitude entry is positive.
            let pivot = (0..d)
                .max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs()).then(b.cmp(&a)))
                .expect("d > 0");
            let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
            for j in 0..d {
                components[[k, j]] = sign * v[j];
            }
            explained_variance[k] = eig.eigenvalues[idx].max(0.0);
        }
        Ok(Self {
            mean,
            components,
            explained_variance,
        })
    }

    pub fn transform(&self, z: ArrayView1<f64>) -> [f64; 2] {
        let c = &z - &self.mean;
        let p = self.components.dot(&c);
        [p[0], p[1]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingRole {
    Id,
    Ood,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRow {
    pub graph_id: usize,
    pub role: EmbeddingRole,
    pub class: usize,
    pub z: Vec<f64>,
    pub pca: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingExport {
    pub rows: Vec<EmbeddingRow>,
    pub pca: Pca,
}

impl EmbeddingExport {
    /// Header `graph_id,role,class,z_1..z_h,pca_1,pca_2`.
    pub fn to_csv(&self) -> String {
        let h = self.pca.mean.len();
        let mut out = String::from("graph_id,role,class");
        for i in 1..=h {
            let _ = write!(out, ",z_{i}");
        }
        out.push_str(",pca_1,pca_2\n");
        for r in &self.rows {
            let role = match r.role {
                EmbeddingRole::Id => "id",
                EmbeddingRole::Ood => "ood",
            };
            let _ = write!(out, "{},{role},{}", r.graph_id, r.class);
            for v in &r.z {
                let _ = write!(out, ",{v}");
            }
            let _ = writeln!(out, ",{},{}", r.pca[0], r.pca[1]);
        }
        out
    }
}

/// Embeds the ID (train and validation) and OOD graphs of `split`, fitting
/// PCA on the ID part only. Rows are ordered by graph id; `class` is the
/// original class index.
pub fn export_embeddings(p: &EncoderParams, split: &LocoSplit, d: &GraphDataset, exec: Exec) -> Result<EmbeddingExport> {
    let mut items: Vec<(usize, EmbeddingRole)> = split
        .train_ids
        .iter()
        .chain(&split.val_ids)
        .map(|&i| (i, EmbeddingRole::Id))
        .chain(split.ood_ids.iter().map(|&i| (i, EmbeddingRole::Ood)))
        .collect();
    items.sort_unstable_by_key(|item| item.0);
    let z = exec
        .map(&items, |&(i, _)| encode_graph(p, &d.graphs[i], None))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let id_rows: Vec<_> = items
        .iter()
        .zip(&z)
        .filter(|((_, r), _)| *r == EmbeddingRole::Id)
        .map(|(_, z)| z.view())
        .collect();
    let id = ndarray::stack(ndarray::Axis(0), &id_rows).map_err(|e| Error::contract(e.to_string()))?;
    let pca = Pca::fit(id.view())?;
    let rows = items
        .into_iter()
        .zip(z)
        .map(|((graph_id, role), z)| EmbeddingRow {
            graph_id,
            role,
            class: d.graphs[graph_id].label,
            pca: pca.transform(z.view()),
            z: z.to_vec(),
        })
        .collect();
    Ok(EmbeddingExport { rows, pca })
}
