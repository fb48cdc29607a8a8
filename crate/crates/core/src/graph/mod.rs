//! Graph classification datasets.

mod split;
mod triangles;
mod tu;

pub use split::{make_loco_split, stratified_split, LocoSplit, DEFAULT_VAL_FRACTION};
pub use triangles::{
    generate_graph_with_triangles, generate_triangles_dataset, TrianglesConfig, MAX_ATTEMPTS,
};
pub use tu::{parse_tu_dataset, write_tu_dataset};

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One attributed undirected graph.
///
/// Edges are stored once per undirected pair as `(i, j)` with `i < j`, sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    pub node_features: Array2<f64>,
    pub edges: Vec<(usize, usize)>,
    pub label: usize,
    pub graph_id: usize,
}

impl Graph {
    /// Builds a graph, canonicalising edge orientation and order.
    ///
    /// Self-loops, duplicate edges and out-of-range endpoints are rejected.
    pub fn new(
        node_features: Array2<f64>,
        edges: impl IntoIterator<Item = (usize, usize)>,
        label: usize,
        graph_id: usize,
    ) -> Result<Self> {
        let n = node_features.nrows();
        if n == 0 {
            return Err(Error::InvalidGraph(format!("graph {graph_id} has no nodes")));
        }
        if node_features.ncols() == 0 {
            return Err(Error::InvalidGraph(format!("graph {graph_id} has no node features")));
        }
        let mut canon = Vec::new();
        for (i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::InvalidGraph(format!(
                    "graph {graph_id}: edge ({i}, {j}) out of range for {n} nodes"
                )));
            }
            if i == j {
                return Err(Error::InvalidGraph(format!("graph {graph_id}: self-loop at node {i}")));
            }
            canon.push((i.min(j), i.max(j)));
        }
        canon.sort_unstable();
        let before = canon.len();
        canon.dedup();
        if canon.len() != before {
            return Err(Error::InvalidGraph(format!("graph {graph_id}: duplicate edge")));
        }
        Ok(Self {
            node_features,
            edges: canon,
            label,
            graph_id,
        })
    }

    /// Graph with the constant scalar feature 1 on every node.
    pub fn unattributed(
        num_nodes: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        label: usize,
        graph_id: usize,
    ) -> Result<Self> {
        Self::new(Array2::ones((num_nodes, 1)), edges, label, graph_id)
    }

    pub fn num_nodes(&self) -> usize {
        self.node_features.nrows()
    }

    pub fn num_features(&self) -> usize {
        self.node_features.ncols()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Symmetric 0/1 adjacency without self-loops.
    pub fn adjacency(&self) -> Array2<f64> {
        let n = self.num_nodes();
        let mut a = Array2::zeros((n, n));
        for &(i, j) in &self.edges {
            a[[i, j]] = 1.0;
            a[[j, i]] = 1.0;
        }
        a
    }

    /// Neighbour lists, each sorted ascending.
    pub fn neighbours(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.num_nodes()];
        for &(i, j) in &self.edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    /// Same graph with nodes renumbered so that old node `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.num_nodes();
        assert_eq!(perm.len(), n, "permutation length must match node count");
        let mut features = Array2::zeros(self.node_features.raw_dim());
        for i in 0..n {
            features.row_mut(perm[i]).assign(&self.node_features.row(i));
        }
        let edges = self.edges.iter().map(|&(i, j)| (perm[i], perm[j]));
        Self::new(features, edges, self.label, self.graph_id).expect("permutation preserves validity")
    }

    pub fn with_label(&self, label: usize) -> Self {
        Self {
            label,
            ..self.clone()
        }
    }
}

/// Number of triangles, i.e. trace(A³)/6.
///
/// Evaluated by intersecting sorted neighbour lists over each edge, which
/// counts every triangle once per edge.
pub fn count_triangles(g: &Graph) -> usize {
    let adj = g.neighbours();
    let mut total = 0usize;
    for &(i, j) in &g.edges {
        let (a, b) = (&adj[i], &adj[j]);
        let (mut x, mut y) = (0, 0);
        while x < a.len() && y < b.len() {
            match a[x].cmp(&b[y]) {
                std::cmp::Ordering::Less => x += 1,
                std::cmp::Ordering::Greater => y += 1,
                std::cmp::Ordering::Equal => {
                    total += 1;
                    x += 1;
                    y += 1;
                }
            }
        }
    }
    total / 3
}

/// Class names for the benchmark datasets, by dataset name.
pub fn known_class_names(name: &str) -> Option<Vec<String>> {
    let names: &[&str] = match name {
        "ENZYMES" => &[
            "Oxidoreductases",
            "Transferases",
            "Hydrolases",
            "Lyases",
            "Isomerases",
            "Ligases",
        ],
        "IMDB-MULTI" => &["Comedy", "Romance", "Sci-Fi"],
        "REDDIT-MULTI-5K" => &["WorldNews", "Videos", "AdviceAnimals", "Aww", "MildlyInteresting"],
        "REDDIT-MULTI-12K" => &[
            "AskReddit",
            "AdviceAnimals",
            "Atheism",
            "Aww",
            "IAmA",
            "MildlyInteresting",
            "ShowerThoughts",
            "Videos",
            "TodayILearned",
            "WorldNews",
            "TrollXChromosomes",
        ],
        "TRIANGLES" => &["1", "2", "3", "4", "5", "6", "7", "8", "9", "10"],
        _ => return None,
    };
    Some(names.iter().map(|s| s.to_string()).collect())
}

/// Published summary statistics of the full benchmark datasets:
/// (name, graphs, classes, mean nodes, mean edges, features).
pub const REFERENCE_STATS: [(&str, usize, usize, f64, f64, usize); 5] = [
    ("ENZYMES", 600, 6, 32.63, 62.14, 3),
    ("IMDB-MULTI", 1500, 3, 13.00, 65.94, 1),
    ("REDDIT-MULTI-5K", 4999, 5, 508.52, 594.87, 1),
    ("REDDIT-MULTI-12K", 11929, 11, 391.41, 456.89, 1),
    ("TRIANGLES", 45000, 10, 20.85, 32.74, 1),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub num_graphs: usize,
    pub num_classes: usize,
    pub mean_nodes: f64,
    pub mean_edges: f64,
    pub num_features: usize,
    pub class_counts: Vec<usize>,
}

/// A named collection of graphs with class metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphDataset {
    pub name: String,
    pub graphs: Vec<Graph>,
    pub num_classes: usize,
    pub class_names: Vec<String>,
    pub num_features: usize,
    /// Original on-disk label of each compact class index, when labels were remapped.
    pub label_mapping: Option<Vec<i64>>,
}

impl GraphDataset {
    /// Validates and assembles a dataset. Graph ids are reassigned to list positions.
    pub fn new(
        name: impl Into<String>,
        mut graphs: Vec<Graph>,
        num_classes: usize,
        class_names: Option<Vec<String>>,
    ) -> Result<Self> {
        let name = name.into();
        let Some(first) = graphs.first() else {
            return Err(Error::InvalidDataset(format!("{name}: no graphs")));
        };
        let num_features = first.num_features();
        let mut counts = vec![0usize; num_classes];
        for (idx, g) in graphs.iter_mut().enumerate() {
            g.graph_id = idx;
            if g.num_features() != num_features {
                return Err(Error::InvalidDataset(format!(
                    "{name}: graph {idx} has {} features, expected {num_features}",
                    g.num_features()
                )));
            }
            if g.label >= num_classes {
                return Err(Error::InvalidDataset(format!(
                    "{name}: graph {idx} label {} outside [0, {num_classes})",
                    g.label
                )));
            }
            counts[g.label] += 1;
        }
        if let Some(empty) = counts.iter().position(|&c| c == 0) {
            return Err(Error::InvalidDataset(format!("{name}: class {empty} has no graphs")));
        }
        let class_names = match class_names.or_else(|| known_class_names(&name)) {
            Some(names) if names.len() == num_classes => names,
            Some(names) => {
                return Err(Error::InvalidDataset(format!(
                    "{name}: {} class names for {num_classes} classes",
                    names.len()
                )))
            }
            None => (0..num_classes).map(|c| c.to_string()).collect(),
        };
        Ok(Self {
            name,
            graphs,
            num_classes,
            class_names,
            num_features,
            label_mapping: None,
        })
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for g in &self.graphs {
            counts[g.label] += 1;
        }
        counts
    }

    /// Graph ids of each class, ascending.
    pub fn ids_by_class(&self) -> Vec<Vec<usize>> {
        let mut by_class = vec![Vec::new(); self.num_classes];
        for g in &self.graphs {
            by_class[g.label].push(g.graph_id);
        }
        by_class
    }

    pub fn stats(&self) -> DatasetStats {
        let n = self.graphs.len() as f64;
        DatasetStats {
            num_graphs: self.graphs.len(),
            num_classes: self.num_classes,
            mean_nodes: self.graphs.iter().map(|g| g.num_nodes() as f64).sum::<f64>() / n,
            mean_edges: self.graphs.iter().map(|g| g.num_edges() as f64).sum::<f64>() / n,
            num_features: self.num_features,
            class_counts: self.class_counts(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&DatasetDoc::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: DatasetDoc = serde_json::from_str(s)?;
        doc.try_into()
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// On-disk JSON cache form of a dataset.
#[derive(Debug, Serialize, Deserialize)]
struct DatasetDoc {
    name: String,
    num_classes: usize,
    class_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label_mapping: Option<Vec<i64>>,
    graphs: Vec<GraphDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
struct GraphDoc {
    nodes: usize,
    edges: Vec<[usize; 2]>,
    features: Vec<Vec<f64>>,
    label: usize,
}

impl From<&GraphDataset> for DatasetDoc {
    fn from(d: &GraphDataset) -> Self {
        let graphs = d
            .graphs
            .iter()
            .map(|g| GraphDoc {
                nodes: g.num_nodes(),
                edges: g.edges.iter().map(|&(i, j)| [i, j]).collect(),
                features: g.node_features.rows().into_iter().map(|r| r.to_vec()).collect(),
                label: g.label,
            })
            .collect();
        Self {
            name: d.name.clone(),
            num_classes: d.num_classes,
            class_names: d.class_names.clone(),
            label_mapping: d.label_mapping.clone(),
            graphs,
        }
    }
}

impl TryFrom<DatasetDoc> for GraphDataset {
    type Error = Error;

    fn try_from(doc: DatasetDoc) -> Result<Self> {
        let mut graphs = Vec::with_capacity(doc.graphs.len());
        for (idx, g) in doc.graphs.into_iter().enumerate() {
            if g.features.len() != g.nodes {
                return Err(Error::InvalidGraph(format!(
                    "graph {idx}: {} feature rows for {} nodes",
                    g.features.len(),
                    g.nodes
                )));
            }
            let width = g.features.first().map_or(0, Vec::len);
            if g.features.iter().any(|r| r.len() != width) {
                return Err(Error::InvalidGraph(format!("graph {idx}: ragged feature rows")));
            }
            let flat: Vec<f64> = g.features.into_iter().flatten().collect();
            let features = Array2::from_shape_vec((g.nodes, width), flat)
                .map_err(|e| Error::InvalidGraph(format!("graph {idx}: {e}")))?;
            graphs.push(Graph::new(
                features,
                g.edges.into_iter().map(|[i, j]| (i, j)),
                g.label,
                idx,
            )?);
        }
        let mut d = GraphDataset::new(doc.name, graphs, doc.num_classes, Some(doc.class_names))?;
        d.label_mapping = doc.label_mapping;
        Ok(d)
    }
}
