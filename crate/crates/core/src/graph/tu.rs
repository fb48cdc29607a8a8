//! Reader and writer for the TU benchmark text format.
//!
//! Node and graph indices are 1-based on disk and 0-based in memory.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use super::{Graph, GraphDataset};
use crate::error::{Error, Result};

struct Lines {
    path: PathBuf,
    /// (1-based line number, trimmed content), blank lines dropped.
    rows: Vec<(usize, String)>,
}

fn read_lines(path: &Path) -> Result<Lines> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Parse {
        file: path.to_path_buf(),
        msg: format!("cannot read: {e}"),
    })?;
    let rows = text
        .lines()
        .enumerate()
        .filter_map(|(i, l)| {
            let l = l.trim();
            (!l.is_empty()).then(|| (i + 1, l.to_string()))
        })
        .collect();
    Ok(Lines {
        path: path.to_path_buf(),
        rows,
    })
}

fn read_optional(path: &Path) -> Result<Option<Lines>> {
    if path.exists() {
        read_lines(path).map(Some)
    } else {
        Ok(None)
    }
}

fn parse_field<T: std::str::FromStr>(lines: &Lines, line: usize, field: &str) -> Result<T> {
    field.trim().parse().map_err(|_| Error::Parse {
        file: lines.path.clone(),
        msg: format!("line {line}: cannot parse {field:?}"),
    })
}

fn integrity(lines: &Lines, line: usize, msg: impl Into<String>) -> Error {
    Error::Integrity {
        file: lines.path.clone(),
        line,
        msg: msg.into(),
    }
}

/// Loads `root/NAME_*.txt` into a dataset.
///
/// Graph labels are compacted to `0..C` in ascending order of their on-disk
/// values; the original values are kept in `label_mapping`. Categorical node
/// labels become one-hot features, node attributes are used as given and the
/// two are concatenated when both exist. Without either file every node gets
/// the constant feature 1.
pub fn parse_tu_dataset(root: &Path, name: &str) -> Result<GraphDataset> {
    let file = |suffix: &str| root.join(format!("{name}_{suffix}.txt"));
    let indicator = read_lines(&file("graph_indicator"))?;
    let graph_labels = read_lines(&file("graph_labels"))?;
    let adjacency = read_lines(&file("A"))?;
    let node_labels = read_optional(&file("node_labels"))?;
    let node_attributes = read_optional(&file("node_attributes"))?;

    let raw_labels: Vec<i64> = graph_labels
        .rows
        .iter()
        .map(|(ln, s)| parse_field(&graph_labels, *ln, s))
        .collect::<Result<_>>()?;
    let num_graphs = raw_labels.len();
    let distinct: Vec<i64> = raw_labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let compact: BTreeMap<i64, usize> = distinct.iter().enumerate().map(|(i, &v)| (v, i)).collect();

    // node (global, 0-based) -> (graph, local index)
    let mut node_graph = Vec::with_capacity(indicator.rows.len());
    let mut graph_sizes = vec![0usize; num_graphs];
    for (ln, s) in &indicator.rows {
        let gid: usize = parse_field(&indicator, *ln, s)?;
        if gid == 0 || gid > num_graphs {
            return Err(integrity(
                &indicator,
                *ln,
                format!("graph index {gid} outside 1..={num_graphs}"),
            ));
        }
        let g = gid - 1;
        node_graph.push((g, graph_sizes[g]));
        graph_sizes[g] += 1;
    }
    let num_nodes = node_graph.len();
    if let Some(empty) = graph_sizes.iter().position(|&n| n == 0) {
        let line = graph_labels.rows[empty].0;
        return Err(integrity(&graph_labels, line, format!("graph {} has no nodes", empty + 1)));
    }

    let mut edge_sets: Vec<BTreeSet<(usize, usize)>> = vec![BTreeSet::new(); num_graphs];
    for (ln, s) in &adjacency.rows {
        let mut parts = s.split(',');
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::Parse {
                file: adjacency.path.clone(),
                msg: format!("line {ln}: expected \"i, j\""),
            });
        };
        let a: usize = parse_field(&adjacency, *ln, a)?;
        let b: usize = parse_field(&adjacency, *ln, b)?;
        for v in [a, b] {
            if v == 0 || v > num_nodes {
                return Err(integrity(
                    &adjacency,
                    *ln,
                    format!("node index {v} outside 1..={num_nodes}"),
                ));
            }
        }
        let (ga, la) = node_graph[a - 1];
        let (gb, lb) = node_graph[b - 1];
        if ga != gb {
            return Err(integrity(
                &adjacency,
                *ln,
                format!("edge joins graphs {} and {}", ga + 1, gb + 1),
            ));
        }
        if la != lb {
            edge_sets[ga].insert((la.min(lb), la.max(lb)));
        }
    }

    let mut feature_blocks: Vec<Array2<f64>> = Vec::new();
    if let Some(lines) = &node_labels {
        check_len(lines, num_nodes)?;
        let values: Vec<i64> = lines
            .rows
            .iter()
            .map(|(ln, s)| parse_field(lines, *ln, s.split(',').next().unwrap_or("")))
            .collect::<Result<_>>()?;
        let kinds: BTreeMap<i64, usize> = values
            .iter()
            .copied()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .enumerate()
            .map(|(i, v)| (v, i))
            .collect();
        let mut onehot = Array2::zeros((num_nodes, kinds.len()));
        for (n, v) in values.iter().enumerate() {
            onehot[[n, kinds[v]]] = 1.0;
        }
        feature_blocks.push(onehot);
    }
    if let Some(lines) = &node_attributes {
        check_len(lines, num_nodes)?;
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(num_nodes);
        for (ln, s) in &lines.rows {
            let row = s
                .split(',')
                .map(|f| parse_field(lines, *ln, f))
                .collect::<Result<Vec<f64>>>()?;
            if let Some(first) = rows.first() {
                if first.len() != row.len() {
                    return Err(integrity(lines, *ln, "ragged attribute row"));
                }
            }
            rows.push(row);
        }
        let width = rows[0].len();
        let flat = rows.into_iter().flatten().collect();
        feature_blocks.push(Array2::from_shape_vec((num_nodes, width), flat).expect("rectangular"));
    }
    let features = if feature_blocks.is_empty() {
        Array2::ones((num_nodes, 1))
    } else {
        let views: Vec<_> = feature_blocks.iter().map(|b| b.view()).collect();
        ndarray::concatenate(ndarray::Axis(1), &views).expect("same row count")
    };

    let width = features.ncols();
    let mut per_graph: Vec<Vec<f64>> = graph_sizes.iter().map(|&n| Vec::with_capacity(n * width)).collect();
    for (n, &(g, _)) in node_graph.iter().enumerate() {
        per_graph[g].extend(features.row(n).iter());
    }
    let graphs = per_graph
        .into_iter()
        .zip(edge_sets)
        .enumerate()
        .map(|(g, (flat, edges))| {
            let x = Array2::from_shape_vec((graph_sizes[g], width), flat).expect("rectangular");
            Graph::new(x, edges, compact[&raw_labels[g]], g)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut dataset = GraphDataset::new(name, graphs, distinct.len(), None)?;
    let identity: Vec<i64> = (0..distinct.len() as i64).collect();
    if distinct != identity {
        dataset.label_mapping = Some(distinct);
    }
    Ok(dataset)
}

fn check_len(lines: &Lines, num_nodes: usize) -> Result<()> {
    if lines.rows.len() != num_nodes {
        let line = lines.rows.last().map_or(0, |r| r.0);
        return Err(integrity(
            lines,
            line,
            format!("{} rows for {num_nodes} nodes", lines.rows.len()),
        ));
    }
    Ok(())
}

/// Writes a dataset in TU format under `root`.
///
/// Labels are written through `label_mapping` when present, otherwise as
/// `label + 1`. Node features are written as attributes unless every node
/// carries only the constant feature 1.
pub fn write_tu_dataset(d: &GraphDataset, root: &Path) -> Result<()> {
    std::fs::create_dir_all(root)?;
    let mut a = String::new();
    let mut indicator = String::new();
    let mut labels = String::new();
    let mut attributes = String::new();
    let constant = d.num_features == 1
        && d.graphs.iter().all(|g| g.node_features.iter().all(|&v| v == 1.0));
    let mut offset = 1usize;
    for (gi, g) in d.graphs.iter().enumerate() {
        for &(i, j) in &g.edges {
            let _ = writeln!(a, "{}, {}", i + offset, j + offset);
            let _ = writeln!(a, "{}, {}", j + offset, i + offset);
        }
        for row in g.node_features.rows() {
            let _ = writeln!(indicator, "{}", gi + 1);
            if !constant {
                let fields: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                let _ = writeln!(attributes, "{}", fields.join(", "));
            }
        }
        let label = match &d.label_mapping {
            Some(map) => map[g.label],
            None => g.label as i64 + 1,
        };
        let _ = writeln!(labels, "{label}");
        offset += g.num_nodes();
    }
    let file = |suffix: &str| root.join(format!("{}_{suffix}.txt", d.name));
    std::fs::write(file("A"), a)?;
    std::fs::write(file("graph_indicator"), indicator)?;
    std::fs::write(file("graph_labels"), labels)?;
    if !constant {
        std::fs::write(file("node_attributes"), attributes)?;
    }
    Ok(())
}
