use std::fmt::Write as _;

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::experiment::{ExperimentResult, MethodSettings, ProtocolConfig};
use super::experiment::run_loco_methods;
use crate::encoder::{encode_graph, EncoderParams};
use crate::error::{Error, Result};
use crate::graph::GraphDataset;
use crate::par::Exec;
use crate::uq::Method;

fn csv_escape(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn matrix_csv(corner: &str, names: &[String], values: &Array2<f64>) -> String {
    let mut out = csv_escape(corner);
    for n in names {
        out.push(',');
        out.push_str(&csv_escape(n));
    }
    out.push('\n');
    for (i, n) in names.iter().enumerate() {
        out.push_str(&csv_escape(n));
        for v in values.row(i) {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

/// Rows are held-out classes, columns the predicted original class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodConfusionMatrix {
    pub class_names: Vec<String>,
    pub values: Array2<f64>,
}

impl OodConfusionMatrix {
    pub fn to_csv(&self) -> String {
        matrix_csv("ood_class", &self.class_names, &self.values)
    }
}

/// Pairwise Euclidean distances between class centroids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDistanceMatrix {
    pub class_names: Vec<String>,
    pub values: Array2<f64>,
}

impl ClassDistanceMatrix {
    pub fn to_csv(&self) -> String {
        matrix_csv("class", &self.class_names, &self.values)
    }

    /// Distances between the per-class means of `embeddings` (one row per graph).
    pub fn from_embeddings(embeddings: ArrayView2<f64>, labels: &[usize], class_names: Vec<String>) -> Result<Self> {
        let c = class_names.len();
        if labels.len() != embeddings.nrows() {
            return Err(Error::contract(format!(
                "{} labels for {} embeddings",
                labels.len(),
                embeddings.nrows()
            )));
        }
        let mut sums = Array2::<f64>::zeros((c, embeddings.ncols()));
        let mut counts = vec![0usize; c];
        for (row, &y) in embeddings.rows().into_iter().zip(labels) {
            if y >= c {
                return Err(Error::contract(format!("label {y} outside [0, {c})")));
            }
            counts[y] += 1;
            let mut s = sums.row_mut(y);
            s += &row;
        }
        if let Some(empty) = counts.iter().position(|&n| n == 0) {
            return Err(Error::contract(format!("class {empty} has no graphs")));
        }
        let centroids: Vec<Array1<f64>> = (0..c).map(|k| sums.row(k).to_owned() / counts[k] as f64).collect();
        let mut values = Array2::zeros((c, c));
        for i in 0..c {
            for j in (i + 1)..c {
                let d = (&centroids[i] - &centroids[j]).mapv(|x| x * x).sum().sqrt();
                values[[i, j]] = d;
                values[[j, i]] = d;
            }
        }
        Ok(Self { class_names, values })
    }
}

/// Centroid distance matrix of `d` under encoder `p`.
pub fn class_distance_matrix(p: &EncoderParams, d: &GraphDataset, exec: Exec) -> Result<ClassDistanceMatrix> {
    let rows = exec
        .map(&d.graphs, |g| encode_graph(p, g, None))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
    let z = ndarray::stack(ndarray::Axis(0), &views).map_err(|e| Error::contract(e.to_string()))?;
    let labels: Vec<usize> = d.graphs.iter().map(|g| g.label).collect();
    ClassDistanceMatrix::from_embeddings(z.view(), &labels, d.class_names.clone())
}

/// Elementwise mean of several distance matrices over the same classes.
pub fn mean_distance_matrix(ms: &[ClassDistanceMatrix]) -> Result<ClassDistanceMatrix> {
    let first = ms.first().ok_or_else(|| Error::contract("no distance matrices to average"))?;
    let mut values = Array2::zeros(first.values.raw_dim());
    for m in ms {
        if m.values.raw_dim() != values.raw_dim() {
            return Err(Error::contract("distance matrices differ in size"));
        }
        values += &m.values;
    }
    values /= ms.len() as f64;
    // Restore exact symmetry lost to summation order.
    let c = values.nrows();
    for i in 0..c {
        values[[i, i]] = 0.0;
        for j in (i + 1)..c {
            values[[j, i]] = values[[i, j]];
        }
    }
    Ok(ClassDistanceMatrix {
        class_names: first.class_names.clone(),
        values,
    })
}

/// Builds the confusion matrix from per-class experiment results, averaging
/// the OOD prediction distribution over splits. Classes without a result keep
/// an all-zero row.
pub fn ood_confusion_from_results(d: &GraphDataset, results: &[ExperimentResult]) -> Result<OodConfusionMatrix> {
    let c = d.num_classes;
    let mut values = Array2::zeros((c, c));
    for r in results {
        if r.ood_class >= c {
            return Err(Error::contract(format!("OOD class {} outside [0, {c})", r.ood_class)));
        }
        if r.ood_predictions.is_empty() {
            return Err(Error::contract(format!("no splits for OOD class {}", r.ood_class)));
        }
        let mut row = values.row_mut(r.ood_class);
        row.fill(0.0);
        for split in &r.ood_predictions {
            if split.len() != c {
                return Err(Error::contract("prediction distribution has the wrong length"));
            }
            row += &Array1::from(split.clone());
        }
        row /= r.ood_predictions.len() as f64;
        row[r.ood_class] = 0.0;
    }
    Ok(OodConfusionMatrix {
        class_names: d.class_names.clone(),
        values,
    })
}

/// Runs the protocol once per held-out class and collects the prediction rows.
pub fn ood_confusion_matrix(
    d: &GraphDataset,
    method: Method,
    protocol: &ProtocolConfig,
    settings: &MethodSettings,
    exec: Exec,
) -> Result<OodConfusionMatrix> {
    let results = (0..d.num_classes)
        .map(|k| run_loco_methods(d, &[method], k, protocol, settings, exec).result(method))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| match e {
            Error::Experiment { .. } => e,
            other => Error::Protocol(other.to_string()),
        })?;
    ood_confusion_from_results(d, &results)
}
