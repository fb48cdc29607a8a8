use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Graph, GraphDataset};
use crate::error::{Error, Result};
use crate::rng::seeded;

pub const DEFAULT_VAL_FRACTION: f64 = 0.2;

/// A leave-one-class-out split: one class is held out as OOD, the rest is
/// split into stratified train and validation parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocoSplit {
    pub ood_class: usize,
    pub train_ids: Vec<usize>,
    pub val_ids: Vec<usize>,
    pub ood_ids: Vec<usize>,
    pub seed: u64,
    /// `relabeling[c]` is the compact ID label of original class `c`, `None` for the OOD class.
    pub relabeling: Vec<Option<usize>>,
}

impl LocoSplit {
    pub fn num_id_classes(&self) -> usize {
        self.relabeling.len() - 1
    }

    /// Original class index of a compact ID label.
    pub fn original_class(&self, id_label: usize) -> usize {
        if id_label < self.ood_class {
            id_label
        } else {
            id_label + 1
        }
    }

    /// Graphs with labels rewritten to compact ID indices.
    pub fn relabeled(&self, d: &GraphDataset, ids: &[usize]) -> Vec<Graph> {
        ids.iter()
            .map(|&i| {
                let g = &d.graphs[i];
                let label = self.relabeling[g.label].expect("ID graph");
                g.with_label(label)
            })
            .collect()
    }

    pub fn train_graphs(&self, d: &GraphDataset) -> Vec<Graph> {
        self.relabeled(d, &self.train_ids)
    }

    pub fn val_graphs(&self, d: &GraphDataset) -> Vec<Graph> {
        self.relabeled(d, &self.val_ids)
    }

    /// OOD graphs keep their original label.
    pub fn ood_graphs<'a>(&self, d: &'a GraphDataset) -> Vec<&'a Graph> {
        self.ood_ids.iter().map(|&i| &d.graphs[i]).collect()
    }
}

/// Holds out `ood_class` and splits every remaining class into train and
/// validation with `round(count * val_fraction)` validation graphs per class
/// (at least one, and at least one left for training).
pub fn make_loco_split(
    d: &GraphDataset,
    ood_class: usize,
    val_fraction: f64,
    seed: u64,
) -> Result<LocoSplit> {
    let c = d.num_classes;
    if c < 3 {
        return Err(Error::Protocol(format!(
            "{}: {c} classes leave fewer than 2 ID classes",
            d.name
        )));
    }
    if ood_class >= c {
        return Err(Error::Protocol(format!("OOD class {ood_class} outside [0, {c})")));
    }
    let (train_ids, val_ids) = split_classes(d, Some(ood_class), val_fraction, seed)?;
    let relabeling = (0..c)
        .map(|k| match k.cmp(&ood_class) {
            std::cmp::Ordering::Less => Some(k),
            std::cmp::Ordering::Equal => None,
            std::cmp::Ordering::Greater => Some(k - 1),
        })
        .collect();
    Ok(LocoSplit {
        ood_class,
        train_ids,
        val_ids,
        ood_ids: d.ids_by_class().swap_remove(ood_class),
        seed,
        relabeling,
    })
}

fn split_classes(
    d: &GraphDataset,
    skip: Option<usize>,
    val_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::Protocol(format!("val_fraction {val_fraction} outside (0, 1)")));
    }
    let mut rng = seeded(seed);
    let mut train_ids = Vec::new();
    let mut val_ids = Vec::new();
    for (class, ids) in d.ids_by_class().into_iter().enumerate() {
        if Some(class) == skip {
            continue;
        }
        if ids.len() < 2 {
            return Err(Error::Protocol(format!(
                "class {class} has {} graph(s); at least 2 needed to split",
                ids.len()
            )));
        }
        let mut ids = ids;
        ids.shuffle(&mut rng);
        let n_val = ((ids.len() as f64 * val_fraction).round() as usize).clamp(1, ids.len() - 1);
        val_ids.extend_from_slice(&ids[..n_val]);
        train_ids.extend_from_slice(&ids[n_val..]);
    }
    train_ids.sort_unstable();
    val_ids.sort_unstable();
    Ok((train_ids, val_ids))
}

/// Stratified train/validation split over all classes, labels unchanged.
pub fn stratified_split(d: &GraphDataset, val_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    split_classes(d, None, val_fraction, seed)
}
