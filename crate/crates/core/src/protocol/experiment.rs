use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::auroc::auroc;
use crate::density::Bandwidth;
use crate::encoder::{encode_graph, train_classifier, EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::graph::{make_loco_split, stratified_split, Graph, GraphDataset, LocoSplit, DEFAULT_VAL_FRACTION};
use crate::par::Exec;
use crate::rng::derive_seed;
use crate::uq::{
    decompose_uncertainty, ensemble_predict, natpn_uncertainty, nuq_fit, nuq_scores, single_uncertainty,
    train_natpn, Categorical, Ensemble, Method, NatPnConfig, UncType, UncertaintyRecord,
};

/// Seed streams derived from each split seed.
const STREAM_SINGLE: u64 = 1;
const STREAM_MC: u64 = 2;
const STREAM_NATPN: u64 = 3;
const STREAM_DE: u64 = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    pub n_splits: usize,
    pub val_fraction: f64,
    pub base_seed: u64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            n_splits: 5,
            val_fraction: DEFAULT_VAL_FRACTION,
            base_seed: 0,
        }
    }
}

impl ProtocolConfig {
    pub fn split_seed(&self, split: usize) -> u64 {
        self.base_seed.wrapping_add(split as u64)
    }
}

/// Hyperparameters of every method. `encoder.output_dim` and `encoder.seed`
/// are overwritten per split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MethodSettings {
    pub encoder: EncoderConfig,
    pub ensemble_size: usize,
    pub mc_samples: usize,
    pub nuq_bandwidth: Bandwidth,
    pub natpn: NatPnConfig,
}

impl Default for MethodSettings {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            ensemble_size: 5,
            mc_samples: 20,
            nuq_bandwidth: Bandwidth::Scott,
            natpn: NatPnConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Val,
    Ood,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Val => "val",
            Role::Ood => "ood",
        }
    }
}

/// One scored graph. Classes are original dataset indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub graph_id: usize,
    pub role: Role,
    pub true_class: usize,
    pub predicted_class: usize,
    pub p_max: f64,
    pub record: UncertaintyRecord,
}

/// Outcome of one method on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitOutcome {
    pub split: usize,
    pub seed: u64,
    pub val_acc: f64,
    pub auroc: BTreeMap<UncType, f64>,
    /// Distribution of OOD predictions over original classes (held-out entry is 0).
    pub ood_predictions: Vec<f64>,
    pub scores: Vec<ScoreRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub dataset: String,
    pub method: Method,
    pub ood_class: usize,
    pub seeds: Vec<u64>,
    pub auroc: BTreeMap<UncType, Vec<f64>>,
    pub auroc_mean: BTreeMap<UncType, f64>,
    pub auroc_std: BTreeMap<UncType, f64>,
    pub val_acc: Vec<f64>,
    pub ood_predictions: Vec<Vec<f64>>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

impl ExperimentResult {
    pub fn from_splits(dataset: &str, method: Method, ood_class: usize, outcomes: &[SplitOutcome]) -> Self {
        let mut auroc: BTreeMap<UncType, Vec<f64>> = BTreeMap::new();
        for o in outcomes {
            for (&t, &a) in &o.auroc {
                auroc.entry(t).or_default().push(a);
            }
        }
        let stats: BTreeMap<UncType, (f64, f64)> = auroc.iter().map(|(&t, v)| (t, mean_std(v))).collect();
        Self {
            dataset: dataset.to_string(),
            method,
            ood_class,
            seeds: outcomes.iter().map(|o| o.seed).collect(),
            auroc_mean: stats.iter().map(|(&t, s)| (t, s.0)).collect(),
            auroc_std: stats.iter().map(|(&t, s)| (t, s.1)).collect(),
            auroc,
            val_acc: outcomes.iter().map(|o| o.val_acc).collect(),
            ood_predictions: outcomes.iter().map(|o| o.ood_predictions.clone()).collect(),
        }
    }

    pub fn n_splits(&self) -> usize {
        self.seeds.len()
    }
}

fn with_seed(cfg: &EncoderConfig, k: usize, seed: u64) -> EncoderConfig {
    EncoderConfig {
        output_dim: k,
        seed,
        ..cfg.clone()
    }
}

/// Trains an encoder on all classes of `d` (stratified train/validation).
pub fn train_full_classifier(d: &GraphDataset, cfg: &EncoderConfig, val_fraction: f64, seed: u64) -> Result<EncoderParams> {
    let (train_ids, val_ids) = stratified_split(d, val_fraction, seed)?;
    let pick = |ids: &[usize]| ids.iter().map(|&i| d.graphs[i].clone()).collect::<Vec<_>>();
    let cfg = with_seed(cfg, d.num_classes, derive_seed(seed, STREAM_SINGLE));
    train_classifier(&pick(&train_ids), &pick(&val_ids), &cfg)
}

struct Scored {
    graph: usize,
    role: Role,
    prediction: Categorical,
    record: UncertaintyRecord,
}

/// Trains whatever the requested methods need on one split and scores its
/// validation and OOD graphs.
///
/// `single`, `mc` and `nuq` share one cross-entropy encoder.
pub fn run_split(
    d: &GraphDataset,
    methods: &[Method],
    ood_class: usize,
    split_index: usize,
    protocol: &ProtocolConfig,
    settings: &MethodSettings,
    exec: Exec,
) -> Result<SplitRun> {
    let seed = protocol.split_seed(split_index);
    let split = make_loco_split(d, ood_class, protocol.val_fraction, seed)?;
    let k = split.num_id_classes();
    let train = split.train_graphs(d);
    let val = split.val_graphs(d);
    let targets: Vec<(usize, Role)> = split
        .val_ids
        .iter()
        .map(|&i| (i, Role::Val))
        .chain(split.ood_ids.iter().map(|&i| (i, Role::Ood)))
        .collect();

    let single = if methods.iter().any(|m| m.uses_single_encoder()) {
        let cfg = with_seed(&settings.encoder, k, derive_seed(seed, STREAM_SINGLE));
        Some(train_classifier(&train, &val, &cfg)?)
    } else {
        None
    };

    let mut out = BTreeMap::new();
    for &method in methods {
        let scored: Vec<Scored> = match method {
            Method::Single => {
                let p = single.as_ref().expect("trained above");
                score_all(d, &targets, exec, |g| single_uncertainty(p, g))?
            }
            Method::Mc => {
                let e = Ensemble::mc_dropout(single.clone().expect("trained above"));
                let mc_seed = derive_seed(seed, STREAM_MC);
                score_all(d, &targets, exec, |g| {
                    let members = ensemble_predict(&e, g, settings.mc_samples, derive_seed(mc_seed, g.graph_id as u64))?;
                    let dec = decompose_uncertainty(&members)?;
                    let record = dec.record(Method::Mc);
                    Ok((dec.mean, record))
                })?
            }
            Method::De => {
                let members = exec
                    .map_range(settings.ensemble_size, |m| {
                        let cfg = with_seed(&settings.encoder, k, derive_seed(seed, STREAM_DE + m as u64));
                        train_classifier(&train, &val, &cfg)
                    })
                    .into_iter()
                    .collect::<Result<Vec<_>>>()?;
                let e = Ensemble::deep(members)?;
                score_all(d, &targets, exec, |g| {
                    let dec = decompose_uncertainty(&ensemble_predict(&e, g, 0, 0)?)?;
                    let record = dec.record(Method::De);
                    Ok((dec.mean, record))
                })?
            }
            Method::Nuq => {
                let p = single.as_ref().expect("trained above");
                let support = embed_all(p, &train, exec)?;
                let labels: Vec<usize> = train.iter().map(|g| g.label).collect();
                let model = nuq_fit(support, &labels, k, settings.nuq_bandwidth)?;
                score_all(d, &targets, exec, |g| {
                    let z = encode_graph(p, g, None)?;
                    let s = nuq_scores(&model, z.view())?;
                    Ok((Categorical::new(s.eta)?, s.record))
                })?
            }
            Method::Natpn => {
                let cfg = with_seed(&settings.encoder, k, derive_seed(seed, STREAM_NATPN));
                let model = train_natpn(&train, &val, &cfg, &settings.natpn)?;
                score_all(d, &targets, exec, |g| Ok(natpn_uncertainty(&model.posterior(g)?)))?
            }
        };
        out.insert(method, summarize(d, &split, method, split_index, seed, scored)?);
    }
    Ok(SplitRun {
        split,
        outcomes: out,
        single_encoder: single,
    })
}

fn embed_all(p: &EncoderParams, graphs: &[Graph], exec: Exec) -> Result<Array2<f64>> {
    let rows = exec
        .map(graphs, |g| encode_graph(p, g, None))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
    Ok(ndarray::stack(ndarray::Axis(0), &views).expect("equal widths"))
}

fn score_all<F>(d: &GraphDataset, targets: &[(usize, Role)], exec: Exec, f: F) -> Result<Vec<Scored>>
where
    F: Fn(&Graph) -> Result<(Categorical, UncertaintyRecord)> + Sync + Send,
{
    exec.map(targets, |&(graph, role)| {
        let (prediction, record) = f(&d.graphs[graph])?;
        Ok(Scored {
            graph,
            role,
            prediction,
            record,
        })
    })
    .into_iter()
    .collect()
}

fn summarize(
    d: &GraphDataset,
    split: &LocoSplit,
    method: Method,
    split_index: usize,
    seed: u64,
    scored: Vec<Scored>,
) -> Result<SplitOutcome> {
    let mut correct = 0usize;
    let mut n_val = 0usize;
    let mut counts = vec![0usize; d.num_classes];
    let mut n_ood = 0usize;
    let mut rows = Vec::with_capacity(scored.len());
    for s in scored {
        let predicted = split.original_class(s.prediction.argmax());
        let true_class = d.graphs[s.graph].label;
        match s.role {
            Role::Val => {
                n_val += 1;
                if predicted == true_class {
                    correct += 1;
                }
            }
            Role::Ood => {
                n_ood += 1;
                counts[predicted] += 1;
            }
        }
        rows.push(ScoreRow {
            graph_id: s.graph,
            role: s.role,
            true_class,
            predicted_class: predicted,
            p_max: s.prediction.max_prob(),
            record: s.record,
        });
    }
    let mut aurocs = BTreeMap::new();
    for &t in method.uncertainty_types() {
        let pick = |role: Role| -> Result<Vec<f64>> {
            rows.iter()
                .filter(|r| r.role == role)
                .map(|r| {
                    r.record
                        .get(t)
                        .ok_or_else(|| Error::contract(format!("{method} produced no {t} score")))
                })
                .collect()
        };
        aurocs.insert(t, auroc(&pick(Role::Val)?, &pick(Role::Ood)?)?);
    }
    Ok(SplitOutcome {
        split: split_index,
        seed,
        val_acc: correct as f64 / n_val.max(1) as f64,
        auroc: aurocs,
        ood_predictions: counts.iter().map(|&c| c as f64 / n_ood.max(1) as f64).collect(),
        scores: rows,
    })
}

/// Everything one split produced.
#[derive(Debug, Clone)]
pub struct SplitRun {
    pub split: LocoSplit,
    pub outcomes: BTreeMap<Method, SplitOutcome>,
    /// The cross-entropy encoder shared by `single`, `mc` and `nuq`, when trained.
    pub single_encoder: Option<EncoderParams>,
}

/// Per-split outcomes of several methods for one held-out class.
#[derive(Debug)]
pub struct LocoRun {
    pub dataset: String,
    pub ood_class: usize,
    pub splits: Vec<Result<SplitRun>>,
}

impl LocoRun {
    /// Successful splits only.
    pub fn completed(&self, method: Method) -> Vec<&SplitOutcome> {
        self.splits
            .iter()
            .filter_map(|s| s.as_ref().ok().and_then(|r| r.outcomes.get(&method)))
            .collect()
    }

    /// Aggregated result of `method`, or the first split failure.
    pub fn result(&self, method: Method) -> Result<ExperimentResult> {
        let mut outcomes = Vec::with_capacity(self.splits.len());
        for (i, s) in self.splits.iter().enumerate() {
            match s {
                Ok(r) => outcomes.push(
                    r.outcomes
                        .get(&method)
                        .cloned()
                        .ok_or_else(|| Error::contract(format!("method {method} was not run")))?,
                ),
                Err(e) => {
                    return Err(Error::Experiment {
                        split: i,
                        source: Box::new(Error::Protocol(e.to_string())),
                    })
                }
            }
        }
        Ok(ExperimentResult::from_splits(&self.dataset, method, self.ood_class, &outcomes))
    }
}

/// Runs every split for `ood_class`, sharing trained artifacts between methods.
pub fn run_loco_methods(
    d: &GraphDataset,
    methods: &[Method],
    ood_class: usize,
    protocol: &ProtocolConfig,
    settings: &MethodSettings,
    exec: Exec,
) -> LocoRun {
    let splits = exec.map_range(protocol.n_splits, |s| run_split(d, methods, ood_class, s, protocol, settings, exec));
    LocoRun {
        dataset: d.name.clone(),
        ood_class,
        splits,
    }
}

pub fn run_loco_experiment(
    d: &GraphDataset,
    method: Method,
    ood_class: usize,
    protocol: &ProtocolConfig,
    settings: &MethodSettings,
) -> Result<ExperimentResult> {
    if protocol.n_splits == 0 {
        return Err(Error::Protocol("n_splits must be at least 1".into()));
    }
    run_loco_methods(d, &[method], ood_class, protocol, settings, Exec::default()).result(method)
}
