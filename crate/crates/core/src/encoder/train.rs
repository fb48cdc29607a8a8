use ndarray::Array1;
use rand::seq::SliceRandom;

use super::adam::Adam;
use super::model::{backward, forward, EncoderConfig, EncoderParams, EpochStats, PreparedGraph, Weights};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::rng::{seeded, Rng};

/// Graphs per optimisation step.
pub const BATCH_SIZE: usize = 32;

/// Numerically stable softmax.
pub fn softmax(logits: &Array1<f64>) -> Array1<f64> {
    let max = logits.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let e = logits.mapv(|v| (v - max).exp());
    let s = e.sum();
    e / s
}

/// Cross-entropy of one graph; accumulates its gradient into `grads`.
fn graph_loss_and_grad(
    p: &EncoderParams,
    g: &PreparedGraph,
    dropout: Option<&mut Rng>,
    grads: &mut Weights,
) -> Result<f64> {
    let cache = forward(p, g, dropout)?;
    let z = &cache.embedding;
    let probs = softmax(&p.logits(z));
    let loss = -probs[g.label].max(f64::MIN_POSITIVE).ln();
    let mut glogits = probs;
    glogits[g.label] -= 1.0;
    let head = &mut grads.head;
    for (k, &zk) in z.iter().enumerate() {
        head.weight.row_mut(k).scaled_add(zk, &glogits);
    }
    head.bias += &glogits;
    let gz = p.weights.head.weight.dot(&glogits);
    backward(p, g, &cache, &gz, grads);
    Ok(loss)
}

/// Mean cross-entropy over `graphs` and its gradient with respect to all weights.
pub fn batch_loss_and_grad<'a>(
    p: &EncoderParams,
    graphs: impl IntoIterator<Item = &'a PreparedGraph>,
    mut dropout: Option<&mut Rng>,
) -> Result<(f64, Weights)> {
    let mut grads = p.weights.zeros_like();
    let mut total = 0.0;
    let mut count = 0usize;
    for g in graphs {
        total += graph_loss_and_grad(p, g, dropout.as_deref_mut(), &mut grads)?;
        count += 1;
    }
    let n = count.max(1) as f64;
    grads.scale(1.0 / n);
    Ok((total / n, grads))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
}

/// Deterministic mean loss and accuracy (argmax, ties to the lowest index).
pub fn evaluate(p: &EncoderParams, graphs: &[PreparedGraph]) -> Result<Evaluation> {
    if graphs.is_empty() {
        return Ok(Evaluation {
            loss: f64::NAN,
            accuracy: f64::NAN,
        });
    }
    let mut loss = 0.0;
    let mut correct = 0usize;
    for g in graphs {
        let z = forward(p, g, None)?.embedding;
        let probs = softmax(&p.logits(&z));
        loss -= probs[g.label].max(f64::MIN_POSITIVE).ln();
        if crate::uq::argmax(probs.as_slice().expect("contiguous")) == g.label {
            correct += 1;
        }
    }
    let n = graphs.len() as f64;
    Ok(Evaluation {
        loss: loss / n,
        accuracy: correct as f64 / n,
    })
}

fn check_labels(graphs: &[Graph], k: usize) -> Result<()> {
    match graphs.iter().find(|g| g.label >= k) {
        Some(g) => Err(Error::contract(format!(
            "graph {} has label {} but the head has {k} outputs",
            g.graph_id, g.label
        ))),
        None => Ok(()),
    }
}

/// Trains encoder and head by minimising mean cross-entropy with Adam on
/// shuffled mini-batches, early-stopping on validation loss.
///
/// Returns the parameters with the lowest validation loss (training loss when
/// `val` is empty). History row 0 describes the initialisation.
pub fn train_classifier(train: &[Graph], val: &[Graph], cfg: &EncoderConfig) -> Result<EncoderParams> {
    let Some(first) = train.first() else {
        return Err(Error::contract("empty training set"));
    };
    check_labels(train, cfg.output_dim)?;
    check_labels(val, cfg.output_dim)?;
    let mut rng = seeded(cfg.seed);
    let mut params = EncoderParams::init(cfg, first.num_features(), &mut rng)?;
    let train_p: Vec<PreparedGraph> = train.iter().map(PreparedGraph::new).collect();
    let val_p: Vec<PreparedGraph> = val.iter().map(PreparedGraph::new).collect();

    let init_train = evaluate(&params, &train_p)?;
    let init_val = evaluate(&params, &val_p)?;
    let monitor = |train_loss: f64, val: &Evaluation| if val_p.is_empty() { train_loss } else { val.loss };
    params.history.push(EpochStats {
        epoch: 0,
        train_loss: init_train.loss,
        val_loss: init_val.loss,
        val_acc: init_val.accuracy,
    });
    let mut best_loss = monitor(init_train.loss, &init_val);
    let mut best = params.weights.clone();
    let mut since_best = 0usize;

    let mut opt = Adam::new(&params.weights.sizes(), cfg.learning_rate, cfg.weight_decay);
    let mut order: Vec<usize> = (0..train_p.len()).collect();
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(BATCH_SIZE) {
            let batch = chunk.iter().map(|&i| &train_p[i]);
            let (loss, grads) = batch_loss_and_grad(&params, batch, Some(&mut rng))?;
            if !loss.is_finite() || !grads.all_finite() {
                return Err(Error::Training {
                    epoch,
                    msg: format!("non-finite loss {loss}"),
                });
            }
            epoch_loss += loss * chunk.len() as f64;
            opt.step(params.weights.slices_mut(), grads.slices());
        }
        let train_loss = epoch_loss / train_p.len() as f64;
        let val_eval = evaluate(&params, &val_p)?;
        params.history.push(EpochStats {
            epoch,
            train_loss,
            val_loss: val_eval.loss,
            val_acc: val_eval.accuracy,
        });
        let current = monitor(train_loss, &val_eval);
        if !current.is_finite() {
            return Err(Error::Training {
                epoch,
                msg: format!("non-finite monitored loss {current}"),
            });
        }
        if current < best_loss {
            best_loss = current;
            best = params.weights.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    params.weights = best;
    Ok(params)
}
