use ndarray::{Array1, Array2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::adjacency::{normalize_adjacency, NormAdjacency};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::rng::{seeded, Rng};
use crate::uq::Categorical;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub dropout_p: f64,
    /// Number of ID classes (or Dirichlet parameters).
    pub output_dim: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            num_layers: 3,
            hidden_dim: 64,
            dropout_p: 0.5,
            output_dim: 2,
            learning_rate: 1e-3,
            max_epochs: 200,
            patience: 50,
            weight_decay: 1e-5,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::contract(format!("encoder config: {m}")));
        if self.num_layers == 0 {
            return bad("num_layers must be >= 1");
        }
        if self.hidden_dim == 0 {
            return bad("hidden_dim must be >= 1");
        }
        if self.output_dim == 0 {
            return bad("output_dim must be >= 1");
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad("dropout_p must lie in [0, 1)");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative");
        }
        Ok(())
    }
}

/// Dense affine map `x ↦ x W + b` with `W` of shape (in, out).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
        }
    }

    /// Uniform in ±1/√fan_in for weights and biases.
    pub fn init(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut draw = || rng.random_range(-bound..bound);
        let weight = Array2::from_shape_simple_fn((fan_in, fan_out), &mut draw);
        let bias = Array1::from_shape_simple_fn(fan_out, &mut draw);
        Self { weight, bias }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.ncols()
    }
}

/// Trainable tensors of the encoder and its head. Also used for gradients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub convs: Vec<Linear>,
    pub head: Linear,
}

impl Weights {
    pub fn zeros_like(&self) -> Self {
        Self {
            convs: self.convs.iter().map(|l| Linear::zeros(l.fan_in(), l.fan_out())).collect(),
            head: Linear::zeros(self.head.fan_in(), self.head.fan_out()),
        }
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.slices().iter().map(|s| s.len()).collect()
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for l in self.convs.iter().chain(std::iter::once(&self.head)) {
            out.push(l.weight.as_slice().expect("standard layout"));
            out.push(l.bias.as_slice().expect("standard layout"));
        }
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for l in self.convs.iter_mut().chain(std::iter::once(&mut self.head)) {
            out.push(l.weight.as_slice_mut().expect("standard layout"));
            out.push(l.bias.as_slice_mut().expect("standard layout"));
        }
        out
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.slices_mut() {
            t.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn add_assign(&mut self, other: &Weights) {
        for (a, b) in self.slices_mut().into_iter().zip(other.slices()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

/// A trained (or freshly initialised) encoder with its head and training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub input_dim: usize,
    pub weights: Weights,
    pub history: Vec<EpochStats>,
}

impl EncoderParams {
    pub fn init(cfg: &EncoderConfig, input_dim: usize, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        if input_dim == 0 {
            return Err(Error::contract("input_dim must be >= 1"));
        }
        let mut convs = Vec::with_capacity(cfg.num_layers);
        let mut fan_in = input_dim;
        for _ in 0..cfg.num_layers {
            convs.push(Linear::init(fan_in, cfg.hidden_dim, rng));
            fan_in = cfg.hidden_dim;
        }
        let head = Linear::init(cfg.hidden_dim, cfg.output_dim, rng);
        Ok(Self {
            config: cfg.clone(),
            input_dim,
            weights: Weights { convs, head },
            history: Vec::new(),
        })
    }

    /// Initialisation drawn from `cfg.seed`.
    pub fn from_seed(cfg: &EncoderConfig, input_dim: usize) -> Result<Self> {
        Self::init(cfg, input_dim, &mut seeded(cfg.seed))
    }

    pub fn hidden_dim(&self) -> usize {
        self.config.hidden_dim
    }

    pub fn output_dim(&self) -> usize {
        self.weights.head.fan_out()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(s)?;
        if !p.weights.all_finite() {
            return Err(Error::contract("checkpoint contains non-finite weights"));
        }
        Ok(p)
    }

    /// Training history as CSV `epoch,train_loss,val_loss,val_acc`.
    pub fn history_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,val_acc\n");
        for h in &self.history {
            out.push_str(&format!("{},{},{},{}\n", h.epoch, h.train_loss, h.val_loss, h.val_acc));
        }
        out
    }

    /// Head logits for an embedding.
    pub fn logits(&self, z: &Array1<f64>) -> Array1<f64> {
        z.dot(&self.weights.head.weight) + &self.weights.head.bias
    }
}

/// A graph with its propagation matrix computed once.
#[derive(Debug, Clone)]
pub struct PreparedGraph {
    pub adjacency: NormAdjacency,
    pub features: Array2<f64>,
    pub label: usize,
}

impl PreparedGraph {
    pub fn new(g: &Graph) -> Self {
        Self {
            adjacency: normalize_adjacency(g),
            features: g.node_features.clone(),
            label: g.label,
        }
    }
}

pub(crate) struct LayerCache {
    agg: Array2<f64>,
    pre: Array2<f64>,
    /// Inverted-dropout mask (0 or 1/(1-p)) when dropout was applied.
    mask: Option<Array2<f64>>,
}

/// Intermediate activations kept for backpropagation.
pub struct ForwardCache {
    layers: Vec<LayerCache>,
    pub embedding: Array1<f64>,
}

pub(crate) fn forward(
    p: &EncoderParams,
    g: &PreparedGraph,
    dropout: Option<&mut Rng>,
) -> Result<ForwardCache> {
    if g.features.ncols() != p.input_dim {
        return Err(Error::contract(format!(
            "graph has {} features, encoder expects {}",
            g.features.ncols(),
            p.input_dim
        )));
    }
    let drop_p = p.config.dropout_p;
    let mut rng = dropout.filter(|_| drop_p > 0.0);
    let mut h = g.features.clone();
    let mut layers = Vec::with_capacity(p.weights.convs.len());
    for conv in &p.weights.convs {
        let agg = g.adjacency.propagate(&h);
        let pre = agg.dot(&conv.weight) + &conv.bias;
        let mut out = pre.mapv(|v| v.max(0.0));
        let mask = rng.as_deref_mut().map(|r| {
            let keep = 1.0 / (1.0 - drop_p);
            let m = Array2::from_shape_simple_fn(out.raw_dim(), || {
                if r.random::<f64>() < drop_p {
                    0.0
                } else {
                    keep
                }
            });
            out *= &m;
            m
        });
        layers.push(LayerCache { agg, pre, mask });
        h = out;
    }
    let embedding = h.mean_axis(Axis(0)).expect("at least one node");
    Ok(ForwardCache { layers, embedding })
}

/// Accumulates the parameter gradient of a scalar loss into `grads`, given
/// its gradient `gz` with respect to the pooled embedding.
pub(crate) fn backward(
    p: &EncoderParams,
    g: &PreparedGraph,
    cache: &ForwardCache,
    gz: &Array1<f64>,
    grads: &mut Weights,
) {
    let n = g.features.nrows() as f64;
    let mut gh = Array2::from_shape_fn((g.features.nrows(), gz.len()), |(_, j)| gz[j] / n);
    for (l, (conv, lc)) in p.weights.convs.iter().zip(&cache.layers).enumerate().rev() {
        if let Some(m) = &lc.mask {
            gh *= m;
        }
        let mut gpre = gh;
        gpre.zip_mut_with(&lc.pre, |gv, &pv| {
            if pv <= 0.0 {
                *gv = 0.0
            }
        });
        let gl = &mut grads.convs[l];
        ndarray::linalg::general_mat_mul(1.0, &lc.agg.t(), &gpre, 1.0, &mut gl.weight);
        gl.bias += &gpre.sum_axis(Axis(0));
        if l == 0 {
            break;
        }
        let gagg = gpre.dot(&conv.weight.t());
        gh = g.adjacency.propagate(&gagg);
    }
}

/// Pooled graph embedding `z(x)`. Deterministic when `dropout` is `None`.
pub fn encode_graph(p: &EncoderParams, g: &Graph, dropout: Option<&mut Rng>) -> Result<Array1<f64>> {
    Ok(forward(p, &PreparedGraph::new(g), dropout)?.embedding)
}

/// Predictive distribution `softmax(head(z))` with dropout inactive.
pub fn classify(p: &EncoderParams, g: &Graph) -> Result<Categorical> {
    let z = encode_graph(p, g, None)?;
    Ok(Categorical::from_logits(&p.logits(&z)))
}
