//! Natural-posterior-style Dirichlet model: the head's softmax output spreads
//! an evidence count `n(x) = budget * q(z)` over classes, where `q` is a
//! radial flow density on a (projected) embedding.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::special::{digamma, ln_gamma, trigamma};
use super::{entropy, Categorical, Method, UncertaintyRecord};
use crate::density::{flow_logpdf, FlowConfig, RadialFlow};
use crate::encoder::{
    softmax, Adam, EncoderConfig, EncoderParams, EpochStats, ForwardCache, PreparedGraph, Weights,
    BATCH_SIZE,
};
use crate::encoder::{encode_graph};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::rng::{seeded, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NatPnConfig {
    /// Weight of the Dirichlet entropy regulariser.
    pub lambda: f64,
    pub prior_beta: f64,
    /// Certainty budget; the training-set size when absent.
    pub budget: Option<f64>,
    /// Flow-only maximum-likelihood epochs on the initial embeddings.
    pub warmup_epochs: usize,
    pub flow: FlowConfig,
}

impl Default for NatPnConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-4,
            prior_beta: 1.0,
            budget: None,
            warmup_epochs: 5,
            flow: FlowConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NatPnModel {
    pub encoder: EncoderParams,
    pub flow: RadialFlow,
    pub prior_beta: f64,
    pub budget: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirichletPrediction {
    pub alpha: Vec<f64>,
    /// Flow log-density of the embedding.
    pub log_density: f64,
}

impl DirichletPrediction {
    /// `α_c = β + budget · exp(log_density) · χ_c`.
    pub fn from_evidence(chi: &Categorical, log_density: f64, prior_beta: f64, budget: f64) -> Result<Self> {
        if log_density.is_nan() || log_density == f64::INFINITY {
            return Err(Error::contract(format!("flow log-density {log_density}")));
        }
        let evidence = budget * log_density.exp();
        let alpha: Vec<f64> = chi.probs().iter().map(|&c| prior_beta + evidence * c).collect();
        if alpha.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
            return Err(Error::contract(format!("invalid concentration {alpha:?}")));
        }
        Ok(Self { alpha, log_density })
    }

    pub fn evidence(&self, prior_beta: f64) -> f64 {
        self.alpha.iter().map(|a| a - prior_beta).sum()
    }

    pub fn mean(&self) -> Categorical {
        let s: f64 = self.alpha.iter().sum();
        Categorical::new(self.alpha.iter().map(|a| a / s).collect()).expect("positive concentrations")
    }
}

pub fn natpn_posterior(
    p: &EncoderParams,
    f: &RadialFlow,
    g: &Graph,
    prior_beta: f64,
    budget: f64,
) -> Result<DirichletPrediction> {
    let z = encode_graph(p, g, None)?;
    let chi = Categorical::from_logits(&p.logits(&z));
    let log_density = flow_logpdf(f, z.view())?;
    if !log_density.is_finite() {
        return Err(Error::contract(format!("non-finite flow log-density {log_density}")));
    }
    DirichletPrediction::from_evidence(&chi, log_density, prior_beta, budget)
}

/// Mean of the Dirichlet as prediction; `u_data` its entropy, `u_know` the
/// negative flow log-density.
pub fn natpn_uncertainty(d: &DirichletPrediction) -> (Categorical, UncertaintyRecord) {
    let mean = d.mean();
    let record = UncertaintyRecord {
        method: Method::Natpn,
        u_data: Some(entropy(&mean)),
        u_know: Some(-d.log_density),
        u_total: None,
    };
    (mean, record)
}

impl NatPnModel {
    pub fn posterior(&self, g: &Graph) -> Result<DirichletPrediction> {
        natpn_posterior(&self.encoder, &self.flow, g, self.prior_beta, self.budget)
    }
}

/// Dirichlet entropy.
fn dirichlet_entropy(alpha: &[f64]) -> f64 {
    let a0: f64 = alpha.iter().sum();
    let k = alpha.len() as f64;
    alpha.iter().map(|&a| ln_gamma(a)).sum::<f64>() - ln_gamma(a0) + (a0 - k) * digamma(a0)
        - alpha.iter().map(|&a| (a - 1.0) * digamma(a)).sum::<f64>()
}

/// `-(E[ln μ_y]) - λ H[Dir(α)]` and its gradient with respect to `α`.
fn bayesian_loss(alpha: &[f64], label: usize, lambda: f64) -> (f64, Vec<f64>) {
    let a0: f64 = alpha.iter().sum();
    let k = alpha.len() as f64;
    let loss = -(digamma(alpha[label]) - digamma(a0)) - lambda * dirichlet_entropy(alpha);
    let tg0 = trigamma(a0);
    let grad = alpha
        .iter()
        .enumerate()
        .map(|(c, &a)| {
            let nll = tg0 - if c == label { trigamma(a) } else { 0.0 };
            let dh = (a0 - k) * tg0 - (a - 1.0) * trigamma(a);
            nll - lambda * dh
        })
        .collect();
    (loss, grad)
}

struct Trainable<'a> {
    encoder: &'a EncoderParams,
    flow: &'a RadialFlow,
    prior_beta: f64,
    budget: f64,
    lambda: f64,
}

impl Trainable<'_> {
    fn alpha_of(&self, cache: &ForwardCache) -> Result<(Vec<f64>, Array1<f64>, f64)> {
        let z = &cache.embedding;
        let chi = softmax(&self.encoder.logits(z));
        let logq = flow_logpdf(self.flow, z.view())?;
        let n = self.budget * logq.exp();
        let alpha = chi.iter().map(|c| self.prior_beta + n * c).collect();
        Ok((alpha, chi, logq))
    }

    /// Loss of one graph; gradients are scaled by `scale` and accumulated.
    fn loss_and_grad(
        &self,
        g: &PreparedGraph,
        dropout: Option<&mut Rng>,
        scale: f64,
        enc_grads: &mut Weights,
        flow_grads: &mut RadialFlow,
    ) -> Result<f64> {
        let cache = crate::encoder::model_forward(self.encoder, g, dropout)?;
        let (alpha, chi, logq) = self.alpha_of(&cache)?;
        let (loss, g_alpha) = bayesian_loss(&alpha, g.label, self.lambda);
        let n = self.budget * logq.exp();
        let g_n: f64 = g_alpha.iter().zip(chi.iter()).map(|(ga, c)| ga * c).sum();
        let g_chi: Array1<f64> = g_alpha.iter().map(|ga| ga * n).collect();
        let glogits = &chi * &(&g_chi - chi.dot(&g_chi)) * scale;
        // d n / d logq = n
        let g_logq = g_n * n * scale;

        let z = &cache.embedding;
        let head = &mut enc_grads.head;
        for (k, &zk) in z.iter().enumerate() {
            head.weight.row_mut(k).scaled_add(zk, &glogits);
        }
        head.bias += &glogits;
        let mut gz = self.encoder.weights.head.weight.dot(&glogits);
        let (_, gz_flow) = self.flow.logpdf_and_grad(z.view(), g_logq, flow_grads);
        gz += &gz_flow;
        crate::encoder::model_backward(self.encoder, g, &cache, &gz, enc_grads);
        Ok(loss)
    }

    fn evaluate(&self, graphs: &[PreparedGraph]) -> Result<(f64, f64)> {
        let mut loss = 0.0;
        let mut correct = 0usize;
        for g in graphs {
            let cache = crate::encoder::model_forward(self.encoder, g, None)?;
            let (alpha, _, _) = self.alpha_of(&cache)?;
            loss += bayesian_loss(&alpha, g.label, self.lambda).0;
            if super::argmax(&alpha) == g.label {
                correct += 1;
            }
        }
        let n = graphs.len().max(1) as f64;
        Ok((loss / n, correct as f64 / n))
    }
}

/// Jointly trains encoder, head and flow on the Bayesian loss with Adam,
/// early-stopping on validation loss.
pub fn train_natpn(train: &[Graph], val: &[Graph], cfg: &EncoderConfig, ncfg: &NatPnConfig) -> Result<NatPnModel> {
    let Some(first) = train.first() else {
        return Err(Error::contract("empty training set"));
    };
    if let Some(g) = train.iter().chain(val).find(|g| g.label >= cfg.output_dim) {
        return Err(Error::contract(format!("label {} outside head range", g.label)));
    }
    if !(ncfg.prior_beta > 0.0) {
        return Err(Error::contract("prior_beta must be positive"));
    }
    let mut rng = seeded(cfg.seed);
    let mut encoder = EncoderParams::init(cfg, first.num_features(), &mut rng)?;
    let hidden = cfg.hidden_dim;
    let latent = hidden.min(ncfg.flow.latent_dim.max(1));
    let projection = (hidden > latent).then(|| {
        let bound = 1.0 / (hidden as f64).sqrt();
        Array2::from_shape_simple_fn((hidden, latent), || rng.random_range(-bound..bound))
    });
    let mut flow = RadialFlow::init(latent, ncfg.flow.num_layers, projection, &mut rng);
    let budget = ncfg.budget.unwrap_or(train.len() as f64);
    let train_p: Vec<PreparedGraph> = train.iter().map(PreparedGraph::new).collect();
    let val_p: Vec<PreparedGraph> = val.iter().map(PreparedGraph::new).collect();

    // Standardise the projected initial embeddings, then warm the flow up on them.
    let embed = |enc: &EncoderParams, flow: &RadialFlow| -> Result<Array2<f64>> {
        let rows: Vec<Array1<f64>> = train_p
            .iter()
            .map(|g| {
                let z = crate::encoder::model_forward(enc, g, None)?.embedding;
                Ok(match &flow.projection {
                    Some(p) => z.dot(p),
                    None => z,
                })
            })
            .collect::<Result<_>>()?;
        let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
        Ok(ndarray::stack(ndarray::Axis(0), &views).expect("equal widths"))
    };
    let projected = embed(&encoder, &flow)?;
    flow.shift = projected.mean_axis(ndarray::Axis(0)).expect("non-empty");
    flow.log_scale = projected
        .std_axis(ndarray::Axis(0), 0.0)
        .mapv(|s| if s > 1e-12 { -s.ln() } else { 0.0 });
    if ncfg.warmup_epochs > 0 && ncfg.flow.num_layers > 0 {
        let mut core = flow.clone();
        core.projection = None;
        let mut opt = Adam::new(&core.sizes(), ncfg.flow.learning_rate, 0.0);
        let mut order: Vec<usize> = (0..projected.nrows()).collect();
        for _ in 0..ncfg.warmup_epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(ncfg.flow.batch_size.max(1)) {
                let mut grads = core.zeros_like();
                let g_out = -1.0 / chunk.len() as f64;
                for &i in chunk {
                    core.logpdf_and_grad(projected.row(i), g_out, &mut grads);
                }
                opt.step(core.slices_mut(), grads.slices());
            }
        }
        core.projection = flow.projection.take();
        flow = core;
    }

    let lambda = ncfg.lambda;
    let prior_beta = ncfg.prior_beta;
    let monitor = |enc: &EncoderParams, fl: &RadialFlow| -> Result<(f64, f64, f64)> {
        let t = Trainable {
            encoder: enc,
            flow: fl,
            prior_beta,
            budget,
            lambda,
        };
        let (train_loss, _) = t.evaluate(&train_p)?;
        let (val_loss, val_acc) = if val_p.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            t.evaluate(&val_p)?
        };
        Ok((train_loss, val_loss, val_acc))
    };
    let (tl, vl, va) = monitor(&encoder, &flow)?;
    encoder.history.push(EpochStats {
        epoch: 0,
        train_loss: tl,
        val_loss: vl,
        val_acc: va,
    });
    let pick = |tl: f64, vl: f64| if val_p.is_empty() { tl } else { vl };
    let mut best_loss = pick(tl, vl);
    let mut best = (encoder.weights.clone(), flow.clone());
    let mut since_best = 0;

    let mut enc_opt = Adam::new(&encoder.weights.sizes(), cfg.learning_rate, cfg.weight_decay);
    let mut flow_opt = Adam::new(&flow.sizes(), cfg.learning_rate, 0.0);
    let mut order: Vec<usize> = (0..train_p.len()).collect();
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(BATCH_SIZE) {
            let mut enc_grads = encoder.weights.zeros_like();
            let mut flow_grads = flow.zeros_like();
            let scale = 1.0 / chunk.len() as f64;
            let t = Trainable {
                encoder: &encoder,
                flow: &flow,
                prior_beta,
                budget,
                lambda,
            };
            let mut batch_loss = 0.0;
            for &i in chunk {
                batch_loss += t.loss_and_grad(&train_p[i], Some(&mut rng), scale, &mut enc_grads, &mut flow_grads)?;
            }
            let finite = batch_loss.is_finite()
                && enc_grads.all_finite()
                && flow_grads.slices().iter().all(|s| s.iter().all(|v| v.is_finite()));
            if !finite {
                return Err(Error::Training {
                    epoch,
                    msg: format!("non-finite Bayesian loss {batch_loss}"),
                });
            }
            epoch_loss += batch_loss;
            enc_opt.step(encoder.weights.slices_mut(), enc_grads.slices());
            flow_opt.step(flow.slices_mut(), flow_grads.slices());
        }
        let (_, vl, va) = if val_p.is_empty() {
            (0.0, f64::NAN, f64::NAN)
        } else {
            monitor(&encoder, &flow)?
        };
        let tl = epoch_loss / train_p.len() as f64;
        encoder.history.push(EpochStats {
            epoch,
            train_loss: tl,
            val_loss: vl,
            val_acc: va,
        });
        let current = pick(tl, vl);
        if !current.is_finite() {
            return Err(Error::Training {
                epoch,
                msg: format!("non-finite monitored loss {current}"),
            });
        }
        if current < best_loss {
            best_loss = current;
            best = (encoder.weights.clone(), flow.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    encoder.weights = best.0;
    Ok(NatPnModel {
        encoder,
        flow: best.1,
        prior_beta,
        budget,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn prior_only_posterior_is_uniform() {
        let chi = Categorical::new(vec![0.2, 0.5, 0.3]).unwrap();
        let d = DirichletPrediction::from_evidence(&chi, -1e4, 1.0, 1000.0).unwrap();
        assert_eq!(d.alpha, vec![1.0, 1.0, 1.0]);
        let (mean, rec) = natpn_uncertainty(&d);
        assert_eq!(mean, Categorical::uniform(3));
        assert_abs_diff_eq!(rec.u_data.unwrap(), 3f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn evidence_formula() {
        let chi = Categorical::new(vec![1.0, 0.0, 0.0]).unwrap();
        // n(x) = budget · exp(log q) = 10
        let d = DirichletPrediction::from_evidence(&chi, 0.0, 1.0, 10.0).unwrap();
        assert_eq!(d.alpha, vec![11.0, 1.0, 1.0]);
        let m = d.mean();
        assert_abs_diff_eq!(m.probs()[0], 11.0 / 13.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m.probs()[1], 1.0 / 13.0, epsilon = 1e-15);
    }

    #[test]
    fn budget_scales_evidence_linearly() {
        let chi = Categorical::new(vec![0.3, 0.7]).unwrap();
        let a = DirichletPrediction::from_evidence(&chi, -1.7, 1.0, 50.0).unwrap();
        let b = DirichletPrediction::from_evidence(&chi, -1.7, 1.0, 100.0).unwrap();
        assert_eq!(2.0 * a.evidence(1.0), b.evidence(1.0));
    }

    #[test]
    fn concentrated_alpha() {
        let d = DirichletPrediction {
            alpha: vec![100.0, 1.0, 1.0],
            log_density: 0.0,
        };
        let (mean, rec) = natpn_uncertainty(&d);
        assert_abs_diff_eq!(mean.probs()[0], 0.980, epsilon = 5e-4);
        assert_abs_diff_eq!(mean.probs()[1], 0.0098, epsilon = 5e-5);
        assert!(rec.u_data.unwrap() < 3f64.ln());
    }

    #[test]
    fn non_finite_density_is_rejected() {
        let chi = Categorical::uniform(2);
        assert!(DirichletPrediction::from_evidence(&chi, f64::NAN, 1.0, 1.0).is_err());
        assert!(DirichletPrediction::from_evidence(&chi, 1e6, 1.0, 1.0).is_err());
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let alpha = [2.5, 0.7, 13.0];
        let (_, g) = bayesian_loss(&alpha, 1, 0.3);
        for c in 0..3 {
            let h = 1e-6;
            let mut up = alpha;
            let mut down = alpha;
            up[c] += h;
            down[c] -= h;
            let numeric = (bayesian_loss(&up, 1, 0.3).0 - bayesian_loss(&down, 1, 0.3).0) / (2.0 * h);
            assert!((numeric - g[c]).abs() < 1e-6, "{c}: {numeric} vs {}", g[c]);
        }
    }

    #[test]
    fn entropy_of_flat_dirichlet() {
        // Dir(1, …, 1) is uniform on the simplex: entropy = -ln((K-1)!)
        assert_abs_diff_eq!(dirichlet_entropy(&[1.0, 1.0, 1.0]), -(2f64).ln(), epsilon = 1e-12);
    }
}
