//! Radial normalizing flow with an elementwise affine front layer.
//!
//! The flow maps data `x` to the base space through
//! `affine -> radial_1 -> ... -> radial_L`; the log-density is the standard
//! normal log-density of the image plus the summed log-determinants.
//! An optional linear projection in front reduces wide embeddings; densities
//! are then densities of the projected point.

use ndarray::{Array1, Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::std_normal_logpdf;
use crate::encoder::Adam;
use crate::error::{Error, Result};
use crate::rng::{seeded, Rng};

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `y = x + β (x - c) / (α + |x - c|)` with `α = softplus(a)` and
/// `β = -α + softplus(b)`, which keeps `β > -α` and hence invertibility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialLayer {
    pub center: Array1<f64>,
    pub alpha_raw: f64,
    pub beta_raw: f64,
}

impl RadialLayer {
    pub fn alpha(&self) -> f64 {
        softplus(self.alpha_raw)
    }

    pub fn beta(&self) -> f64 {
        -self.alpha() + softplus(self.beta_raw)
    }

    fn is_valid(&self) -> bool {
        let (a, b) = (self.alpha(), self.beta());
        a > 0.0 && a.is_finite() && b.is_finite() && b > -a && self.center.iter().all(|v| v.is_finite())
    }

    /// Image of `x` and `ln |det J|`.
    pub fn forward(&self, x: ArrayView1<f64>) -> (Array1<f64>, f64) {
        let (alpha, beta) = (self.alpha(), self.beta());
        let d = x.len() as f64;
        let diff = &x - &self.center;
        let r = diff.dot(&diff).sqrt();
        let h = 1.0 / (alpha + r);
        let y = &x + &(&diff * (beta * h));
        let ld = (d - 1.0) * (beta * h).ln_1p() + (beta * alpha * h * h).ln_1p();
        (y, ld)
    }

    /// Closed-form inverse of [`RadialLayer::forward`].
    pub fn inverse(&self, y: ArrayView1<f64>) -> Array1<f64> {
        let (alpha, beta) = (self.alpha(), self.beta());
        let dy = &y - &self.center;
        let ry = dy.dot(&dy).sqrt();
        if ry == 0.0 {
            return self.center.clone();
        }
        // r solves r² + (α + β - r_y) r - r_y α = 0, r ≥ 0.
        let b = alpha + beta - ry;
        let disc = (b * b + 4.0 * ry * alpha).sqrt();
        let r = if b > 0.0 {
            2.0 * ry * alpha / (b + disc)
        } else {
            0.5 * (disc - b)
        };
        &self.center + &(&dy * (r / ry))
    }

    /// Given upstream gradients `gy` (w.r.t. the output) and `g_ld` (w.r.t.
    /// the log-determinant), accumulates parameter gradients into `grad` and
    /// returns the gradient w.r.t. `x`.
    fn backward(&self, x: ArrayView1<f64>, gy: &Array1<f64>, g_ld: f64, grad: &mut RadialLayer) -> Array1<f64> {
        let (alpha, beta) = (self.alpha(), self.beta());
        let d = x.len() as f64;
        let diff = &x - &self.center;
        let r = diff.dot(&diff).sqrt();
        let h = 1.0 / (alpha + r);
        let s = beta * h;
        let u = gy.dot(&diff);
        let q1 = 1.0 + beta * h;
        let q2 = 1.0 + beta * alpha * h * h;
        let dld_dh = (d - 1.0) * beta / q1 + 2.0 * beta * alpha * h / q2;
        let dld_dbeta = (d - 1.0) * h / q1 + alpha * h * h / q2;
        let dld_dalpha = beta * h * h / q2;

        let gh = u * beta + g_ld * dld_dh;
        let g_alpha = -h * h * gh + g_ld * dld_dalpha;
        let g_r = -h * h * gh;
        let g_beta = u * h + g_ld * dld_dbeta;

        let mut g_diff = gy * s;
        if r > 0.0 {
            g_diff.scaled_add(g_r / r, &diff);
        }
        grad.center -= &g_diff;
        let sa = sigmoid(self.alpha_raw);
        grad.alpha_raw += (g_alpha - g_beta) * sa;
        grad.beta_raw += g_beta * sigmoid(self.beta_raw);
        gy + &g_diff
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub num_layers: usize,
    /// Flow dimension when embeddings are projected (NatPN).
    pub latent_dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            num_layers: 8,
            latent_dim: 16,
            epochs: 100,
            learning_rate: 1e-2,
            batch_size: 128,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialFlow {
    /// Optional (input_dim × dim) projection applied before the flow.
    pub projection: Option<Array2<f64>>,
    pub shift: Array1<f64>,
    pub log_scale: Array1<f64>,
    pub layers: Vec<RadialLayer>,
}

/// Gradient container with the same layout as the flow.
pub type FlowGrads = RadialFlow;

impl RadialFlow {
    /// Identity affine part, radial layers drawn near the identity.
    pub fn init(dim: usize, num_layers: usize, projection: Option<Array2<f64>>, rng: &mut Rng) -> Self {
        let layers = (0..num_layers)
            .map(|_| {
                let center = Array1::from_shape_simple_fn(dim, || StandardNormal.sample(rng));
                let alpha_raw: f64 = rng.random_range(-0.5..0.5);
                // softplus(beta_raw) ≈ alpha, i.e. β ≈ 0
                let beta_raw = alpha_raw + rng.random_range(-0.1..0.1);
                RadialLayer {
                    center,
                    alpha_raw,
                    beta_raw,
                }
            })
            .collect();
        Self {
            projection,
            shift: Array1::zeros(dim),
            log_scale: Array1::zeros(dim),
            layers,
        }
    }

    /// Flow with no radial layers: a standard normal (after the affine part).
    pub fn identity(dim: usize) -> Self {
        Self {
            projection: None,
            shift: Array1::zeros(dim),
            log_scale: Array1::zeros(dim),
            layers: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    pub fn input_dim(&self) -> usize {
        self.projection.as_ref().map_or(self.dim(), |p| p.nrows())
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            projection: self.projection.as_ref().map(|p| Array2::zeros(p.raw_dim())),
            shift: Array1::zeros(self.dim()),
            log_scale: Array1::zeros(self.dim()),
            layers: self
                .layers
                .iter()
                .map(|l| RadialLayer {
                    center: Array1::zeros(l.center.len()),
                    alpha_raw: 0.0,
                    beta_raw: 0.0,
                })
                .collect(),
        }
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        if let Some(p) = &self.projection {
            out.push(p.as_slice().expect("standard layout"));
        }
        out.push(self.shift.as_slice().expect("standard layout"));
        out.push(self.log_scale.as_slice().expect("standard layout"));
        for l in &self.layers {
            out.push(l.center.as_slice().expect("standard layout"));
            out.push(std::slice::from_ref(&l.alpha_raw));
            out.push(std::slice::from_ref(&l.beta_raw));
        }
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        if let Some(p) = &mut self.projection {
            out.push(p.as_slice_mut().expect("standard layout"));
        }
        out.push(self.shift.as_slice_mut().expect("standard layout"));
        out.push(self.log_scale.as_slice_mut().expect("standard layout"));
        for l in &mut self.layers {
            out.push(l.center.as_slice_mut().expect("standard layout"));
            out.push(std::slice::from_mut(&mut l.alpha_raw));
            out.push(std::slice::from_mut(&mut l.beta_raw));
        }
        out
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.slices().iter().map(|s| s.len()).collect()
    }

    pub fn check_valid(&self) -> Result<()> {
        if self.layers.iter().all(RadialLayer::is_valid)
            && self.log_scale.iter().chain(self.shift.iter()).all(|v| v.is_finite())
        {
            Ok(())
        } else {
            Err(Error::contract("radial flow parameters violate invertibility"))
        }
    }

    fn project(&self, z: ArrayView1<f64>) -> Array1<f64> {
        match &self.projection {
            Some(p) => z.dot(p),
            None => z.to_owned(),
        }
    }

    /// Maps a (projected) point to base space; returns the image and the total log-determinant.
    pub fn transform(&self, x: ArrayView1<f64>) -> (Array1<f64>, f64) {
        let mut y = (&x - &self.shift) * &self.log_scale.mapv(f64::exp);
        let mut ld = self.log_scale.sum();
        for layer in &self.layers {
            let (next, l) = layer.forward(y.view());
            y = next;
            ld += l;
        }
        (y, ld)
    }

    /// Inverse of [`RadialFlow::transform`].
    pub fn inverse(&self, y: ArrayView1<f64>) -> Array1<f64> {
        let mut x = y.to_owned();
        for layer in self.layers.iter().rev() {
            x = layer.inverse(x.view());
        }
        &(&x * &self.log_scale.mapv(|v| (-v).exp())) + &self.shift
    }

    /// Log-density of `z` and its gradient. Parameter gradients scaled by
    /// `g_out` are accumulated into `grads`; the returned vector is
    /// `g_out * ∂ log p / ∂z`.
    pub fn logpdf_and_grad(&self, z: ArrayView1<f64>, g_out: f64, grads: &mut FlowGrads) -> (f64, Array1<f64>) {
        let x0 = self.project(z);
        let scale = self.log_scale.mapv(f64::exp);
        let u0 = (&x0 - &self.shift) * &scale;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut y = u0.clone();
        let mut ld = self.log_scale.sum();
        for layer in &self.layers {
            let (next, l) = layer.forward(y.view());
            inputs.push(y);
            y = next;
            ld += l;
        }
        let logp = std_normal_logpdf(y.as_slice().expect("contiguous")) + ld;

        let mut g = &y * (-g_out);
        for ((layer, x), lg) in self.layers.iter().zip(&inputs).zip(&mut grads.layers).rev() {
            g = layer.backward(x.view(), &g, g_out, lg);
        }
        grads.log_scale += &(&(&g * &u0) + g_out);
        grads.shift -= &(&g * &scale);
        let gx0 = &g * &scale;
        let gz = match (&self.projection, &mut grads.projection) {
            (Some(p), Some(gp)) => {
                for (i, &zi) in z.iter().enumerate() {
                    gp.row_mut(i).scaled_add(zi, &gx0);
                }
                p.dot(&gx0)
            }
            _ => gx0,
        };
        (logp, gz)
    }
}

/// Change-of-variables log-density of `z`.
pub fn flow_logpdf(f: &RadialFlow, z: ArrayView1<f64>) -> Result<f64> {
    if z.len() != f.input_dim() {
        return Err(Error::contract(format!(
            "query has dimension {}, flow expects {}",
            z.len(),
            f.input_dim()
        )));
    }
    f.check_valid()?;
    let (y, ld) = f.transform(f.project(z).view());
    Ok(std_normal_logpdf(y.as_slice().expect("contiguous")) + ld)
}

fn mean_loglik(f: &RadialFlow, points: &Array2<f64>) -> f64 {
    points
        .rows()
        .into_iter()
        .map(|p| {
            let (y, ld) = f.transform(p);
            std_normal_logpdf(y.as_slice().expect("contiguous")) + ld
        })
        .sum::<f64>()
        / points.nrows() as f64
}

/// Fits a flow to `points` by maximising mean log-likelihood with Adam.
///
/// The affine layer starts at the per-dimension standardisation of the data.
/// The returned flow is the best one seen, including the initialisation.
pub fn flow_fit(points: &Array2<f64>, cfg: &FlowConfig) -> Result<RadialFlow> {
    let (n, d) = points.dim();
    if n < 2 || d == 0 {
        return Err(Error::Fit("flow fitting needs at least 2 points".into()));
    }
    let mut rng = seeded(cfg.seed);
    let mut flow = RadialFlow::init(d, cfg.num_layers, None, &mut rng);
    let mean = points.mean_axis(ndarray::Axis(0)).expect("n >= 2");
    let std = points.std_axis(ndarray::Axis(0), 0.0);
    flow.shift = mean;
    flow.log_scale = std.mapv(|s| if s > 0.0 { -s.ln() } else { 0.0 });

    let mut best_ll = mean_loglik(&flow, points);
    if !best_ll.is_finite() {
        return Err(Error::Training {
            epoch: 0,
            msg: "non-finite initial log-likelihood".into(),
        });
    }
    let mut best = flow.clone();
    let mut opt = Adam::new(&flow.sizes(), cfg.learning_rate, 0.0);
    let mut order: Vec<usize> = (0..n).collect();
    let batch = cfg.batch_size.max(1);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            let mut grads = flow.zeros_like();
            // minimise the negative mean log-likelihood
            let g_out = -1.0 / chunk.len() as f64;
            for &i in chunk {
                flow.logpdf_and_grad(points.row(i), g_out, &mut grads);
            }
            opt.step(flow.slices_mut(), grads.slices());
        }
        let ll = mean_loglik(&flow, points);
        if !ll.is_finite() {
            return Err(Error::Training {
                epoch,
                msg: format!("non-finite mean log-likelihood {ll}"),
            });
        }
        if ll > best_ll {
            best_ll = ll;
            best = flow.clone();
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn random_flow(dim: usize, layers: usize, seed: u64) -> RadialFlow {
        let mut rng = seeded(seed);
        let mut f = RadialFlow::init(dim, layers, None, &mut rng);
        for l in &mut f.layers {
            l.alpha_raw = rng.random_range(-1.0..1.0);
            l.beta_raw = rng.random_range(-1.0..1.5);
        }
        f.shift = Array1::from_shape_simple_fn(dim, || rng.random_range(-0.5..0.5));
        f.log_scale = Array1::from_shape_simple_fn(dim, || rng.random_range(-0.3..0.3));
        f
    }

    #[test]
    fn empty_flow_is_standard_normal() {
        let f = RadialFlow::identity(3);
        let lp = flow_logpdf(&f, array![0.0, 0.0, 0.0].view()).unwrap();
        assert_abs_diff_eq!(lp, -1.5 * (2.0 * std::f64::consts::PI).ln(), epsilon = 1e-14);
    }

    #[test]
    fn log_det_matches_numerical_jacobian() {
        for seed in 0..10 {
            let f = random_flow(3, 1, seed);
            let layer = &f.layers[0];
            let x = array![0.3, -0.7, 1.1];
            let (_, ld) = layer.forward(x.view());
            let eps = 1e-6;
            let mut jac = nalgebra::DMatrix::<f64>::zeros(3, 3);
            for j in 0..3 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[j] += eps;
                xm[j] -= eps;
                let (yp, _) = layer.forward(xp.view());
                let (ym, _) = layer.forward(xm.view());
                for i in 0..3 {
                    jac[(i, j)] = (yp[i] - ym[i]) / (2.0 * eps);
                }
            }
            let numeric = jac.determinant().abs().ln();
            assert!(((ld - numeric) / numeric.abs().max(1e-12)).abs() < 1e-4 || (ld - numeric).abs() < 1e-8,
                "seed {seed}: {ld} vs {numeric}");
        }
    }

    #[test]
    fn inverse_recovers_input() {
        for seed in 0..20 {
            let f = random_flow(4, 6, seed);
            let x = array![0.5, -1.0, 2.0, 0.0] * (seed as f64 * 0.3 + 0.1);
            let (y, _) = f.transform(x.view());
            let back = f.inverse(y.view());
            for (a, b) in back.iter().zip(x.iter()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = seeded(5);
        let mut f = random_flow(3, 3, 7);
        f.projection = Some(Array2::from_shape_simple_fn((4, 3), || rng.random_range(-1.0..1.0)));
        let z = array![0.2, -0.4, 0.9, 0.1];
        let mut grads = f.zeros_like();
        let (lp, gz) = f.logpdf_and_grad(z.view(), 1.0, &mut grads);
        assert_abs_diff_eq!(lp, flow_logpdf(&f, z.view()).unwrap(), epsilon = 1e-12);

        let h = 1e-6;
        let analytic: Vec<f64> = grads.slices().concat();
        let mut probe = f.clone();
        let n_params = analytic.len();
        for k in 0..n_params {
            let orig = probe.slices()[..].concat()[k];
            let set = |fl: &mut RadialFlow, v: f64| {
                let mut idx = k;
                for s in fl.slices_mut() {
                    if idx < s.len() {
                        s[idx] = v;
                        return;
                    }
                    idx -= s.len();
                }
            };
            set(&mut probe, orig + h);
            let up = flow_logpdf(&probe, z.view()).unwrap();
            set(&mut probe, orig - h);
            let down = flow_logpdf(&probe, z.view()).unwrap();
            set(&mut probe, orig);
            let numeric = (up - down) / (2.0 * h);
            assert!(
                (numeric - analytic[k]).abs() <= 1e-6 * (1.0 + numeric.abs()),
                "param {k}: analytic {} numeric {numeric}",
                analytic[k]
            );
        }
        for j in 0..4 {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[j] += h;
            zm[j] -= h;
            let numeric = (flow_logpdf(&f, zp.view()).unwrap() - flow_logpdf(&f, zm.view()).unwrap()) / (2.0 * h);
            assert!((numeric - gz[j]).abs() <= 1e-6 * (1.0 + numeric.abs()));
        }
    }

    #[test]
    fn fit_edge_cases() {
        let pts = array![[0.0, 1.0], [1.0, 0.5], [2.0, -1.0]];
        let cfg = FlowConfig {
            epochs: 0,
            num_layers: 2,
            ..Default::default()
        };
        let a = flow_fit(&pts, &cfg).unwrap();
        let mut rng = seeded(cfg.seed);
        let init = RadialFlow::init(2, 2, None, &mut rng);
        assert_eq!(a.layers, init.layers);
        let cfg = FlowConfig { epochs: 3, ..cfg };
        assert_eq!(flow_fit(&pts, &cfg).unwrap(), flow_fit(&pts, &cfg).unwrap());
        assert!(flow_fit(&array![[1.0, 2.0]], &cfg).is_err());
        assert!(flow_logpdf(&a, array![1.0].view()).is_err());
    }
}
