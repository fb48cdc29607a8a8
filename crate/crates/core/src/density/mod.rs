//! Density estimators over graph embeddings.

mod flow;
mod kde;

pub use flow::{flow_fit, flow_logpdf, FlowConfig, FlowGrads, RadialFlow, RadialLayer};
pub use kde::{kde_fit, kde_logpdf, log_sum_exp, sq_dist as kde_sq_dist, Bandwidth, KdeModel};

/// ln N(x; 0, I).
pub fn std_normal_logpdf(x: &[f64]) -> f64 {
    let d = x.len() as f64;
    -0.5 * d * (2.0 * std::f64::consts::PI).ln() - 0.5 * x.iter().map(|v| v * v).sum::<f64>()
}
