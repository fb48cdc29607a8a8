use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bandwidth selection for the Gaussian kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bandwidth {
    /// `n^(-1/(d+4))` times the mean per-dimension sample standard deviation.
    Scott,
    Explicit(f64),
}

impl Default for Bandwidth {
    fn default() -> Self {
        Bandwidth::Scott
    }
}

impl Bandwidth {
    pub fn resolve(self, points: &Array2<f64>) -> Result<f64> {
        let (n, d) = points.dim();
        let h = match self {
            Bandwidth::Explicit(h) => h,
            Bandwidth::Scott => {
                if n < 2 {
                    return Err(Error::Fit("Scott's rule needs at least 2 points".into()));
                }
                let sigma = points.std_axis(Axis(0), 1.0).mean().unwrap_or(0.0);
                if sigma <= 0.0 {
                    return Err(Error::Fit(
                        "zero variance in every dimension; pass an explicit bandwidth".into(),
                    ));
                }
                (n as f64).powf(-1.0 / (d as f64 + 4.0)) * sigma
            }
        };
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::Fit(format!("bandwidth must be positive and finite, got {h}")));
        }
        Ok(h)
    }
}

/// Isotropic Gaussian kernel density estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdeModel {
    pub points: Array2<f64>,
    pub bandwidth: f64,
}

pub fn kde_fit(points: Array2<f64>, rule: Bandwidth) -> Result<KdeModel> {
    if points.nrows() == 0 || points.ncols() == 0 {
        return Err(Error::Fit("KDE needs at least one point of dimension >= 1".into()));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::Fit("KDE support contains non-finite values".into()));
    }
    let bandwidth = rule.resolve(&points)?;
    Ok(KdeModel { points, bandwidth })
}

pub fn log_sum_exp(values: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.into_iter().collect();
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl KdeModel {
    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    /// `-|z - x_i|² / (2h²)` for every support point.
    pub(crate) fn log_kernel_weights(&self, z: ArrayView1<f64>) -> Vec<f64> {
        let s = 2.0 * self.bandwidth * self.bandwidth;
        self.points.rows().into_iter().map(|x| -sq_dist(x, z) / s).collect()
    }
}

/// `ln( (1/n) Σ N(z; x_i, h² I) )`, evaluated with log-sum-exp.
pub fn kde_logpdf(m: &KdeModel, z: ArrayView1<f64>) -> Result<f64> {
    if z.len() != m.dim() {
        return Err(Error::contract(format!(
            "query has dimension {}, KDE has {}",
            z.len(),
            m.dim()
        )));
    }
    let d = m.dim() as f64;
    let h2 = m.bandwidth * m.bandwidth;
    Ok(log_sum_exp(m.log_kernel_weights(z)) - (m.len() as f64).ln()
        - 0.5 * d * (2.0 * std::f64::consts::PI * h2).ln())
}
