use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use super::{Method, UncertaintyRecord};
use crate::density::{kde_fit, kde_logpdf, log_sum_exp, Bandwidth, KdeModel};
use crate::error::{Error, Result};

/// Nadaraya-Watson class-probability estimator plus a KDE over the same
/// support embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuqModel {
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub kde: KdeModel,
    /// Bandwidth of the regression kernel.
    pub bandwidth: f64,
}

pub fn nuq_fit(embeddings: Array2<f64>, labels: &[usize], num_classes: usize, rule: Bandwidth) -> Result<NuqModel> {
    if embeddings.nrows() == 0 {
        return Err(Error::Fit("NUQ needs at least one support embedding".into()));
    }
    if embeddings.nrows() != labels.len() {
        return Err(Error::Fit(format!(
            "{} embeddings but {} labels",
            embeddings.nrows(),
            labels.len()
        )));
    }
    let mut counts = vec![0usize; num_classes];
    for &y in labels {
        if y >= num_classes {
            return Err(Error::Fit(format!("label {y} outside [0, {num_classes})")));
        }
        counts[y] += 1;
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Fit(format!("class {empty} has no support")));
    }
    let kde = kde_fit(embeddings, rule)?;
    Ok(NuqModel {
        labels: labels.to_vec(),
        num_classes,
        bandwidth: kde.bandwidth,
        kde,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NuqScores {
    /// Kernel-weighted class frequencies η_k.
    pub eta: Vec<f64>,
    /// max_k η_k (1 - η_k).
    pub max_sigma2: f64,
    pub log_density: f64,
    /// Set when every kernel weight vanished and η came from the nearest support point.
    pub fallback: bool,
    /// `u_data = min_k η_k`; `u_know = ln(max_k σ_k²) - ln p(z)`.
    pub record: UncertaintyRecord,
}

/// Scores one embedding.
///
/// All kernel sums are taken in log space, including `ln(1 - η_k)`, so the
/// knowledge term stays finite and ordered far from the support. It is
/// reported on the log scale, which preserves its ranking.
pub fn nuq_scores(m: &NuqModel, z: ArrayView1<f64>) -> Result<NuqScores> {
    let log_density = kde_logpdf(&m.kde, z)?;
    let s = 2.0 * m.bandwidth * m.bandwidth;
    let log_w: Vec<f64> = m
        .kde
        .points
        .rows()
        .into_iter()
        .map(|x| -crate::density::kde_sq_dist(x, z) / s)
        .collect();
    let mut per_class = vec![Vec::new(); m.num_classes];
    for (&lw, &y) in log_w.iter().zip(&m.labels) {
        per_class[y].push(lw);
    }
    let class_lse: Vec<f64> = per_class.into_iter().map(log_sum_exp).collect();
    let total_lse = log_sum_exp(class_lse.iter().copied());

    let floor = f64::MIN_POSITIVE.ln();
    let (eta, log_sigma2, fallback) = if total_lse.is_finite() {
        let eta: Vec<f64> = class_lse.iter().map(|l| (l - total_lse).exp()).collect();
        let log_sigma2: Vec<f64> = (0..m.num_classes)
            .map(|k| {
                let rest = log_sum_exp(
                    class_lse.iter().enumerate().filter(|&(j, _)| j != k).map(|(_, &l)| l),
                );
                (class_lse[k] - total_lse) + (rest - total_lse)
            })
            .collect();
        (eta, log_sigma2, false)
    } else {
        let nearest = log_w
            .iter()
            .enumerate()
            .filter(|(_, w)| !w.is_nan())
            .fold(None, |best: Option<(usize, f64)>, (i, &w)| match best {
                Some((_, bw)) if bw >= w => best,
                _ => Some((i, w)),
            })
            .map_or(0, |(i, _)| i);
        let mut eta = vec![0.0; m.num_classes];
        eta[m.labels[nearest]] = 1.0;
        (eta, vec![f64::NEG_INFINITY; m.num_classes], true)
    };
    let max_log_sigma2 = log_sigma2.iter().copied().fold(f64::NEG_INFINITY, f64::max).max(floor);
    let u_data = eta.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(NuqScores {
        max_sigma2: max_log_sigma2.exp(),
        log_density,
        fallback,
        record: UncertaintyRecord {
            method: Method::Nuq,
            u_data: Some(u_data),
            u_know: Some(max_log_sigma2 - log_density),
            u_total: None,
        },
        eta,
    })
}
