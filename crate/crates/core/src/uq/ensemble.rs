use serde::{Deserialize, Serialize};

use super::{entropy, Categorical, Method, UncertaintyRecord};
use crate::encoder::{classify, encode_graph, EncoderParams};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::rng::seeded;

/// Slack for the Jensen gap before a negative knowledge term is an error.
const JENSEN_TOL: f64 = 1e-9;

/// `u_total` is the predictive entropy; the other two entries are absent.
pub fn single_uncertainty(p: &EncoderParams, g: &Graph) -> Result<(Categorical, UncertaintyRecord)> {
    let c = classify(p, g)?;
    let record = UncertaintyRecord {
        method: Method::Single,
        u_data: None,
        u_know: None,
        u_total: Some(entropy(&c)),
    };
    Ok((c, record))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnsembleKind {
    DeepEnsemble,
    McDropout,
}

/// Uniform mixture over model instances: independently trained members, or
/// dropout samples of a single base model.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub members: Vec<EncoderParams>,
    pub kind: EnsembleKind,
}

impl Ensemble {
    pub fn deep(members: Vec<EncoderParams>) -> Result<Self> {
        if members.len() < 2 {
            return Err(Error::contract("a deep ensemble needs at least 2 members"));
        }
        let shape = |p: &EncoderParams| (p.input_dim, p.weights.sizes());
        if members.iter().any(|m| shape(m) != shape(&members[0])) {
            return Err(Error::contract("ensemble members differ in shape"));
        }
        Ok(Self {
            members,
            kind: EnsembleKind::DeepEnsemble,
        })
    }

    pub fn mc_dropout(base: EncoderParams) -> Self {
        Self {
            members: vec![base],
            kind: EnsembleKind::McDropout,
        }
    }

    pub fn method(&self) -> Method {
        match self.kind {
            EnsembleKind::DeepEnsemble => Method::De,
            EnsembleKind::McDropout => Method::Mc,
        }
    }
}

/// Member predictive distributions; their mean is the ensemble prediction.
///
/// Deep ensembles return one distribution per member and ignore
/// `mc_samples`. MC dropout draws `mc_samples` dropout masks from `seed`.
pub fn ensemble_predict(e: &Ensemble, g: &Graph, mc_samples: usize, seed: u64) -> Result<Vec<Categorical>> {
    if e.members.iter().any(|m| m.history.is_empty()) {
        return Err(Error::contract("ensemble member has not been trained"));
    }
    match e.kind {
        EnsembleKind::DeepEnsemble => e.members.iter().map(|m| classify(m, g)).collect(),
        EnsembleKind::McDropout => {
            if mc_samples < 2 {
                return Err(Error::contract("MC dropout needs at least 2 samples"));
            }
            let base = &e.members[0];
            let mut rng = seeded(seed);
            (0..mc_samples)
                .map(|_| {
                    let z = encode_graph(base, g, Some(&mut rng))?;
                    Ok(Categorical::from_logits(&base.logits(&z)))
                })
                .collect()
        }
    }
}

/// Entropy decomposition of a uniform mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub mean: Categorical,
    /// Mean member entropy.
    pub u_data: f64,
    /// Mutual information `u_total - u_data`.
    pub u_know: f64,
    /// Entropy of the mean.
    pub u_total: f64,
}

impl Decomposition {
    pub fn record(&self, method: Method) -> UncertaintyRecord {
        UncertaintyRecord {
            method,
            u_data: Some(self.u_data),
            u_know: Some(self.u_know),
            u_total: Some(self.u_total),
        }
    }
}

pub fn decompose_uncertainty(members: &[Categorical]) -> Result<Decomposition> {
    let mean = Categorical::mean(members)?;
    let u_data = members.iter().map(entropy).sum::<f64>() / members.len() as f64;
    let u_total = entropy(&mean);
    let mut u_know = u_total - u_data;
    if u_know < 0.0 {
        if u_know < -JENSEN_TOL {
            return Err(Error::contract(format!("negative mutual information {u_know}")));
        }
        u_know = 0.0;
    }
    Ok(Decomposition {
        mean,
        u_data,
        u_know,
        u_total,
    })
}
