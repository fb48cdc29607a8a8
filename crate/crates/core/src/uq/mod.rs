//! The uncertainty estimators.
//!
//! Entropy-based: `single` (entropy of one model), `mc` and `de` (ensemble
//! decomposition into data and knowledge uncertainty). Density-based: `nuq`
//! (Nadaraya-Watson class probabilities plus a KDE) and `natpn` (Dirichlet
//! evidence from a normalizing flow).

mod ensemble;
mod natpn;
mod nuq;
mod special;

pub use ensemble::{
    decompose_uncertainty, ensemble_predict, single_uncertainty, Decomposition, Ensemble,
    EnsembleKind,
};
pub use natpn::{
    natpn_posterior, natpn_uncertainty, train_natpn, DirichletPrediction, NatPnConfig, NatPnModel,
};
pub use nuq::{nuq_fit, nuq_scores, NuqModel, NuqScores};
pub use special::{digamma, ln_gamma, trigamma};

use std::fmt;
use std::str::FromStr;

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::encoder::softmax;
use crate::error::{Error, Result};

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// A discrete predictive distribution over ID classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Categorical(Vec<f64>);

impl Categorical {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::contract("categorical over zero classes"));
        }
        if probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::contract(format!("invalid probabilities {probs:?}")));
        }
        let s: f64 = probs.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::contract(format!("probabilities sum to {s}")));
        }
        Ok(Self(probs))
    }

    pub fn uniform(k: usize) -> Self {
        Self(vec![1.0 / k as f64; k])
    }

    pub fn from_logits(logits: &Array1<f64>) -> Self {
        Self(softmax(logits).to_vec())
    }

    /// Arithmetic mean of `members`, all over the same classes.
    pub fn mean(members: &[Categorical]) -> Result<Self> {
        let Some(first) = members.first() else {
            return Err(Error::contract("mean of zero distributions"));
        };
        let k = first.len();
        let mut acc = vec![0.0; k];
        for m in members {
            if m.len() != k {
                return Err(Error::contract("members disagree on class count"));
            }
            acc.iter_mut().zip(&m.0).for_each(|(a, p)| *a += p);
        }
        let n = members.len() as f64;
        Ok(Self(acc.into_iter().map(|a| a / n).collect()))
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn max_prob(&self) -> f64 {
        self.0[self.argmax()]
    }
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy(c: &Categorical) -> f64 {
    -c.probs()
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Single,
    Mc,
    De,
    Nuq,
    Natpn,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Single, Method::Mc, Method::De, Method::Nuq, Method::Natpn];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Single => "single",
            Method::Mc => "mc",
            Method::De => "de",
            Method::Nuq => "nuq",
            Method::Natpn => "natpn",
        }
    }

    /// Uncertainty types the method reports.
    pub fn uncertainty_types(self) -> &'static [UncType] {
        match self {
            Method::Single => &[UncType::Total],
            Method::Mc | Method::De => &[UncType::Data, UncType::Know, UncType::Total],
            Method::Nuq | Method::Natpn => &[UncType::Data, UncType::Know],
        }
    }

    /// Whether the method scores with the plain cross-entropy encoder.
    pub fn uses_single_encoder(self) -> bool {
        matches!(self, Method::Single | Method::Mc | Method::Nuq)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::contract(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UncType {
    Data,
    Know,
    Total,
}

impl UncType {
    pub fn as_str(self) -> &'static str {
        match self {
            UncType::Data => "data",
            UncType::Know => "know",
            UncType::Total => "total",
        }
    }
}

impl fmt::Display for UncType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Per-sample uncertainty triple; absent entries are not defined by the method.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyRecord {
    pub method: Method,
    pub u_data: Option<f64>,
    pub u_know: Option<f64>,
    pub u_total: Option<f64>,
}

impl UncertaintyRecord {
    pub fn get(&self, t: UncType) -> Option<f64> {
        match t {
            UncType::Data => self.u_data,
            UncType::Know => self.u_know,
            UncType::Total => self.u_total,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn entropy_closed_forms() {
        assert_abs_diff_eq!(entropy(&Categorical::uniform(3)), 3f64.ln(), epsilon = 1e-15);
        assert_eq!(entropy(&Categorical::new(vec![0.0, 1.0, 0.0]).unwrap()), 0.0);
        let half = Categorical::new(vec![0.5, 0.5, 0.0]).unwrap();
        assert_abs_diff_eq!(entropy(&half), 0.693147, epsilon = 1e-6);
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }

    #[test]
    fn categorical_validation() {
        assert!(Categorical::new(vec![0.5, 0.6]).is_err());
        assert!(Categorical::new(vec![-0.1, 1.1]).is_err());
        assert!(Categorical::new(vec![]).is_err());
        assert!(Categorical::new(vec![f64::NAN, 1.0]).is_err());
    }

    #[test]
    fn method_tags_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{m}\""));
        }
        assert!("foo".parse::<Method>().is_err());
    }
}
