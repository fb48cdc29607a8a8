//! Suite configuration: a JSON document describing datasets, methods and the
//! evaluation protocol.

use std::fmt;
use std::path::{Path, PathBuf};

use graph_ood::graph::TrianglesConfig;
use graph_ood::protocol::{MethodSettings, ProtocolConfig};
use graph_ood::uq::Method;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Environment variable that replaces `output_dir`.
pub const OUTPUT_ENV: &str = "GRAPH_OOD_OUTPUT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    pub datasets: Vec<DatasetSpec>,
    pub methods: Vec<MethodSpec>,
    #[serde(default)]
    pub protocol: ProtocolSpec,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub cache: CachePolicy,
    /// Worker threads; `None` uses every available processor.
    #[serde(default)]
    pub jobs: Option<usize>,
    #[serde(default)]
    pub outputs: OutputOptions,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub name: String,
    pub source: DatasetSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetSource {
    /// Generated on the fly.
    Triangles {
        #[serde(default = "default_per_class")]
        per_class: usize,
        #[serde(default = "default_node_range")]
        node_range: (usize, usize),
        #[serde(default)]
        seed: u64,
    },
    /// TU-format files `root/NAME_*.txt`; `prefix` defaults to the dataset name.
    Tu {
        root: PathBuf,
        #[serde(default)]
        prefix: Option<String>,
    },
    /// A dataset JSON document.
    Json { path: PathBuf },
}

fn default_per_class() -> usize {
    TrianglesConfig::default().per_class
}

fn default_node_range() -> (usize, usize) {
    TrianglesConfig::default().node_range
}

/// A method tag plus its hyperparameters. The tag stays a string until
/// validation so unknown tags are reported with their position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    pub method: String,
    #[serde(default)]
    pub settings: MethodSettings,
}

impl MethodSpec {
    pub fn tag(&self) -> Option<Method> {
        self.method.parse().ok()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSpec {
    #[serde(default = "default_splits")]
    pub n_splits: usize,
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
    #[serde(default)]
    pub base_seed: u64,
    /// Held-out classes to run; all classes when absent.
    #[serde(default)]
    pub ood_classes: Option<Vec<usize>>,
}

fn default_splits() -> usize {
    ProtocolConfig::default().n_splits
}

fn default_val_fraction() -> f64 {
    ProtocolConfig::default().val_fraction
}

impl Default for ProtocolSpec {
    fn default() -> Self {
        Self {
            n_splits: default_splits(),
            val_fraction: default_val_fraction(),
            base_seed: 0,
            ood_classes: None,
        }
    }
}

impl ProtocolSpec {
    pub fn protocol(&self) -> ProtocolConfig {
        ProtocolConfig {
            n_splits: self.n_splits,
            val_fraction: self.val_fraction,
            base_seed: self.base_seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CachePolicy {
    /// Skip cells whose stored key matches.
    #[default]
    Reuse,
    /// Always recompute.
    Off,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputOptions {
    /// Per-graph score CSVs for every split.
    #[serde(default = "yes")]
    pub scores: bool,
    /// Embedding table of split 0 for the `single` method.
    #[serde(default = "yes")]
    pub embeddings: bool,
    /// Class centroid distances from encoders trained on all classes.
    #[serde(default = "yes")]
    pub distance_matrix: bool,
}

fn yes() -> bool {
    true
}

impl Default for OutputOptions {
    fn default() -> Self {
        Self {
            scores: true,
            embeddings: true,
            distance_matrix: true,
        }
    }
}

/// A validation problem located by its field path, e.g. `methods[0].method`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldError {
    pub path: String,
    pub msg: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.msg)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Syntax { path: PathBuf, source: serde_json::Error },
    #[error("invalid configuration:\n{}", .0.iter().map(|e| format!("  {e}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<FieldError>),
}

impl SuiteConfig {
    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        // A run manifest embeds the config it was produced from.
        let value: serde_json::Value = serde_json::from_str(s)?;
        match value.get("config") {
            Some(inner) if value.get("cells").is_some() => serde_json::from_value(inner.clone()),
            _ => serde_json::from_value(value),
        }
    }

    /// Reads, parses and validates a config or a run manifest.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let cfg = Self::from_json(&text).map_err(|source| ConfigError::Syntax {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let errors = cfg.validate(base);
        if errors.is_empty() {
            Ok(cfg)
        } else {
            Err(ConfigError::Invalid(errors))
        }
    }

    /// Pretty JSON with every default filled in.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        let compact = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(compact.as_bytes()))
    }

    /// Every problem found, in document order. Relative dataset paths are
    /// resolved against `base`.
    pub fn validate(&self, base: &Path) -> Vec<FieldError> {
        let mut errors = Vec::new();
        let mut err = |path: String, msg: String| errors.push(FieldError { path, msg });
        if self.datasets.is_empty() {
            err("datasets".into(), "at least one dataset is required".into());
        }
        for (i, d) in self.datasets.iter().enumerate() {
            let at = format!("datasets[{i}]");
            if d.name.is_empty() || d.name.contains(['/', '\\']) || d.name.starts_with('.') {
                err(format!("{at}.name"), format!("{:?} is not a usable directory name", d.name));
            }
            if self.datasets[..i].iter().any(|o| o.name == d.name) {
                err(format!("{at}.name"), format!("duplicate dataset name {:?}", d.name));
            }
            match &d.source {
                DatasetSource::Triangles { per_class, node_range, .. } => {
                    if *per_class < 2 {
                        err(format!("{at}.source.per_class"), "must be at least 2".into());
                    }
                    if node_range.0 < 4 || node_range.0 > node_range.1 || node_range.1 > 64 {
                        err(
                            format!("{at}.source.node_range"),
                            format!("{node_range:?} must satisfy 4 <= min <= max <= 64"),
                        );
                    }
                }
                DatasetSource::Tu { root, prefix } => {
                    let name = prefix.as_deref().unwrap_or(&d.name);
                    let file = resolve(base, root).join(format!("{name}_A.txt"));
                    if !file.is_file() {
                        err(format!("{at}.source.root"), format!("{} not found", file.display()));
                    }
                }
                DatasetSource::Json { path } => {
                    if !resolve(base, path).is_file() {
                        err(format!("{at}.source.path"), format!("{} not found", path.display()));
                    }
                }
            }
        }
        if self.methods.is_empty() {
            err("methods".into(), "at least one method is required".into());
        }
        for (i, m) in self.methods.iter().enumerate() {
            let at = format!("methods[{i}]");
            match m.tag() {
                None => err(
                    format!("{at}.method"),
                    format!(
                        "unknown method {:?}; expected one of {}",
                        m.method,
                        Method::ALL.map(|m| m.as_str()).join(", ")
                    ),
                ),
                Some(tag) => {
                    if self.methods[..i].iter().any(|o| o.tag() == Some(tag)) {
                        err(format!("{at}.method"), format!("duplicate method {tag}"));
                    }
                    validate_settings(tag, &m.settings, &format!("{at}.settings"), &mut err);
                }
            }
        }
        let p = &self.protocol;
        if p.n_splits == 0 {
            err("protocol.n_splits".into(), "must be at least 1".into());
        }
        if !(p.val_fraction > 0.0 && p.val_fraction < 1.0) {
            err("protocol.val_fraction".into(), format!("{} is outside (0, 1)", p.val_fraction));
        }
        if let Some(classes) = &p.ood_classes {
            if classes.is_empty() {
                err("protocol.ood_classes".into(), "must not be empty when given".into());
            }
            for (k, c) in classes.iter().enumerate() {
                if classes[..k].contains(c) {
                    err(format!("protocol.ood_classes[{k}]"), format!("duplicate class {c}"));
                }
            }
        }
        if self.jobs == Some(0) {
            err("jobs".into(), "must be at least 1".into());
        }
        errors
    }

    /// Output root, honouring the environment override.
    pub fn output_root(&self, base: &Path) -> PathBuf {
        match std::env::var_os(OUTPUT_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => resolve(base, &self.output_dir),
        }
    }
}

fn validate_settings(tag: Method, s: &MethodSettings, at: &str, err: &mut impl FnMut(String, String)) {
    if let Err(e) = s.encoder.validate() {
        err(format!("{at}.encoder"), e.to_string());
    }
    match tag {
        Method::De if s.ensemble_size < 2 => err(format!("{at}.ensemble_size"), "must be at least 2".into()),
        Method::Mc if s.mc_samples < 2 => err(format!("{at}.mc_samples"), "must be at least 2".into()),
        Method::Mc if s.encoder.dropout_p <= 0.0 => {
            err(format!("{at}.encoder.dropout_p"), "MC dropout needs a positive dropout rate".into())
        }
        Method::Natpn => {
            let n = &s.natpn;
            if !(n.prior_beta > 0.0 && n.prior_beta.is_finite()) {
                err(format!("{at}.natpn.prior_beta"), "must be positive".into());
            }
            if n.budget.is_some_and(|b| !(b > 0.0 && b.is_finite())) {
                err(format!("{at}.natpn.budget"), "must be positive".into());
            }
            if !(n.lambda >= 0.0 && n.lambda.is_finite()) {
                err(format!("{at}.natpn.lambda"), "must be non-negative".into());
            }
            if n.flow.latent_dim == 0 {
                err(format!("{at}.natpn.flow.latent_dim"), "must be at least 1".into());
            }
        }
        _ => {}
    }
    if let graph_ood::density::Bandwidth::Explicit(h) = s.nuq_bandwidth {
        if !(h > 0.0 && h.is_finite()) {
            err(format!("{at}.nuq_bandwidth"), "explicit bandwidth must be positive".into());
        }
    }
}

pub fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}
