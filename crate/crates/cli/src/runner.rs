//! Executes a suite: every (dataset, method, held-out class) cell, with a
//! per-cell cache on disk.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use graph_ood::graph::{generate_triangles_dataset, parse_tu_dataset, GraphDataset, TrianglesConfig};
use graph_ood::par::Exec;
use graph_ood::protocol::{
    class_distance_matrix, export_embeddings, mean_distance_matrix, ood_confusion_from_results, run_loco_methods,
    train_full_classifier, ClassDistanceMatrix, ExperimentResult, LocoRun, MethodSettings, ProtocolConfig, ScoreRow,
};
use graph_ood::uq::Method;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{resolve, CachePolicy, ConfigError, DatasetSource, DatasetSpec, FieldError, SuiteConfig};

pub const MANIFEST: &str = "manifest.json";
pub const SUMMARY: &str = "summary.csv";
const KEY_FILE: &str = "key.txt";
const RESULT_FILE: &str = "result.json";

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot build worker pool: {0}")]
    Pool(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), RunError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, contents).map_err(io_err(path))
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Recompute cached cells.
    pub force: bool,
    /// Overrides the configured worker count.
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "status", content = "error")]
pub enum CellStatus {
    Ran,
    Cached,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub dataset: String,
    pub method: Method,
    pub ood_class: usize,
    pub key: String,
    #[serde(flatten)]
    pub status: CellStatus,
    /// Split seeds, `base_seed + s`.
    pub seeds: Vec<u64>,
}

impl CellRecord {
    pub fn dir(&self, root: &Path) -> PathBuf {
        cell_dir(root, &self.dataset, self.method, self.ood_class)
    }
}

pub fn cell_dir(root: &Path, dataset: &str, method: Method, ood_class: usize) -> PathBuf {
    root.join("cells").join(dataset).join(method.as_str()).join(format!("ood_{ood_class}"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub name: String,
    pub sha256: String,
    pub num_graphs: usize,
    pub num_classes: usize,
    pub class_names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: SuiteConfig,
    pub config_hash: String,
    pub versions: BTreeMap<String, String>,
    pub datasets: Vec<DatasetRecord>,
    pub cells: Vec<CellRecord>,
    /// Distance matrix outcome per dataset.
    pub distance: Vec<CellRecord>,
}

#[derive(Debug)]
pub struct RunSummary {
    pub root: PathBuf,
    pub manifest: Manifest,
}

impl RunSummary {
    pub fn failures(&self) -> Vec<&CellRecord> {
        self.manifest
            .cells
            .iter()
            .chain(&self.manifest.distance)
            .filter(|c| matches!(c.status, CellStatus::Failed(_)))
            .collect()
    }

    pub fn count(&self, want: fn(&CellStatus) -> bool) -> usize {
        self.manifest.cells.iter().filter(|c| want(&c.status)).count()
    }
}

/// Loads the dataset a spec points at; relative paths resolve against `base`.
pub fn load_dataset(spec: &DatasetSpec, base: &Path) -> graph_ood::Result<GraphDataset> {
    let mut d = match &spec.source {
        DatasetSource::Triangles {
            per_class,
            node_range,
            seed,
        } => generate_triangles_dataset(&TrianglesConfig {
            per_class: *per_class,
            node_range: *node_range,
            seed: *seed,
        })?,
        DatasetSource::Tu { root, prefix } => {
            parse_tu_dataset(&resolve(base, root), prefix.as_deref().unwrap_or(&spec.name))?
        }
        DatasetSource::Json { path } => GraphDataset::load_json(&resolve(base, path))?,
    };
    d.name = spec.name.clone();
    Ok(d)
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn cell_key(dataset_sha: &str, spec: &DatasetSpec, settings: &MethodSettings, method: Method, ood_class: usize, p: &ProtocolConfig) -> String {
    let doc = serde_json::json!({
        "dataset": spec,
        "dataset_sha256": dataset_sha,
        "method": method,
        "settings": settings,
        "ood_class": ood_class,
        "protocol": p,
    });
    sha256_hex(doc.to_string().as_bytes())
}

fn cached(dir: &Path, key: &str, extra: &[&str]) -> bool {
    fs::read_to_string(dir.join(KEY_FILE)).is_ok_and(|k| k.trim() == key)
        && std::iter::once(RESULT_FILE).chain(extra.iter().copied()).all(|f| dir.join(f).is_file())
}

fn scores_csv(rows: &[ScoreRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["graph_id", "role", "true_class", "predicted_class", "p_max", "u_data", "u_know", "u_total"])
        .expect("in-memory write");
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.graph_id.to_string(),
            r.role.as_str().to_string(),
            r.true_class.to_string(),
            r.predicted_class.to_string(),
            r.p_max.to_string(),
            opt(r.record.u_data),
            opt(r.record.u_know),
            opt(r.record.u_total),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

/// Methods for one dataset and held-out class that can train together
/// because their settings agree.
struct Task<'a> {
    dataset: usize,
    ood_class: usize,
    settings: &'a MethodSettings,
    cells: Vec<(Method, String)>,
}

enum Job<'a> {
    Cells(Task<'a>),
    Distance { dataset: usize, key: String },
}

fn config_errors(errors: Vec<FieldError>) -> RunError {
    RunError::Config(ConfigError::Invalid(errors))
}

/// Runs the suite. Configuration problems (including unloadable datasets and
/// held-out classes that a dataset lacks) are reported before any training.
pub fn run_suite(cfg: &SuiteConfig, base: &Path, opts: &RunOptions) -> Result<RunSummary, RunError> {
    let errors = cfg.validate(base);
    if !errors.is_empty() {
        return Err(config_errors(errors));
    }
    let mut datasets = Vec::new();
    let mut errors = Vec::new();
    for (i, spec) in cfg.datasets.iter().enumerate() {
        match load_dataset(spec, base) {
            Ok(d) => datasets.push(d),
            Err(e) => errors.push(FieldError {
                path: format!("datasets[{i}]"),
                msg: e.to_string(),
            }),
        }
    }
    for (i, d) in datasets.iter().enumerate() {
        if d.num_classes < 3 {
            errors.push(FieldError {
                path: format!("datasets[{i}]"),
                msg: format!("{} classes; leave-one-class-out needs at least 3", d.num_classes),
            });
        }
        for (k, &c) in cfg.protocol.ood_classes.iter().flatten().enumerate() {
            if c >= d.num_classes {
                errors.push(FieldError {
                    path: format!("protocol.ood_classes[{k}]"),
                    msg: format!("class {c} does not exist in {} ({} classes)", d.name, d.num_classes),
                });
            }
        }
    }
    if !errors.is_empty() {
        return Err(config_errors(errors));
    }

    let root = cfg.output_root(base);
    fs::create_dir_all(&root).map_err(io_err(&root))?;
    let protocol = cfg.protocol.protocol();
    let reuse = cfg.cache == CachePolicy::Reuse && !opts.force;
    let digests: Vec<String> = datasets
        .iter()
        .map(|d| sha256_hex(d.to_json().expect("dataset serializes").as_bytes()))
        .collect();

    let mut cells = Vec::new();
    let mut jobs = Vec::new();
    for (di, d) in datasets.iter().enumerate() {
        let spec = &cfg.datasets[di];
        let classes: Vec<usize> = cfg.protocol.ood_classes.clone().unwrap_or_else(|| (0..d.num_classes).collect());
        for &k in &classes {
            let mut groups: Vec<Task> = Vec::new();
            for m in &cfg.methods {
                let method = m.tag().expect("validated");
                let key = cell_key(&digests[di], spec, &m.settings, method, k, &protocol);
                let dir = cell_dir(&root, &d.name, method, k);
                let extra: &[&str] = if method == Method::Single && cfg.outputs.embeddings {
                    &["embeddings_split0.csv"]
                } else {
                    &[]
                };
                let status = if reuse && cached(&dir, &key, extra) {
                    CellStatus::Cached
                } else {
                    match groups.iter_mut().find(|g| *g.settings == m.settings) {
                        Some(g) => g.cells.push((method, key.clone())),
                        None => groups.push(Task {
                            dataset: di,
                            ood_class: k,
                            settings: &m.settings,
                            cells: vec![(method, key.clone())],
                        }),
                    }
                    CellStatus::Ran
                };
                cells.push(CellRecord {
                    dataset: d.name.clone(),
                    method,
                    ood_class: k,
                    key,
                    status,
                    seeds: (0..protocol.n_splits).map(|s| protocol.split_seed(s)).collect(),
                });
            }
            jobs.extend(groups.into_iter().map(Job::Cells));
        }
    }

    let mut distance = Vec::new();
    if cfg.outputs.distance_matrix {
        for (di, d) in datasets.iter().enumerate() {
            let settings = distance_settings(cfg);
            let key = cell_key(&digests[di], &cfg.datasets[di], settings, Method::Single, usize::MAX, &protocol);
            let dir = distance_dir(&root, &d.name);
            let status = if reuse && cached(&dir, &key, &[]) {
                CellStatus::Cached
            } else {
                jobs.push(Job::Distance { dataset: di, key: key.clone() });
                CellStatus::Ran
            };
            distance.push(CellRecord {
                dataset: d.name.clone(),
                method: Method::Single,
                ood_class: d.num_classes,
                key,
                status,
                seeds: (0..protocol.n_splits).map(|s| protocol.split_seed(s)).collect(),
            });
        }
    }

    let execute = |job: &Job| -> Vec<(String, Method, usize, Result<(), String>)> {
        match job {
            Job::Cells(t) => run_task(cfg, &root, &datasets[t.dataset], t, &protocol),
            Job::Distance { dataset, key } => {
                let d = &datasets[*dataset];
                let r = run_distance(cfg, &root, d, key, &protocol).map_err(|e| e.to_string());
                vec![(d.name.clone(), Method::Single, usize::MAX, r)]
            }
        }
    };
    let outcomes = with_pool(opts.jobs.or(cfg.jobs), || Exec::default().map(&jobs, execute))?;
    for (dataset, method, k, r) in outcomes.into_iter().flatten() {
        if let Err(e) = r {
            let slot = if k == usize::MAX {
                distance.iter_mut().find(|c| c.dataset == dataset)
            } else {
                cells
                    .iter_mut()
                    .find(|c| c.dataset == dataset && c.method == method && c.ood_class == k)
            };
            slot.expect("every job maps to a cell").status = CellStatus::Failed(e);
        }
    }

    let manifest = Manifest {
        config: cfg.clone(),
        config_hash: cfg.hash(),
        versions: BTreeMap::from([
            ("graph-ood".to_string(), graph_ood_version()),
            ("graph-ood-cli".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        ]),
        datasets: datasets
            .iter()
            .zip(&digests)
            .map(|(d, sha)| DatasetRecord {
                name: d.name.clone(),
                sha256: sha.clone(),
                num_graphs: d.len(),
                num_classes: d.num_classes,
                class_names: d.class_names.clone(),
            })
            .collect(),
        cells,
        distance,
    };
    write_suite_outputs(&root, &manifest, &datasets)?;
    Ok(RunSummary { root, manifest })
}

fn graph_ood_version() -> String {
    // Both crates are versioned together in the workspace.
    env!("CARGO_PKG_VERSION").to_string()
}

fn with_pool<R: Send>(jobs: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R, RunError> {
    #[cfg(feature = "parallel")]
    {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = jobs {
            b = b.num_threads(n);
        }
        let pool = b.build().map_err(|e| RunError::Pool(e.to_string()))?;
        Ok(pool.install(f))
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = jobs;
        Ok(f())
    }
}

/// Encoder settings of the first method that uses the single encoder.
fn distance_settings(cfg: &SuiteConfig) -> &MethodSettings {
    &cfg.methods
        .iter()
        .find(|m| m.tag().is_some_and(Method::uses_single_encoder))
        .unwrap_or(&cfg.methods[0])
        .settings
}

fn distance_dir(root: &Path, dataset: &str) -> PathBuf {
    root.join("cells").join(dataset).join("distance")
}

fn run_task(
    cfg: &SuiteConfig,
    root: &Path,
    d: &GraphDataset,
    t: &Task,
    protocol: &ProtocolConfig,
) -> Vec<(String, Method, usize, Result<(), String>)> {
    let methods: Vec<Method> = t.cells.iter().map(|(m, _)| *m).collect();
    let run = run_loco_methods(d, &methods, t.ood_class, protocol, t.settings, Exec::default());
    t.cells
        .iter()
        .map(|(m, key)| {
            let r = store_cell(cfg, root, d, &run, *m, key).map_err(|e| e.to_string());
            (d.name.clone(), *m, t.ood_class, r)
        })
        .collect()
}

fn store_cell(cfg: &SuiteConfig, root: &Path, d: &GraphDataset, run: &LocoRun, m: Method, key: &str) -> Result<(), Box<dyn std::error::Error>> {
    let result = run.result(m)?;
    let dir = cell_dir(root, &d.name, m, run.ood_class);
    if dir.exists() {
        fs::remove_dir_all(&dir)?;
    }
    if cfg.outputs.scores {
        for s in run.completed(m) {
            write(&dir.join(format!("scores_split{}.csv", s.split)), scores_csv(&s.scores))?;
        }
    }
    if m == Method::Single && cfg.outputs.embeddings {
        let first = run.splits[0].as_ref().map_err(|e| e.to_string())?;
        let p = first.single_encoder.as_ref().ok_or("single encoder missing")?;
        let export = export_embeddings(p, &first.split, d, Exec::default())?;
        write(&dir.join("embeddings_split0.csv"), export.to_csv())?;
    }
    write(&dir.join(RESULT_FILE), serde_json::to_string_pretty(&result)?)?;
    // The key goes last so an interrupted cell is never taken as cached.
    write(&dir.join(KEY_FILE), key)?;
    Ok(())
}

fn run_distance(cfg: &SuiteConfig, root: &Path, d: &GraphDataset, key: &str, protocol: &ProtocolConfig) -> Result<(), Box<dyn std::error::Error>> {
    let settings = distance_settings(cfg);
    let matrices = Exec::default()
        .map_range(protocol.n_splits, |s| -> graph_ood::Result<ClassDistanceMatrix> {
            let p = train_full_classifier(d, &settings.encoder, protocol.val_fraction, protocol.split_seed(s))?;
            class_distance_matrix(&p, d, Exec::default())
        })
        .into_iter()
        .collect::<graph_ood::Result<Vec<_>>>()?;
    let mean = mean_distance_matrix(&matrices)?;
    let dir = distance_dir(root, &d.name);
    write(&dir.join(RESULT_FILE), serde_json::to_string_pretty(&mean)?)?;
    write(&dir.join(KEY_FILE), key)?;
    Ok(())
}

pub fn load_result(dir: &Path) -> Option<ExperimentResult> {
    let text = fs::read_to_string(dir.join(RESULT_FILE)).ok()?;
    serde_json::from_str(&text).ok()
}

/// One CSV line per (dataset, method, held-out class, uncertainty type).
pub fn summary_csv(results: &[ExperimentResult]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["dataset", "method", "ood_class", "unc_type", "auroc_mean", "auroc_std"])
        .expect("in-memory write");
    for r in results {
        for (t, mean) in &r.auroc_mean {
            w.write_record([
                r.dataset.clone(),
                r.method.to_string(),
                r.ood_class.to_string(),
                t.to_string(),
                mean.to_string(),
                r.auroc_std[t].to_string(),
            ])
            .expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

fn write_suite_outputs(root: &Path, manifest: &Manifest, datasets: &[GraphDataset]) -> Result<(), RunError> {
    let mut all = Vec::new();
    for d in datasets {
        for m in &manifest.config.methods {
            let method = m.tag().expect("validated");
            let results: Vec<ExperimentResult> = manifest
                .cells
                .iter()
                .filter(|c| c.dataset == d.name && c.method == method && !matches!(c.status, CellStatus::Failed(_)))
                .filter_map(|c| load_result(&c.dir(root)))
                .collect();
            if results.is_empty() {
                continue;
            }
            let stem = format!("{}__{}", d.name, method);
            write(
                &root.join("results").join(format!("{stem}.json")),
                serde_json::to_string_pretty(&results).expect("results serialize"),
            )?;
            let confusion = ood_confusion_from_results(d, &results).expect("results match their dataset");
            write(&root.join("matrices").join(format!("{stem}__confusion.csv")), confusion.to_csv())?;
            all.extend(results);
        }
        if let Some(c) = manifest.distance.iter().find(|c| c.dataset == d.name) {
            let file = distance_dir(root, &d.name).join(RESULT_FILE);
            if !matches!(c.status, CellStatus::Failed(_)) {
                if let Some(m) = fs::read_to_string(&file)
                    .ok()
                    .and_then(|t| serde_json::from_str::<ClassDistanceMatrix>(&t).ok())
                {
                    write(&root.join("matrices").join(format!("{}__distance.csv", d.name)), m.to_csv())?;
                }
            }
        }
    }
    write(&root.join(SUMMARY), summary_csv(&all))?;
    write(
        &root.join(MANIFEST),
        serde_json::to_string_pretty(manifest).expect("manifest serializes"),
    )
}
