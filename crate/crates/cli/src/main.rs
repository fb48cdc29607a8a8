use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use graph_ood::graph::{generate_triangles_dataset, write_tu_dataset, TrianglesConfig};
use graph_ood_cli::config::ConfigError;
use graph_ood_cli::runner::CellStatus;
use graph_ood_cli::{render_report, run_suite, RunError, RunOptions, SuiteConfig};

const EXIT_FAILURES: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(name = "graph-ood", version, about = "Leave-one-class-out OOD benchmarks for graph classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every cell of a suite config (or re-run a manifest).
    Run {
        config: PathBuf,
        /// Recompute cells even when cached results match.
        #[arg(long)]
        force: bool,
        /// Worker threads (default: all processors).
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        jobs: Option<u64>,
    },
    /// Render AUROC tables and heatmaps from a result directory.
    Report { results_dir: PathBuf },
    /// Generate a TRIANGLES dataset.
    GenTriangles {
        out_dir: PathBuf,
        #[arg(long, default_value_t = 300)]
        per_class: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        min_nodes: usize,
        #[arg(long, default_value_t = 30)]
        max_nodes: usize,
        #[arg(long, value_enum, default_value_t = Format::Tu)]
        format: Format,
    },
    /// Check a config without running anything.
    Validate { config: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Tu,
    Json,
}

fn base_dir(config: &Path) -> PathBuf {
    config.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn config_failure(e: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(EXIT_CONFIG)
}

fn run(config: &Path, force: bool, jobs: Option<u64>) -> ExitCode {
    let cfg = match SuiteConfig::load(config) {
        Ok(c) => c,
        Err(e) => return config_failure(e),
    };
    let opts = RunOptions {
        force,
        jobs: jobs.map(|j| j as usize),
    };
    match run_suite(&cfg, &base_dir(config), &opts) {
        Ok(summary) => {
            for c in summary.manifest.cells.iter().chain(&summary.manifest.distance) {
                let what = if summary.manifest.distance.contains(c) {
                    format!("{}/distance", c.dataset)
                } else {
                    format!("{}/{}/ood_{}", c.dataset, c.method, c.ood_class)
                };
                match &c.status {
                    CellStatus::Ran => println!("ran     {what}"),
                    CellStatus::Cached => println!("cached  {what}"),
                    CellStatus::Failed(e) => println!("FAILED  {what}: {e}"),
                }
            }
            println!("results in {}", summary.root.display());
            if summary.failures().is_empty() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_FAILURES)
            }
        }
        Err(RunError::Config(e)) => config_failure(e),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_FAILURES)
        }
    }
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run { config, force, jobs } => run(&config, force, jobs),
        Command::Validate { config } => match SuiteConfig::load(&config) {
            Ok(cfg) => {
                println!("{}: ok ({} datasets, {} methods)", config.display(), cfg.datasets.len(), cfg.methods.len());
                ExitCode::SUCCESS
            }
            Err(e @ ConfigError::Invalid(_)) | Err(e @ ConfigError::Syntax { .. }) | Err(e @ ConfigError::Io { .. }) => {
                config_failure(e)
            }
        },
        Command::Report { results_dir } => match render_report(&results_dir) {
            Ok(s) => {
                println!("{} AUROC rows, {} files in {}", s.rows, s.files.len(), results_dir.join("report").display());
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(EXIT_FAILURES)
            }
        },
        Command::GenTriangles {
            out_dir,
            per_class,
            seed,
            min_nodes,
            max_nodes,
            format,
        } => {
            let cfg = TrianglesConfig {
                per_class,
                node_range: (min_nodes, max_nodes),
                seed,
            };
            let written = generate_triangles_dataset(&cfg).and_then(|d| {
                match format {
                    Format::Tu => write_tu_dataset(&d, &out_dir)?,
                    Format::Json => {
                        std::fs::create_dir_all(&out_dir)?;
                        d.save_json(&out_dir.join("TRIANGLES.json"))?
                    }
                }
                Ok(d.len())
            });
            match written {
                Ok(n) => {
                    println!("wrote {n} graphs to {}", out_dir.display());
                    ExitCode::SUCCESS
                }
                Err(e @ graph_ood::Error::Generation { .. }) | Err(e @ graph_ood::Error::InvalidDataset(_)) => {
                    config_failure(e)
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(EXIT_FAILURES)
                }
            }
        }
    }
}
