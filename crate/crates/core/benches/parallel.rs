//! Sequential versus rayon execution of the data-parallel hot paths.
//!
//! Run with `cargo bench -p graph-ood`. Without the `parallel` feature both
//! variants take the sequential path.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use graph_ood::density::Bandwidth;
use graph_ood::encoder::{encode_graph, EncoderConfig, EncoderParams, EpochStats};
use graph_ood::graph::{generate_triangles_dataset, GraphDataset, TrianglesConfig};
use graph_ood::par::Exec;
use graph_ood::protocol::{run_split, MethodSettings, ProtocolConfig};
use graph_ood::uq::{decompose_uncertainty, ensemble_predict, nuq_fit, nuq_scores, Ensemble, Method};
use ndarray::Array2;
use std::hint::black_box;

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn dataset(per_class: usize) -> GraphDataset {
    generate_triangles_dataset(&TrianglesConfig {
        per_class,
        ..TrianglesConfig::default()
    })
    .unwrap()
}

fn encoder(seed: u64) -> EncoderParams {
    let cfg = EncoderConfig {
        hidden_dim: 32,
        output_dim: 9,
        seed,
        ..EncoderConfig::default()
    };
    let mut p = EncoderParams::from_seed(&cfg, 1).unwrap();
    // ensemble_predict refuses members without a training history
    p.history.push(EpochStats {
        epoch: 0,
        train_loss: 0.0,
        val_loss: 0.0,
        val_acc: 0.0,
    });
    p
}

fn bench_mc_scoring(c: &mut Criterion) {
    let d = dataset(20);
    let e = Ensemble::mc_dropout(encoder(0));
    let mut group = c.benchmark_group("mc_dropout_scoring");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                exec.map(&d.graphs, |g| {
                    decompose_uncertainty(&ensemble_predict(&e, g, 10, g.graph_id as u64).unwrap()).unwrap()
                })
            })
        });
    }
    group.finish();
}

fn bench_nuq_scoring(c: &mut Criterion) {
    let d = dataset(30);
    let p = encoder(1);
    let z: Vec<_> = d.graphs.iter().map(|g| encode_graph(&p, g, None).unwrap()).collect();
    let views: Vec<_> = z.iter().map(|r| r.view()).collect();
    let support: Array2<f64> = ndarray::stack(ndarray::Axis(0), &views).unwrap();
    let labels: Vec<usize> = d.graphs.iter().map(|g| g.label.min(8)).collect();
    let m = nuq_fit(support, &labels, 9, Bandwidth::Scott).unwrap();
    let mut group = c.benchmark_group("nuq_scoring");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| exec.map(&z, |q| black_box(nuq_scores(&m, q.view()).unwrap().log_density)))
        });
    }
    group.finish();
}

fn bench_ensemble_training(c: &mut Criterion) {
    let d = dataset(12);
    let settings = MethodSettings {
        encoder: EncoderConfig {
            hidden_dim: 16,
            max_epochs: 5,
            ..EncoderConfig::default()
        },
        ensemble_size: 4,
        ..MethodSettings::default()
    };
    let protocol = ProtocolConfig {
        n_splits: 1,
        ..ProtocolConfig::default()
    };
    let mut group = c.benchmark_group("deep_ensemble_split");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| run_split(&d, &[Method::De], 0, 0, &protocol, &settings, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_mc_scoring, bench_nuq_scoring, bench_ensemble_training);
criterion_main!(benches);
