//! Backpropagation against central finite differences.

use graph_ood::encoder::{batch_loss_and_grad, EncoderConfig, EncoderParams, PreparedGraph};
use graph_ood::graph::Graph;
use graph_ood::rng::seeded;
use ndarray::Array2;
use rand::Rng;

const STEP: f64 = 1e-5;
const TOLERANCE: f64 = 1e-4;
/// Denominator floor so gradients that are zero up to rounding are compared absolutely.
const FLOOR: f64 = 1e-4;

fn random_instance(seed: u64) -> (EncoderParams, Vec<PreparedGraph>) {
    let mut rng = seeded(seed);
    let features = rng.random_range(1..=4);
    let classes = rng.random_range(2..=4);
    let cfg = EncoderConfig {
        num_layers: rng.random_range(1..=3),
        hidden_dim: rng.random_range(2..=6),
        output_dim: classes,
        seed,
        ..EncoderConfig::default()
    };
    let params = EncoderParams::from_seed(&cfg, features).unwrap();
    let graphs = (0..rng.random_range(1..=3))
        .map(|i| {
            let n = rng.random_range(1..=7);
            let mut edges = Vec::new();
            for a in 0..n {
                for b in (a + 1)..n {
                    if rng.random_bool(0.4) {
                        edges.push((a, b));
                    }
                }
            }
            let x = Array2::from_shape_fn((n, features), |_| rng.random_range(-1.0..1.0));
            let g = Graph::new(x, edges, rng.random_range(0..classes), i).unwrap();
            PreparedGraph::new(&g)
        })
        .collect();
    (params, graphs)
}

/// Largest relative error over all parameters of one instance.
pub fn max_relative_error(seed: u64) -> f64 {
    let (mut p, graphs) = random_instance(seed);
    let (_, analytic) = batch_loss_and_grad(&p, &graphs, None).unwrap();
    let analytic: Vec<Vec<f64>> = analytic.slices().iter().map(|s| s.to_vec()).collect();
    let mut worst: f64 = 0.0;
    for (block, grads) in analytic.iter().enumerate() {
        for (i, &a) in grads.iter().enumerate() {
            let orig = p.weights.slices()[block][i];
            p.weights.slices_mut()[block][i] = orig + STEP;
            let plus = batch_loss_and_grad(&p, &graphs, None).unwrap().0;
            p.weights.slices_mut()[block][i] = orig - STEP;
            let minus = batch_loss_and_grad(&p, &graphs, None).unwrap().0;
            p.weights.slices_mut()[block][i] = orig;
            let numeric = (plus - minus) / (2.0 * STEP);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
            worst = worst.max(rel);
        }
    }
    worst
}

#[test]
fn twenty_random_instances_match_finite_differences() {
    for seed in 0..20 {
        let err = max_relative_error(seed);
        assert!(err < TOLERANCE, "instance {seed}: relative error {err:e}");
    }
}

#[test]
fn gradient_of_a_batch_is_the_mean_of_single_graph_gradients() {
    let (p, graphs) = random_instance(99);
    let (loss, grad) = batch_loss_and_grad(&p, &graphs, None).unwrap();
    let mut loss_sum = 0.0;
    let mut sum = p.weights.zeros_like();
    for g in &graphs {
        let (l, gr) = batch_loss_and_grad(&p, [g], None).unwrap();
        loss_sum += l;
        sum.add_assign(&gr);
    }
    sum.scale(1.0 / graphs.len() as f64);
    assert!((loss - loss_sum / graphs.len() as f64).abs() < 1e-12);
    for (a, b) in grad.slices().iter().zip(sum.slices()) {
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
