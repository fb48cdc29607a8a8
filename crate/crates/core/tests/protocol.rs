use graph_ood::density::FlowConfig;
use graph_ood::encoder::EncoderConfig;
use graph_ood::graph::{Graph, GraphDataset};
use graph_ood::par::Exec;
use graph_ood::protocol::{
    ood_confusion_from_results, ood_confusion_matrix, run_loco_experiment, run_loco_methods, run_split,
    MethodSettings, ProtocolConfig,
};
use graph_ood::rng::seeded;
use graph_ood::uq::{Method, NatPnConfig, UncType};
use graph_ood::Error;
use ndarray::Array2;
use rand::Rng;

/// Single-node graphs whose one feature row is `centres[label]` plus small noise.
fn blobs(centres: &[[f64; 2]], per_class: usize, seed: u64) -> GraphDataset {
    let mut rng = seeded(seed);
    let mut graphs = Vec::new();
    for (label, c) in centres.iter().enumerate() {
        for _ in 0..per_class {
            let x = Array2::from_shape_fn((1, 2), |(_, j)| c[j] + rng.random_range(-0.05..0.05));
            graphs.push(Graph::new(x, Vec::<(usize, usize)>::new(), label, 0).unwrap());
        }
    }
    GraphDataset::new("blobs", graphs, centres.len(), None).unwrap()
}

fn settings() -> MethodSettings {
    MethodSettings {
        encoder: EncoderConfig {
            num_layers: 2,
            hidden_dim: 8,
            dropout_p: 0.2,
            learning_rate: 1e-2,
            max_epochs: 60,
            patience: 60,
            ..EncoderConfig::default()
        },
        ensemble_size: 2,
        mc_samples: 4,
        natpn: NatPnConfig {
            warmup_epochs: 2,
            flow: FlowConfig {
                num_layers: 2,
                latent_dim: 4,
                ..FlowConfig::default()
            },
            ..NatPnConfig::default()
        },
        ..MethodSettings::default()
    }
}

fn protocol(n_splits: usize) -> ProtocolConfig {
    ProtocolConfig {
        n_splits,
        val_fraction: 0.25,
        base_seed: 3,
    }
}

#[test]
fn midpoint_class_is_perfectly_detected_by_the_single_model() {
    let d = blobs(&[[1.0, 0.0], [0.5, 0.5], [0.0, 1.0]], 20, 0);
    let r = run_loco_experiment(&d, Method::Single, 1, &protocol(3), &settings()).unwrap();
    assert_eq!(r.auroc[&UncType::Total], vec![1.0; 3]);
    assert!(r.val_acc.iter().all(|&a| a == 1.0));
}

#[test]
fn every_method_reports_one_auroc_per_split_and_type() {
    let d = blobs(&[[2.0, 0.0], [0.0, 0.0], [0.0, 2.0]], 12, 1);
    let run = run_loco_methods(&d, &Method::ALL, 0, &protocol(2), &settings(), Exec::default());
    for m in Method::ALL {
        let r = run.result(m).unwrap();
        assert_eq!(r.n_splits(), 2);
        assert_eq!(r.seeds, vec![3, 4]);
        for t in m.uncertainty_types() {
            let v = &r.auroc[t];
            assert_eq!(v.len(), 2, "{m} {t}");
            assert!(v.iter().all(|a| (0.0..=1.0).contains(a)));
            assert!(r.auroc_std[t] >= 0.0);
        }
        assert_eq!(r.auroc.len(), m.uncertainty_types().len());
    }
}

#[test]
fn runs_are_reproducible_in_both_execution_modes() {
    let d = blobs(&[[2.0, 0.0], [0.0, 0.0], [0.0, 2.0]], 10, 2);
    let methods = [Method::Single, Method::Mc, Method::De, Method::Nuq];
    let collect = |exec| {
        let run = run_loco_methods(&d, &methods, 2, &protocol(2), &settings(), exec);
        methods.map(|m| run.result(m).unwrap())
    };
    let a = collect(Exec::Sequential);
    let b = collect(Exec::Sequential);
    let c = collect(Exec::Parallel);
    assert_eq!(a, b);
    assert_eq!(a, c);
}

#[test]
fn nuq_uses_the_same_encoder_as_the_single_model() {
    let d = blobs(&[[2.0, 0.0], [0.0, 0.0], [0.0, 2.0]], 10, 3);
    let p = protocol(1);
    let s = settings();
    let alone = run_split(&d, &[Method::Nuq], 1, 0, &p, &s, Exec::Sequential).unwrap();
    let shared = run_split(&d, &[Method::Single, Method::Nuq], 1, 0, &p, &s, Exec::Sequential).unwrap();
    assert_eq!(alone.outcomes[&Method::Nuq], shared.outcomes[&Method::Nuq]);
    assert_eq!(alone.single_encoder, shared.single_encoder);
    let scores = &shared.outcomes[&Method::Single].scores;
    assert_eq!(scores.len(), shared.split.val_ids.len() + shared.split.ood_ids.len());
}

#[test]
fn confusion_rows_are_distributions_pointing_at_the_attractor() {
    // Collinear classes: whichever end is held out lies beyond the middle class.
    let d = blobs(&[[0.0, 1.0], [1.0, 1.0], [2.0, 1.0]], 12, 4);
    let m = ood_confusion_matrix(&d, Method::Single, &protocol(2), &settings(), Exec::default()).unwrap();
    for i in 0..3 {
        assert_eq!(m.values[[i, i]], 0.0);
        assert!((m.values.row(i).sum() - 1.0).abs() < 1e-9);
    }
    assert!(m.values[[0, 1]] > 0.9, "{:?}", m.values);
    assert!(m.values[[2, 1]] > 0.9, "{:?}", m.values);
}

#[test]
fn a_failing_split_is_named_and_other_splits_survive() {
    let d = blobs(&[[2.0, 0.0], [0.0, 0.0], [0.0, 2.0]], 6, 5);
    let mut s = settings();
    s.encoder.learning_rate = f64::MAX;
    let run = run_loco_methods(&d, &[Method::Single], 0, &protocol(2), &s, Exec::Sequential);
    match run.result(Method::Single) {
        Err(Error::Experiment { split, .. }) => assert_eq!(split, 0),
        other => panic!("expected an experiment error, got {other:?}"),
    }
    assert_eq!(run.splits.len(), 2);
}

#[test]
fn confusion_from_partial_results_leaves_missing_rows_empty() {
    let d = blobs(&[[2.0, 0.0], [0.0, 0.0], [0.0, 2.0]], 8, 6);
    let r = run_loco_experiment(&d, Method::Single, 2, &protocol(1), &settings()).unwrap();
    let m = ood_confusion_from_results(&d, &[r]).unwrap();
    assert_eq!(m.values.row(0).sum(), 0.0);
    assert!((m.values.row(2).sum() - 1.0).abs() < 1e-9);
}

#[test]
fn too_few_classes_is_a_protocol_error() {
    let d = blobs(&[[1.0, 0.0], [0.0, 1.0]], 5, 7);
    assert!(matches!(
        run_loco_experiment(&d, Method::Single, 0, &protocol(1), &settings()),
        Err(Error::Experiment { .. }) | Err(Error::Protocol(_))
    ));
}
