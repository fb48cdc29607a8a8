use graph_ood::density::Bandwidth;
use graph_ood::uq::{
    decompose_uncertainty, entropy, natpn_uncertainty, nuq_fit, nuq_scores, Categorical, DirichletPrediction,
};
use ndarray::{Array1, Array2};
use proptest::prelude::*;

fn arb_categorical(k: usize) -> impl Strategy<Value = Categorical> {
    proptest::collection::vec(1e-6f64..1.0, k).prop_map(|w| {
        let s: f64 = w.iter().sum();
        Categorical::new(w.iter().map(|x| x / s).collect()).unwrap()
    })
}

fn arb_ensemble() -> impl Strategy<Value = Vec<Categorical>> {
    (2usize..=10, 1usize..=10).prop_flat_map(|(k, n)| proptest::collection::vec(arb_categorical(k), n))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn decomposition_adds_up(members in arb_ensemble()) {
        let d = decompose_uncertainty(&members).unwrap();
        prop_assert!((d.u_total - d.u_data - d.u_know).abs() < 1e-9);
        prop_assert!(d.u_know >= -1e-9);
        prop_assert!((d.u_total - entropy(&d.mean)).abs() < 1e-12);
        prop_assert!(d.u_total <= (members[0].len() as f64).ln() + 1e-12);
    }

    #[test]
    fn identical_members_carry_no_knowledge_uncertainty(c in arb_categorical(5), n in 1usize..8) {
        let d = decompose_uncertainty(&vec![c; n]).unwrap();
        prop_assert!(d.u_know.abs() < 1e-12);
    }

    #[test]
    fn nuq_eta_is_a_distribution(
        pts in proptest::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 4..30),
        q in (-6.0f64..6.0, -6.0f64..6.0),
    ) {
        let n = pts.len();
        let x = Array2::from_shape_fn((n, 2), |(i, j)| if j == 0 { pts[i].0 } else { pts[i].1 });
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let m = nuq_fit(x, &labels, 3, Bandwidth::Explicit(0.7)).unwrap();
        let s = nuq_scores(&m, Array1::from(vec![q.0, q.1]).view()).unwrap();
        prop_assert!((s.eta.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(s.eta.iter().all(|e| (0.0..=1.0 + 1e-12).contains(e)));
        let min_eta = s.eta.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assert_eq!(s.record.u_data, Some(min_eta));
    }

    #[test]
    fn natpn_budget_does_not_move_the_argmax(
        chi in arb_categorical(6),
        log_density in -20.0f64..5.0,
        b1 in 1e-3f64..1e4,
        b2 in 1e-3f64..1e4,
    ) {
        let a = DirichletPrediction::from_evidence(&chi, log_density, 1.0, b1).unwrap();
        let b = DirichletPrediction::from_evidence(&chi, log_density, 1.0, b2).unwrap();
        prop_assert_eq!(a.mean().argmax(), chi.argmax());
        prop_assert_eq!(b.mean().argmax(), chi.argmax());
    }

    #[test]
    fn natpn_knowledge_uncertainty_falls_as_density_rises(
        chi in arb_categorical(4),
        lo in -30.0f64..5.0,
        gap in 1e-6f64..10.0,
    ) {
        let low = natpn_uncertainty(&DirichletPrediction::from_evidence(&chi, lo, 1.0, 100.0).unwrap()).1;
        let high = natpn_uncertainty(&DirichletPrediction::from_evidence(&chi, lo + gap, 1.0, 100.0).unwrap()).1;
        prop_assert!(high.u_know.unwrap() < low.u_know.unwrap());
    }
}
