use graph_ood::encoder::{classify, encode_graph, EncoderConfig, EncoderParams};
use graph_ood::graph::{count_triangles, Graph};
use graph_ood::rng::seeded;
use ndarray::Array2;
use proptest::prelude::*;
use rand::seq::SliceRandom;

fn arb_graph() -> impl Strategy<Value = (Graph, u64)> {
    (1usize..9, any::<u64>()).prop_flat_map(|(n, seed)| {
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|a| ((a + 1)..n).map(move |b| (a, b))).collect();
        let m = pairs.len();
        (
            proptest::collection::vec(any::<bool>(), m),
            proptest::collection::vec(-2.0f64..2.0, n * 3),
        )
            .prop_map(move |(keep, feats)| {
                let edges: Vec<_> = pairs.iter().zip(&keep).filter(|(_, &k)| k).map(|(&e, _)| e).collect();
                let x = Array2::from_shape_vec((n, 3), feats).unwrap();
                (Graph::new(x, edges, 0, 0).unwrap(), seed)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn node_order_does_not_change_embeddings((g, seed) in arb_graph()) {
        let cfg = EncoderConfig { hidden_dim: 8, output_dim: 3, seed, ..EncoderConfig::default() };
        let p = EncoderParams::from_seed(&cfg, 3).unwrap();
        let mut perm: Vec<usize> = (0..g.num_nodes()).collect();
        perm.shuffle(&mut seeded(seed));
        let h = g.permuted(&perm);
        let a = encode_graph(&p, &g, None).unwrap();
        let b = encode_graph(&p, &h, None).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            prop_assert!((x - y).abs() < 1e-10);
        }
        let pa = classify(&p, &g).unwrap();
        let pb = classify(&p, &h).unwrap();
        for (x, y) in pa.probs().iter().zip(pb.probs()) {
            prop_assert!((x - y).abs() < 1e-10);
        }
        prop_assert_eq!(count_triangles(&g), count_triangles(&h));
    }
}
