use dgclr::data::whiten_vectors;
use dgclr::evalx::{factor_scores, flag_factor, mse};
use dgclr::model::Variant;
use dgclr::synth::random_graph;
use dgclr::{Checkpoint, DgclrModel, Tape, TrainConfig};
use proptest::prelude::*;
use std::collections::BTreeMap;

fn model_for(
    graph: &dgclr::RatingGraph,
    d: usize,
    k: usize,
    l: usize,
    variant: Variant,
    seed: u64,
) -> DgclrModel {
    let cfg = TrainConfig {
        d,
        factors: k,
        layers: l,
        variant,
        ..TrainConfig::default()
    };
    DgclrModel::new(
        cfg.model(),
        graph.num_users(),
        graph.num_items(),
        &[1.0, 2.0, 3.0, 4.0, 5.0],
        seed,
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn softmax_rows_are_distributions(
        vals in prop::collection::vec(-30.0f64..30.0, 12),
        tau in 0.05f64..5.0,
    ) {
        let mut t = Tape::new();
        let x = t.constant(3, 4, vals);
        let p = t.softmax_rows(x, tau);
        for row in t.value(p).chunks(4) {
            let total: f64 = row.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn row_cosine_is_symmetric_and_bounded(
        a in prop::collection::vec(-5.0f64..5.0, 8),
        b in prop::collection::vec(-5.0f64..5.0, 8),
    ) {
        let mut t = Tape::new();
        let x = t.constant(2, 4, a);
        let y = t.constant(2, 4, b);
        let xy = t.row_cosine(x, y);
        let yx = t.row_cosine(y, x);
        prop_assert_eq!(t.value(xy), t.value(yx));
        prop_assert!(t.value(xy).iter().all(|c| c.abs() <= 1.0 + 1e-12));
    }

    #[test]
    fn combined_scores_sum_to_one_per_edge(
        edges in 1usize..60,
        k in prop::sample::select(vec![1usize, 2, 4]),
        layers in 1usize..3,
        seed in 0u64..1000,
    ) {
        let d = 8;
        let graph = random_graph(edges, d, 5, seed);
        let model = model_for(&graph, d, k, layers, Variant::Full, seed);
        let scores = factor_scores(&model, &graph).unwrap();
        for layer in &scores.combined {
            for e in layer.chunks(k) {
                prop_assert!((e.iter().sum::<f64>() - 1.0).abs() < 1e-10);
                if k > 1 {
                    prop_assert!(e.iter().all(|&s| s > 0.0 && s < 1.0));
                }
            }
        }
    }

    #[test]
    fn attention_sums_to_one(seed in 0u64..1000, k in prop::sample::select(vec![1usize, 2, 4])) {
        let graph = random_graph(40, 8, 5, seed);
        let model = model_for(&graph, 8, k, 1, Variant::Full, seed);
        let users: Vec<usize> = (0..graph.num_users()).collect();
        let items: Vec<usize> = users.iter().map(|u| (u * 7 + 1) % graph.num_items()).collect();
        for p in model.predict(&graph, &users, &items).unwrap() {
            prop_assert_eq!(p.alpha.len(), k);
            prop_assert!((p.alpha.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            // the prediction is the attention-weighted factor ratings
            let mix: f64 = p.alpha.iter().zip(&p.factor_ratings).map(|(a, r)| a * r).sum();
            prop_assert!((mix - p.rating).abs() < 1e-9 * (1.0 + p.rating.abs()));
        }
    }

    #[test]
    fn flagged_factor_has_majority_weight(raw in prop::collection::vec(0.0f64..1.0, 1..6)) {
        let total: f64 = raw.iter().sum::<f64>() + 1e-9;
        let alpha: Vec<f64> = raw.iter().map(|v| v / total).collect();
        match flag_factor(&alpha) {
            Some(k) => {
                prop_assert!(alpha[k] > 0.5);
            }
            None => prop_assert!(alpha.iter().all(|&a| a <= 0.5)),
        }
    }

    #[test]
    fn clipped_mse_never_exceeds_raw_inside_range(
        preds in prop::collection::vec(-3.0f64..9.0, 1..30),
        seed in 0u64..100,
    ) {
        let targets: Vec<f64> = (0..preds.len()).map(|i| (1 + (i as u64 * 31 + seed) % 5) as f64).collect();
        let raw = mse(preds.iter().copied(), &targets, None);
        let clipped = mse(preds.iter().copied(), &targets, Some((1.0, 5.0)));
        prop_assert!(clipped <= raw + 1e-12);
    }

    #[test]
    fn whitened_vectors_are_zero_mean(
        vals in prop::collection::vec(-2.0f64..2.0, 60..120),
    ) {
        let d = 3;
        let n = vals.len() / d;
        let raw = &vals[..n * d];
        if let Ok(w) = whiten_vectors(raw, d, 2) {
            for c in 0..2 {
                let m: f64 = (0..n).map(|r| w[r * 2 + c]).sum::<f64>() / n as f64;
                prop_assert!(m.abs() < 1e-9);
            }
        }
    }

    #[test]
    fn checkpoint_bytes_round_trip(seed in 0u64..1000, variant in prop::sample::select(Variant::ALL.to_vec())) {
        let graph = random_graph(30, 8, 5, seed);
        let model = model_for(&graph, 8, 2, 2, variant, seed);
        let cfg = TrainConfig { d: 8, factors: 2, layers: 2, variant, seed, ..TrainConfig::default() };
        let mut meta = BTreeMap::new();
        meta.insert("data".to_string(), format!("/tmp/x{seed}.tsv"));
        let ck = Checkpoint { config: cfg, model, epoch: seed as usize, best_val: Some(0.5), meta };
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
        prop_assert_eq!(back.meta, ck.meta);
    }
}
