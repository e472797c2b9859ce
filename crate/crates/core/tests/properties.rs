use biam::metrics::{average_precision, f1_at_k, mean_average_precision, F1Averaging};
use biam::model::rcb_forward;
use biam::ops::{softmax_rows, topk_pool, TopKAggregate};
use biam::train::{ranking_loss, LabelSet, LossNorm};
use biam::verify::{perturbed_params, tiny_config};
use biam::Tensor;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor<f64>> {
    prop::collection::vec(-30.0f64..30.0, rows * cols)
        .prop_map(move |v| Tensor::from_vec(&[rows, cols], v).unwrap())
}

/// Scores on a quarter-step grid so `2x + 7` is exact.
fn grid_scores(n: usize, c: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((-20i32..20).prop_map(|v| v as f64 / 4.0), n * c)
}

fn label_sets(n: usize, c: usize) -> impl Strategy<Value = Vec<LabelSet>> {
    prop::collection::vec(prop::collection::vec(any::<bool>(), c), n).prop_map(move |rows| {
        rows.into_iter()
            .map(|r| LabelSet::new((0..c).filter(|&j| r[j]).collect(), c).unwrap())
            .collect()
    })
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(x in matrix(4, 7)) {
        let y = softmax_rows(&x).unwrap();
        for r in 0..4 {
            let row = y.row(r);
            prop_assert!(row.iter().all(|&p| p >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_ignores_row_shift(x in matrix(3, 5), shift in -50.0f64..50.0) {
        let y = softmax_rows(&x).unwrap();
        let z = softmax_rows(&x.map(|v| v + shift)).unwrap();
        prop_assert!(y.max_abs_diff(&z).unwrap() < 1e-12);
    }

    #[test]
    fn topk_pool_ignores_order(
        values in prop::collection::vec(-10.0f64..10.0, 9),
        perm in Just((0..9usize).collect::<Vec<_>>()).prop_shuffle(),
        k in 1usize..=9,
    ) {
        let shuffled: Vec<f64> = perm.iter().map(|&i| values[i]).collect();
        for agg in [TopKAggregate::Mean, TopKAggregate::Sum] {
            let (a, _) = topk_pool(&values, k, agg).unwrap();
            let (b, _) = topk_pool(&shuffled, k, agg).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn ranking_loss_is_shift_invariant_and_nonnegative(
        scores in prop::collection::vec(-5.0f64..5.0, 6),
        labels in label_sets(1, 6),
        shift in -100.0f64..100.0,
    ) {
        for norm in [LossNorm::MeanPairs, LossNorm::Sum] {
            let s = Tensor::vector(scores.clone());
            let (a, ga) = ranking_loss(&s, &labels[0], norm).unwrap();
            let (b, _) = ranking_loss(&s.map(|v| v + shift), &labels[0], norm).unwrap();
            prop_assert!(a >= 0.0);
            prop_assert!((a - b).abs() < 1e-9);
            prop_assert!(ga.sum().abs() < 1e-12);
        }
    }

    #[test]
    fn metrics_ignore_increasing_affine_maps(
        raw in grid_scores(8, 3),
        labels in label_sets(8, 3),
        k in 1usize..=3,
    ) {
        let s = Tensor::from_vec(&[8, 3], raw.clone()).unwrap();
        let t = s.map(|v| 2.0 * v + 7.0);
        prop_assert_eq!(
            mean_average_precision(&s, &labels).unwrap(),
            mean_average_precision(&t, &labels).unwrap()
        );
        for avg in [F1Averaging::Micro, F1Averaging::Macro] {
            prop_assert_eq!(f1_at_k(&s, &labels, k, avg).unwrap(), f1_at_k(&t, &labels, k, avg).unwrap());
        }
    }

    #[test]
    fn average_precision_is_a_fraction(
        scores in prop::collection::vec(-3.0f64..3.0, 1..12),
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let positive: Vec<bool> = scores.iter().map(|_| rand::Rng::random_bool(&mut rng, 0.4)).collect();
        match average_precision(&scores, &positive) {
            None => prop_assert!(positive.iter().all(|&p| !p)),
            Some(ap) => prop_assert!(ap > 0.0 && ap <= 1.0),
        }
    }

    #[test]
    fn micro_precision_equals_recall_at_label_count(
        raw in grid_scores(6, 5),
        picks in prop::collection::vec(Just((0..5usize).collect::<Vec<_>>()).prop_shuffle(), 6),
        k in 1usize..=5,
    ) {
        let s = Tensor::from_vec(&[6, 5], raw).unwrap();
        let labels: Vec<LabelSet> = picks
            .iter()
            .map(|p| LabelSet::new(p[..k].to_vec(), 5).unwrap())
            .collect();
        let f = f1_at_k(&s, &labels, k, F1Averaging::Micro).unwrap();
        prop_assert_eq!(f.p, f.r);
        prop_assert_eq!(f.f1, f.p);
    }

    #[test]
    fn attention_rows_are_stochastic(seed in any::<u64>()) {
        let cfg = tiny_config(seed % 1000);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = perturbed_params(&cfg, &mut rng).unwrap();
        let latent = Tensor::randn(&[cfg.h, cfg.w, cfg.d_r], 2.0, &mut rng);
        let (_, cache) = rcb_forward(&latent, &params).unwrap();
        let maps = cache.attention();
        prop_assert_eq!(maps.len(), cfg.heads);
        for a in maps {
            prop_assert_eq!(a.shape(), &[cfg.regions(), cfg.regions()][..]);
            for r in 0..cfg.regions() {
                prop_assert!(a.row(r).iter().all(|&p| p >= 0.0));
                prop_assert!((a.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}
