//! Property tests over randomized inputs for the structural invariants.

use proptest::prelude::*;

use vlbc_core::classify::focal_loss;
use vlbc_core::fairness::{evaluate, EvalRecord};
use vlbc_core::paths::{traverse, TraversalDirection, TraversalPolicy, WarpingField};
use vlbc_core::world::{SemanticCode, FeatureImage};
use vlbc_core::Rng;

fn record_strategy() -> impl Strategy<Value = EvalRecord> {
    (any::<bool>(), any::<bool>(), any::<bool>()).prop_map(|(y_true, y_pred, protected)| {
        EvalRecord {
            y_true,
            y_pred,
            protected,
        }
    })
}

proptest! {
    #[test]
    fn delta_mean_never_exceeds_max(records in prop::collection::vec(record_strategy(), 1..80)) {
        let report = evaluate(&records).unwrap();
        if let (Some(da), Some(dm)) = (report.delta_a, report.delta_m) {
            prop_assert!(da <= dm + 1e-12);
            prop_assert!((0.0..=100.0).contains(&da));
            prop_assert!((0.0..=100.0).contains(&dm));
        }
        prop_assert!((0.0..=100.0).contains(&report.accuracy));
        prop_assert!((0.0..=100.0).contains(&report.f1));
        if let Some(ad) = report.acc_diff {
            prop_assert!((-100.0..=100.0).contains(&ad));
        }
    }

    #[test]
    fn evaluation_is_permutation_invariant(
        records in prop::collection::vec(record_strategy(), 2..60),
        swap in (0usize..60, 0usize..60),
    ) {
        let base = evaluate(&records).unwrap();
        let mut permuted = records.clone();
        let (i, j) = (swap.0 % permuted.len(), swap.1 % permuted.len());
        permuted.swap(i, j);
        prop_assert_eq!(base, evaluate(&permuted).unwrap());
    }

    #[test]
    fn acc_diff_antisymmetric_under_group_inversion(
        records in prop::collection::vec(record_strategy(), 1..60),
    ) {
        let flipped: Vec<EvalRecord> = records
            .iter()
            .map(|r| EvalRecord { protected: !r.protected, ..*r })
            .collect();
        let a = evaluate(&records).unwrap();
        let b = evaluate(&flipped).unwrap();
        match (a.acc_diff, b.acc_diff) {
            (Some(x), Some(y)) => prop_assert!((x + y).abs() < 1e-9),
            (x, y) => prop_assert_eq!(x.is_none(), y.is_none()),
        }
    }

    #[test]
    fn focal_loss_nonnegative_and_gradient_signed(
        logit in -30.0f64..30.0,
        label in any::<bool>(),
        gamma in 0.0f64..5.0,
        alpha in 0.01f64..1.0,
    ) {
        let (loss, grad) = focal_loss(logit, label, gamma, alpha);
        prop_assert!(loss >= 0.0);
        prop_assert!(loss.is_finite());
        prop_assert!(grad.is_finite());
        // pushing the logit toward the label never increases the loss
        if label {
            prop_assert!(grad <= 1e-15);
        } else {
            prop_assert!(grad >= -1e-15);
        }
    }

    #[test]
    fn traversal_steps_within_policy_and_ball(
        seed in any::<u64>(),
        steps_min in 1usize..5,
        extra in 0usize..6,
        epsilon in 0.01f64..0.5,
    ) {
        let mut rng = Rng::seed_from(seed);
        let field = WarpingField::random(6, 4, &mut rng).unwrap();
        let start = SemanticCode { values: (0..6).map(|_| rng.next_normal()).collect() };
        let policy = TraversalPolicy {
            epsilon,
            steps_min,
            steps_max: steps_min + extra,
            direction: TraversalDirection::TowardPositive,
        };
        let radius = 6.0;
        let t = traverse(&start, &field, &policy, radius, &mut rng).unwrap();
        prop_assert!(t.steps_used <= policy.steps_max);
        prop_assert!(t.terminated_early || t.steps_used >= policy.steps_min);
        let norm: f64 = t.code.values.iter().map(|v| v * v).sum::<f64>();
        prop_assert!(norm.sqrt() <= radius + 1e-9);
    }

    #[test]
    fn pseudo_labels_ignore_code_permutation(
        seed in any::<u64>(),
    ) {
        use vlbc_core::pseudo::{fit_pseudo_labeler, pseudo_label_pool, PseudoLabelerConfig};
        use vlbc_core::world::{sample_real_dataset, sample_synthetic_pool, BiasSpec, WorldConfig, WorldSpec};

        let world = WorldSpec::build(&WorldConfig {
            d_s: 6,
            d_x: 10,
            num_attributes: 1,
            noise_std: 0.0,
            seed,
            ..WorldConfig::default()
        }).unwrap();
        let bias = BiasSpec { attribute_index: 0, correlation: 0.0, group_imbalance: 0.5 };
        let train = sample_real_dataset(400, &bias, &world, seed ^ 1).unwrap();
        let cfg = PseudoLabelerConfig { epochs: 5, ..PseudoLabelerConfig::default() };
        let labeler = fit_pseudo_labeler(&train, &cfg).unwrap();
        let pool = sample_synthetic_pool(50, &bias, &world, seed ^ 2).unwrap();

        // relabeling a pool with shuffled codes but identical images gives
        // identical labels: the labeler reads only the image
        let mut scrambled: Vec<(SemanticCode, FeatureImage)> = pool.clone();
        scrambled.rotate_left(1);
        let relabeled: Vec<(SemanticCode, FeatureImage)> = pool
            .iter()
            .zip(&scrambled)
            .map(|((_, img), (code, _))| (code.clone(), img.clone()))
            .collect();
        let a = pseudo_label_pool(&pool, &labeler);
        let b = pseudo_label_pool(&relabeled, &labeler);
        for (x, y) in a.iter().zip(&b) {
            prop_assert_eq!(&x.attributes, &y.attributes);
            prop_assert_eq!(x.protected, y.protected);
        }
    }
}
