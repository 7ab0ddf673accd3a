//! Pseudo labeling of the synthetic pool: a bank of linear heads, one per
//! task attribute plus one for the protected characteristic, trained on a
//! clean split and applied to unlabeled generated images. Also hosts the
//! post-augmentation filter that drops samples whose protected edit did not
//! take.

use alloc::vec::Vec;

use crate::classify::{train_linear_head, LinearHead, TrainConfig};
use crate::rng::{streams, Rng};
use crate::world::{FeatureImage, LabeledSample, SemanticCode};
use crate::{CoreError, Result};

/// Fit hyperparameters for the labeler.
#[derive(Debug, Clone, Copy)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PseudoLabelerConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Fraction of the fit data held out for the per-head accuracy report.
    pub holdout_fraction: f64,
    /// Probability of flipping each training label at fit time; a
    /// deliberate calibration knob, documented per instance.
    pub noise_rate: f64,
    pub seed: u64,
}

impl Default for PseudoLabelerConfig {
    fn default() -> Self {
        PseudoLabelerConfig {
            epochs: 40,
            learning_rate: 0.5,
            batch_size: 64,
            holdout_fraction: 0.3,
            noise_rate: 0.0,
            seed: 0,
        }
    }
}

/// One linear scorer per attribute plus the protected head (last).
#[derive(Debug, Clone)]
pub struct PseudoLabeler {
    pub heads: Vec<LinearHead>,
    /// Heads that saw a single class during fit predict that constant.
    pub constant_heads: Vec<Option<bool>>,
    /// Held-out accuracy per head, measured against clean labels.
    pub head_accuracy: Vec<f64>,
    pub noise_rate: f64,
}

impl PseudoLabeler {
    /// Number of heads (task attributes + 1).
    pub fn num_heads(&self) -> usize {
        self.heads.len()
    }

    /// Index of the protected-characteristic head.
    pub fn protected_head(&self) -> usize {
        self.heads.len() - 1
    }

    /// All head predictions for one image; protected bit last.
    pub fn label(&self, image: &FeatureImage) -> Vec<bool> {
        self.heads
            .iter()
            .enumerate()
            .map(|(i, h)| match self.constant_heads[i] {
                Some(bit) => bit,
                None => h.predict(&image.values),
            })
            .collect()
    }

    /// Protected-head prediction alone.
    pub fn predict_protected(&self, image: &FeatureImage) -> bool {
        let i = self.protected_head();
        match self.constant_heads[i] {
            Some(bit) => bit,
            None => self.heads[i].predict(&image.values),
        }
    }
}

fn head_label(sample: &LabeledSample, head: usize) -> bool {
    if head < sample.attributes.len() {
        sample.attributes[head]
    } else {
        sample.protected
    }
}

/// Train all heads on the given clean split. Labels are flipped with
/// probability `noise_rate` before fitting; held-out accuracy is always
/// measured against the clean labels.
pub fn fit_pseudo_labeler(
    train: &[LabeledSample],
    cfg: &PseudoLabelerConfig,
) -> Result<PseudoLabeler> {
    if train.is_empty() {
        return Err(CoreError::EmptyInput);
    }
    if !(0.0..0.5).contains(&cfg.noise_rate) && cfg.noise_rate != 0.5 {
        return Err(CoreError::InvalidConfig(
            alloc::string::ToString::to_string(&"noise rate must be in [0, 0.5]"),
        ));
    }
    if !(cfg.holdout_fraction > 0.0 && cfg.holdout_fraction < 1.0) {
        return Err(CoreError::InvalidConfig(
            alloc::string::ToString::to_string(&"holdout fraction must be in (0, 1)"),
        ));
    }
    let num_heads = train[0].attributes.len() + 1;
    let mut rng = Rng::substream(cfg.seed, streams::LABELER);

    let mut order: Vec<usize> = (0..train.len()).collect();
    rng.shuffle(&mut order);
    let holdout = ((train.len() as f64) * cfg.holdout_fraction) as usize;
    let fit_count = train.len() - holdout.min(train.len() - 1);
    let (fit_idx, held_idx) = order.split_at(fit_count);

    let mut heads = Vec::with_capacity(num_heads);
    let mut constant_heads = Vec::with_capacity(num_heads);
    let mut head_accuracy = Vec::with_capacity(num_heads);
    let head_cfg = TrainConfig {
        learning_rate: cfg.learning_rate,
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        seed: cfg.seed,
        ..TrainConfig::baseline(cfg.seed)
    };

    for head in 0..num_heads {
        // calibration noise applies to the whole fit split, so the held-out
        // accuracy is measured under the same label quality the head saw
        let noisy: Vec<bool> = train
            .iter()
            .map(|s| {
                let l = head_label(s, head);
                if cfg.noise_rate > 0.0 && rng.next_f64() < cfg.noise_rate {
                    !l
                } else {
                    l
                }
            })
            .collect();
        let features: Vec<&[f64]> = fit_idx
            .iter()
            .map(|&i| train[i].image.values.as_slice())
            .collect();
        let labels: Vec<bool> = fit_idx.iter().map(|&i| noisy[i]).collect();
        let positives = labels.iter().filter(|&&l| l).count();
        let (model, constant) = if positives == 0 || positives == labels.len() {
            (
                LinearHead {
                    weights: alloc::vec![0.0; features[0].len()],
                    bias: if positives > 0 { 10.0 } else { -10.0 },
                },
                Some(positives > 0),
            )
        } else {
            (train_linear_head(&features, &labels, &head_cfg)?, None)
        };
        let eval_idx: &[usize] = if held_idx.is_empty() { fit_idx } else { held_idx };
        let correct = eval_idx
            .iter()
            .filter(|&&i| {
                let pred = match constant {
                    Some(bit) => bit,
                    None => model.predict(&train[i].image.values),
                };
                pred == noisy[i]
            })
            .count();
        head_accuracy.push(correct as f64 / eval_idx.len() as f64);
        heads.push(model);
        constant_heads.push(constant);
    }
    Ok(PseudoLabeler {
        heads,
        constant_heads,
        head_accuracy,
        noise_rate: cfg.noise_rate,
    })
}

/// A pool item after annotation: code preserved, all pseudo labels attached.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabeledItem {
    pub code: SemanticCode,
    pub image: FeatureImage,
    /// Task-attribute pseudo labels.
    pub attributes: Vec<bool>,
    /// Protected-characteristic pseudo label.
    pub protected: bool,
}

/// Annotate every pool item. Labels are a pure function of the image.
pub fn pseudo_label_pool(
    pool: &[(SemanticCode, FeatureImage)],
    labeler: &PseudoLabeler,
) -> Vec<PseudoLabeledItem> {
    pool.iter()
        .map(|(code, image)| {
            let mut labels = labeler.label(image);
            let protected = labels.pop().expect("labeler has at least one head");
            PseudoLabeledItem {
                code: code.clone(),
                image: image.clone(),
                attributes: labels,
                protected,
            }
        })
        .collect()
}

/// Split augmented samples into those whose protected head agrees with the
/// augmentation target and the rest. kept + discarded is a permutation-free
/// partition of the input.
pub fn filter_augmented(
    aug: Vec<LabeledSample>,
    labeler: &PseudoLabeler,
    target_protected: bool,
) -> (Vec<LabeledSample>, Vec<LabeledSample>) {
    aug.into_iter()
        .partition(|s| labeler.predict_protected(&s.image) == target_protected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{
        sample_real_dataset, sample_synthetic_pool, BiasSpec, Origin, WorldConfig, WorldSpec,
    };
    use alloc::vec;

    fn clean_world(seed: u64) -> WorldSpec {
        WorldSpec::build(&WorldConfig {
            d_s: 8,
            d_x: 16,
            num_attributes: 2,
            noise_std: 0.0,
            seed,
            ..WorldConfig::default()
        })
        .unwrap()
    }

    fn unbiased(_world: &WorldSpec) -> BiasSpec {
        BiasSpec {
            attribute_index: 0,
            correlation: 0.0,
            group_imbalance: 0.5,
        }
    }

    #[test]
    fn clean_world_heads_are_accurate() {
        let world = clean_world(1);
        let train = sample_real_dataset(3000, &unbiased(&world), &world, 11).unwrap();
        let labeler = fit_pseudo_labeler(&train, &PseudoLabelerConfig::default()).unwrap();
        assert_eq!(labeler.num_heads(), 3);
        for (h, acc) in labeler.head_accuracy.iter().enumerate() {
            assert!(*acc >= 0.95, "head {h} accuracy {acc}");
        }
    }

    #[test]
    fn single_class_head_is_constant_and_flagged() {
        let world = clean_world(2);
        let mut train = sample_real_dataset(300, &unbiased(&world), &world, 12).unwrap();
        for s in train.iter_mut() {
            s.attributes[1] = true;
        }
        let labeler = fit_pseudo_labeler(&train, &PseudoLabelerConfig::default()).unwrap();
        assert_eq!(labeler.constant_heads[1], Some(true));
        assert!(labeler.constant_heads[0].is_none());
        let img = &train[0].image;
        assert!(labeler.label(img)[1]);
    }

    #[test]
    fn symmetric_noise_destroys_accuracy() {
        let world = clean_world(3);
        let train = sample_real_dataset(2000, &unbiased(&world), &world, 13).unwrap();
        let cfg = PseudoLabelerConfig {
            noise_rate: 0.5,
            seed: 13,
            ..PseudoLabelerConfig::default()
        };
        let labeler = fit_pseudo_labeler(&train, &cfg).unwrap();
        for (h, acc) in labeler.head_accuracy.iter().enumerate() {
            assert!((acc - 0.5).abs() <= 0.05, "head {h} accuracy {acc}");
        }
    }

    #[test]
    fn empty_pool_and_relabeling() {
        let world = clean_world(4);
        let train = sample_real_dataset(1500, &unbiased(&world), &world, 14).unwrap();
        let labeler = fit_pseudo_labeler(&train, &PseudoLabelerConfig::default()).unwrap();

        assert!(pseudo_label_pool(&[], &labeler).is_empty());

        let pool = sample_synthetic_pool(200, &unbiased(&world), &world, 15).unwrap();
        let a = pseudo_label_pool(&pool, &labeler);
        let b = pseudo_label_pool(&pool, &labeler);
        assert_eq!(a, b);
        for (item, (code, _)) in a.iter().zip(&pool) {
            assert_eq!(&item.code, code);
        }
    }

    #[test]
    fn pool_agreement_tracks_head_accuracy() {
        let world = clean_world(5);
        let train = sample_real_dataset(3000, &unbiased(&world), &world, 16).unwrap();
        let labeler = fit_pseudo_labeler(&train, &PseudoLabelerConfig::default()).unwrap();

        let pool = sample_synthetic_pool(2000, &unbiased(&world), &world, 17).unwrap();
        let annotated = pseudo_label_pool(&pool, &labeler);
        for head in 0..labeler.num_heads() {
            let agree = annotated
                .iter()
                .filter(|item| {
                    let truth = world.ground_truth_labels(&item.code);
                    let pseudo = if head < item.attributes.len() {
                        item.attributes[head]
                    } else {
                        item.protected
                    };
                    pseudo == truth[head]
                })
                .count();
            let rate = agree as f64 / annotated.len() as f64;
            assert!(
                rate >= labeler.head_accuracy[head] - 0.03,
                "head {head}: pool agreement {rate} vs held-out {}",
                labeler.head_accuracy[head]
            );
        }
    }

    #[test]
    fn labels_are_pure_function_of_image() {
        let world = clean_world(6);
        let train = sample_real_dataset(1500, &unbiased(&world), &world, 18).unwrap();
        let labeler = fit_pseudo_labeler(&train, &PseudoLabelerConfig::default()).unwrap();
        let pool = sample_synthetic_pool(100, &unbiased(&world), &world, 19).unwrap();
        let mut permuted = pool.clone();
        permuted.reverse();
        let a = pseudo_label_pool(&pool, &labeler);
        let mut b = pseudo_label_pool(&permuted, &labeler);
        b.reverse();
        assert_eq!(a, b);
    }

    fn augmented_from_images(images: Vec<FeatureImage>, target: bool) -> Vec<LabeledSample> {
        images
            .into_iter()
            .map(|image| LabeledSample {
                image,
                attributes: vec![false, false],
                protected: target,
                origin: Origin::Augmented,
            })
            .collect()
    }

    #[test]
    fn filter_partition_and_flip() {
        let world = clean_world(7);
        let train = sample_real_dataset(2500, &unbiased(&world), &world, 20).unwrap();
        let labeler = fit_pseudo_labeler(&train, &PseudoLabelerConfig::default()).unwrap();
        let pool = sample_synthetic_pool(300, &unbiased(&world), &world, 21).unwrap();
        let aug = augmented_from_images(pool.iter().map(|(_, x)| x.clone()).collect(), true);

        let (kept, discarded) = filter_augmented(aug.clone(), &labeler, true);
        assert_eq!(kept.len() + discarded.len(), aug.len());
        let (kept_flip, discarded_flip) = filter_augmented(aug, &labeler, false);
        assert_eq!(kept.len(), discarded_flip.len());
        assert_eq!(discarded.len(), kept_flip.len());
    }

    #[test]
    fn perfect_augmentation_keeps_everything() {
        let world = clean_world(8);
        let train = sample_real_dataset(3000, &unbiased(&world), &world, 22).unwrap();
        let labeler = fit_pseudo_labeler(&train, &PseudoLabelerConfig::default()).unwrap();

        // prototypes far on the protected side are unambiguous
        let prot = world.protected_index();
        let dir = world.attribute_directions[prot].clone();
        let mut rng = Rng::seed_from(23);
        let images: Vec<FeatureImage> = (0..100)
            .map(|_| {
                let mut c = world.sample_code(&mut rng);
                let margin = world.margin(&c, prot);
                for (ci, di) in c.values.iter_mut().zip(&dir) {
                    *ci += (3.0 - margin) * di;
                }
                world.generate(&c).unwrap()
            })
            .collect();
        let aug = augmented_from_images(images, true);
        let (kept, discarded) = filter_augmented(aug, &labeler, true);
        assert!(discarded.is_empty(), "{} discarded", discarded.len());
        assert_eq!(kept.len(), 100);
    }

    #[test]
    fn short_traversals_are_discarded_at_oracle_rate() {
        use crate::paths::{traverse, TraversalDirection, TraversalPolicy, WarpingField};

        let world = clean_world(9);
        let train = sample_real_dataset(3000, &unbiased(&world), &world, 24).unwrap();
        let labeler = fit_pseudo_labeler(&train, &PseudoLabelerConfig::default()).unwrap();

        let prot = world.protected_index();
        // single support far along the protected direction: the field points
        // straight at it from anywhere
        let support: Vec<f64> = world.attribute_directions[prot]
            .iter()
            .map(|d| 6.0 * d)
            .collect();
        let field = WarpingField {
            supports: vec![support],
            weights: vec![1.0],
            bandwidths: vec![1.0 / world.d_s as f64],
        };
        // deliberately too few steps to cross for distant codes
        let policy = TraversalPolicy {
            epsilon: 0.2,
            steps_min: 2,
            steps_max: 3,
            direction: TraversalDirection::TowardPositive,
        };

        let mut rng = Rng::seed_from(25);
        let mut images = Vec::new();
        let mut oracle_failures = 0usize;
        let mut count = 0usize;
        while count < 300 {
            let c = world.sample_code(&mut rng);
            if world.margin(&c, prot) > 0.0 {
                continue;
            }
            count += 1;
            let t = traverse(&c, &field, &policy, world.box_radius, &mut rng).unwrap();
            if world.margin(&t.code, prot) <= 0.0 {
                oracle_failures += 1;
            }
            images.push(world.generate(&t.code).unwrap());
        }
        let aug = augmented_from_images(images, true);
        let total = aug.len() as f64;
        let (_, discarded) = filter_augmented(aug, &labeler, true);
        let discard_rate = discarded.len() as f64 / total;
        let oracle_rate = oracle_failures as f64 / total;
        assert!(oracle_rate > 0.2, "fixture too easy: {oracle_rate}");
        assert!(
            (discard_rate - oracle_rate).abs() <= 0.06,
            "discard {discard_rate} vs oracle {oracle_rate}"
        );
    }
}
