//! Orchestration of bias control: contingency statistics over a labeled
//! dataset, augmentation quota planning, and assembly of the counter-bias
//! sample set from the pseudo-labeled pool.

use alloc::string::ToString;
use alloc::vec::Vec;

use crate::paths::{traverse, TraversalDirection, TraversalPolicy, WarpingField};
use crate::pseudo::{PseudoLabeledItem, PseudoLabeler};
use crate::rng::Rng;
use crate::world::{LabeledSample, Origin, WorldSpec};
use crate::{CoreError, Result};

/// Contingency counts of one attribute against the protected label.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DatasetStats {
    pub attribute_index: usize,
    /// counts[attribute value][protected value]
    pub counts: [[usize; 2]; 2],
    /// Protected value with the smaller total; ties go to protected=1.
    pub minority_protected: bool,
    pub tie: bool,
    /// Per attribute value: majority-cell count minus minority-cell count,
    /// clamped at zero.
    pub deficits: [usize; 2],
}

impl DatasetStats {
    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn majority_protected(&self) -> bool {
        !self.minority_protected
    }
}

/// Exact contingency counts and per-cell deficits for one attribute.
pub fn compute_stats(dataset: &[LabeledSample], attribute_index: usize) -> Result<DatasetStats> {
    if dataset.is_empty() {
        return Err(CoreError::EmptyInput);
    }
    if attribute_index >= dataset[0].attributes.len() {
        return Err(CoreError::DirectionOutOfRange {
            index: attribute_index,
            count: dataset[0].attributes.len(),
        });
    }
    let mut counts = [[0usize; 2]; 2];
    for s in dataset {
        counts[s.attributes[attribute_index] as usize][s.protected as usize] += 1;
    }
    let total_p0 = counts[0][0] + counts[1][0];
    let total_p1 = counts[0][1] + counts[1][1];
    let tie = total_p0 == total_p1;
    let minority_protected = if tie { true } else { total_p1 < total_p0 };
    let maj = !minority_protected as usize;
    let min = minority_protected as usize;
    let deficits = [
        counts[0][maj].saturating_sub(counts[0][min]),
        counts[1][maj].saturating_sub(counts[1][min]),
    ];
    Ok(DatasetStats {
        attribute_index,
        counts,
        minority_protected,
        tie,
        deficits,
    })
}

/// What an augmentation run is trying to do to the dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum PlanMode {
    /// Fill the minority cells up to the majority counts.
    Mitigate,
    /// Double the majority cells.
    Amplify,
    /// Inject pool images of the target class without editing.
    SampleOnly,
}

/// Quotas and source/target classes for one augmentation run.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AugmentationPlan {
    pub mode: PlanMode,
    pub attribute_index: usize,
    /// Quota of augmented samples per attribute value.
    pub quotas: [usize; 2],
    /// Protected class the pool items are selected from.
    pub source_protected: bool,
    /// Protected label the produced samples carry.
    pub target_protected: bool,
}

impl AugmentationPlan {
    pub fn is_empty(&self) -> bool {
        self.quotas == [0, 0]
    }

    pub fn validate(&self) -> Result<()> {
        match self.mode {
            PlanMode::Mitigate | PlanMode::Amplify => {
                if self.source_protected == self.target_protected {
                    return Err(CoreError::InvalidConfig(
                        "source and target classes must differ when editing".to_string(),
                    ));
                }
            }
            PlanMode::SampleOnly => {
                if self.source_protected != self.target_protected {
                    return Err(CoreError::InvalidConfig(
                        "sample-only runs keep the source class".to_string(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Mitigation plan: per attribute value, make up the minority deficit by
/// editing majority-class pool images into the minority class.
pub fn plan_mitigation(stats: &DatasetStats) -> AugmentationPlan {
    AugmentationPlan {
        mode: PlanMode::Mitigate,
        attribute_index: stats.attribute_index,
        quotas: stats.deficits,
        source_protected: stats.majority_protected(),
        target_protected: stats.minority_protected,
    }
}

/// Amplification plan: double every majority cell by editing minority-class
/// pool images into the majority class.
pub fn plan_amplification(stats: &DatasetStats) -> AugmentationPlan {
    let maj = stats.majority_protected() as usize;
    AugmentationPlan {
        mode: PlanMode::Amplify,
        attribute_index: stats.attribute_index,
        quotas: [stats.counts[0][maj], stats.counts[1][maj]],
        source_protected: stats.minority_protected,
        target_protected: stats.majority_protected(),
    }
}

/// Sampling-only plan: same quotas as mitigation but the pool images are
/// injected as-is, selected directly from the minority class.
pub fn plan_sampling(stats: &DatasetStats) -> AugmentationPlan {
    AugmentationPlan {
        mode: PlanMode::SampleOnly,
        attribute_index: stats.attribute_index,
        quotas: stats.deficits,
        source_protected: stats.minority_protected,
        target_protected: stats.minority_protected,
    }
}

/// Fulfillment accounting for one attribute-value cell.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CellOutcome {
    pub quota: usize,
    pub eligible: usize,
    pub fulfilled: usize,
    /// Samples the post-augmentation filter rejected.
    pub discarded: usize,
    pub shortfall: usize,
}

/// Per-cell quota fulfillment for a whole run.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ShortfallReport {
    pub mode: PlanMode,
    pub attribute_index: usize,
    /// Indexed by attribute value.
    pub cells: [CellOutcome; 2],
}

impl ShortfallReport {
    pub fn total_shortfall(&self) -> usize {
        self.cells.iter().map(|c| c.shortfall).sum()
    }

    pub fn total_fulfilled(&self) -> usize {
        self.cells.iter().map(|c| c.fulfilled).sum()
    }
}

/// Select eligible pool items, edit them toward the plan's target class,
/// and label the results.
///
/// Eligibility is by pseudo label: attribute value matching the cell and
/// protected class matching the plan source. Selection is uniform without
/// replacement under the run seed. In editing modes each selected code is
/// traversed toward the target pole (positive pole encodes protected=1),
/// the image is regenerated, attribute labels carry over unchanged from
/// the pseudo labels, and the protected label becomes the target class.
/// Emitted images pass through the world's observation-noise channel, the
/// same one real samples go through, so a downstream model cannot separate
/// the sources. When `filtering` is set, samples whose protected head
/// disagrees with the target are discarded and replaced from the remaining
/// eligible items until the pool runs dry; the rest of the quota is
/// reported as shortfall, never padded. Sample-only plans copy pool images
/// unedited (plus the noise channel) with their pseudo labels (origin
/// stays synthetic).
#[allow(clippy::too_many_arguments)]
pub fn select_and_augment(
    plan: &AugmentationPlan,
    pool: &[PseudoLabeledItem],
    fields: &[(usize, &WarpingField)],
    policy: &TraversalPolicy,
    world: &WorldSpec,
    labeler: &PseudoLabeler,
    filtering: bool,
    rng: &mut Rng,
) -> Result<(Vec<LabeledSample>, ShortfallReport)> {
    plan.validate()?;
    if let Some(item) = pool.first() {
        if plan.attribute_index >= item.attributes.len() {
            return Err(CoreError::PlanMismatch(alloc::format!(
                "plan balances attribute {} but pool items carry {}",
                plan.attribute_index,
                item.attributes.len()
            )));
        }
    }
    let editing = plan.mode != PlanMode::SampleOnly;
    let field = if editing {
        let prot = world.protected_index();
        Some(
            fields
                .iter()
                .find(|(k, _)| *k == prot)
                .map(|(_, f)| *f)
                .ok_or(CoreError::MissingField { index: prot })?,
        )
    } else {
        None
    };
    let effective_policy = TraversalPolicy {
        direction: if plan.target_protected {
            TraversalDirection::TowardPositive
        } else {
            TraversalDirection::TowardNegative
        },
        ..*policy
    };

    let mut augmented = Vec::new();
    let mut cells = [CellOutcome::default(), CellOutcome::default()];
    for attr_value in [false, true] {
        let cell = &mut cells[attr_value as usize];
        cell.quota = plan.quotas[attr_value as usize];

        let mut eligible: Vec<usize> = pool
            .iter()
            .enumerate()
            .filter(|(_, item)| {
                item.attributes[plan.attribute_index] == attr_value
                    && item.protected == plan.source_protected
            })
            .map(|(i, _)| i)
            .collect();
        cell.eligible = eligible.len();
        rng.shuffle(&mut eligible);

        let mut kept: Vec<(usize, LabeledSample)> = Vec::new();
        let mut queue = eligible.into_iter();
        while kept.len() < cell.quota {
            let Some(pool_index) = queue.next() else {
                break;
            };
            let item = &pool[pool_index];
            let mut sample = match field {
                None => LabeledSample {
                    image: item.image.clone(),
                    attributes: item.attributes.clone(),
                    protected: item.protected,
                    origin: Origin::Synthetic,
                },
                Some(field) => {
                    let t = traverse(
                        &item.code,
                        field,
                        &effective_policy,
                        world.box_radius,
                        rng,
                    )?;
                    let image = world.generate(&t.code)?;
                    LabeledSample {
                        image,
                        attributes: item.attributes.clone(),
                        protected: plan.target_protected,
                        origin: Origin::Augmented,
                    }
                }
            };
            if world.noise_std > 0.0 {
                for v in sample.image.values.iter_mut() {
                    *v += world.noise_std * rng.next_normal();
                }
            }
            if filtering && editing
                && labeler.predict_protected(&sample.image) != plan.target_protected {
                    cell.discarded += 1;
                    continue;
                }
            kept.push((pool_index, sample));
        }
        cell.fulfilled = kept.len();
        cell.shortfall = cell.quota - cell.fulfilled;
        // canonical output order, independent of selection order
        kept.sort_by_key(|(i, _)| *i);
        augmented.extend(kept.into_iter().map(|(_, s)| s));
    }
    Ok((
        augmented,
        ShortfallReport {
            mode: plan.mode,
            attribute_index: plan.attribute_index,
            cells,
        },
    ))
}
