//! Group-conditioned evaluation metrics: accuracy, f1, the signed accuracy
//! gap between protected groups, and the mean/max equal-opportunity
//! disparity over the two true classes. All metrics are reported in
//! percentage points.

use alloc::vec::Vec;

use crate::classify::Classifier;
use crate::world::LabeledSample;
use crate::{CoreError, Result};

/// One evaluated test sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalRecord {
    pub y_true: bool,
    pub y_pred: bool,
    pub protected: bool,
}

/// The metric bundle for one (task, method, seed) evaluation.
///
/// Undefined quantities are `None` (or zero with the defined flag cleared
/// for f1) rather than silently zero: an empty protected group undefines
/// `acc_diff`, and a (true class, group) cell with no members excludes that
/// class from the disparity metrics.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FairnessReport {
    pub accuracy: f64,
    pub f1: f64,
    pub f1_defined: bool,
    /// accuracy(protected=0) - accuracy(protected=1), percentage points.
    pub acc_diff: Option<f64>,
    /// Mean over defined true classes of the absolute correct-rate gap.
    pub delta_a: Option<f64>,
    /// Max over defined true classes of the absolute correct-rate gap.
    pub delta_m: Option<f64>,
    /// True classes excluded from the disparity metrics.
    pub excluded_classes: [bool; 2],
    /// Samples per protected group.
    pub group_sizes: [usize; 2],
}

/// Compute the full metric bundle from evaluated records.
pub fn evaluate(records: &[EvalRecord]) -> Result<FairnessReport> {
    if records.is_empty() {
        return Err(CoreError::EmptyInput);
    }
    let n = records.len() as f64;
    let correct = records.iter().filter(|r| r.y_pred == r.y_true).count() as f64;
    let accuracy = 100.0 * correct / n;

    let tp = records.iter().filter(|r| r.y_true && r.y_pred).count() as f64;
    let fp = records.iter().filter(|r| !r.y_true && r.y_pred).count() as f64;
    let fn_ = records.iter().filter(|r| r.y_true && !r.y_pred).count() as f64;
    let f1_defined = (tp + fp) > 0.0 && (tp + fn_) > 0.0;
    let f1_denom = 2.0 * tp + fp + fn_;
    let f1 = if f1_denom > 0.0 {
        100.0 * 2.0 * tp / f1_denom
    } else {
        0.0
    };

    let mut group_total = [0usize; 2];
    let mut group_correct = [0usize; 2];
    // per (true class, group): total and correct
    let mut cell_total = [[0usize; 2]; 2];
    let mut cell_correct = [[0usize; 2]; 2];
    for r in records {
        let g = r.protected as usize;
        let y = r.y_true as usize;
        group_total[g] += 1;
        cell_total[y][g] += 1;
        if r.y_pred == r.y_true {
            group_correct[g] += 1;
            cell_correct[y][g] += 1;
        }
    }

    let acc_diff = if group_total[0] > 0 && group_total[1] > 0 {
        let acc0 = group_correct[0] as f64 / group_total[0] as f64;
        let acc1 = group_correct[1] as f64 / group_total[1] as f64;
        Some(100.0 * (acc0 - acc1))
    } else {
        None
    };

    let mut gaps: Vec<f64> = Vec::with_capacity(2);
    let mut excluded_classes = [false; 2];
    for y in 0..2 {
        if cell_total[y][0] == 0 || cell_total[y][1] == 0 {
            excluded_classes[y] = true;
            continue;
        }
        let rate0 = cell_correct[y][0] as f64 / cell_total[y][0] as f64;
        let rate1 = cell_correct[y][1] as f64 / cell_total[y][1] as f64;
        gaps.push(100.0 * (rate0 - rate1).abs());
    }
    let (delta_a, delta_m) = if gaps.is_empty() {
        (None, None)
    } else {
        let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
        let max = gaps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (Some(mean), Some(max))
    };

    Ok(FairnessReport {
        accuracy,
        f1,
        f1_defined,
        acc_diff,
        delta_a,
        delta_m,
        excluded_classes,
        group_sizes: group_total,
    })
}

/// Run a classifier over a labeled test set and evaluate the records.
pub fn evaluate_suite(
    classifier: &Classifier,
    test: &[LabeledSample],
    attribute_index: usize,
) -> Result<FairnessReport> {
    if test.is_empty() {
        return Err(CoreError::EmptyInput);
    }
    if attribute_index >= test[0].attributes.len() {
        return Err(CoreError::DirectionOutOfRange {
            index: attribute_index,
            count: test[0].attributes.len(),
        });
    }
    let records: Vec<EvalRecord> = test
        .iter()
        .map(|s| {
            let (bit, _) = classifier.predict(&s.image)?;
            Ok(EvalRecord {
                y_true: s.attributes[attribute_index],
                y_pred: bit,
                protected: s.protected,
            })
        })
        .collect::<Result<_>>()?;
    evaluate(&records)
}

/// Mean and population standard deviation of one metric over seeds.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    /// How many reports defined this metric.
    pub n: usize,
}

fn mean_std(values: &[f64]) -> Option<MeanStd> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Some(MeanStd {
        mean,
        std: crate::math::sqrt(var),
        n: values.len(),
    })
}

/// Cross-seed aggregate of fairness reports.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AggregateReport {
    pub accuracy: MeanStd,
    pub f1: MeanStd,
    pub acc_diff: Option<MeanStd>,
    pub delta_a: Option<MeanStd>,
    pub delta_m: Option<MeanStd>,
    pub runs: usize,
}

/// Aggregate per-seed reports as arithmetic mean plus population std.
/// Metrics undefined in some run aggregate over the runs that defined them.
pub fn aggregate(reports: &[FairnessReport]) -> Result<AggregateReport> {
    if reports.is_empty() {
        return Err(CoreError::EmptyInput);
    }
    let collect = |f: &dyn Fn(&FairnessReport) -> Option<f64>| -> Vec<f64> {
        reports.iter().filter_map(f).collect()
    };
    Ok(AggregateReport {
        accuracy: mean_std(&collect(&|r| Some(r.accuracy))).expect("nonempty"),
        f1: mean_std(&collect(&|r| Some(r.f1))).expect("nonempty"),
        acc_diff: mean_std(&collect(&|r| r.acc_diff)),
        delta_a: mean_std(&collect(&|r| r.delta_a)),
        delta_m: mean_std(&collect(&|r| r.delta_m)),
        runs: reports.len(),
    })
}
