//! Downstream binary attribute classifier: a one-hidden-layer network
//! trained with plain SGD on focal loss, plus the linear heads used by the
//! pseudo labeler and the inverse-cell-frequency weighting baseline.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use crate::math::{self, Matrix};
use crate::rng::Rng;
use crate::world::{FeatureImage, LabeledSample};
use crate::{CoreError, Result};

/// Numerically stable logistic function.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + math::exp(-z))
    } else {
        let e = math::exp(z);
        e / (1.0 + e)
    }
}

/// p_t is clamped at this floor before taking the log.
const P_T_FLOOR: f64 = 1e-12;

/// ln(1 + exp(x)) without overflow or cancellation.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + libm::log1p(math::exp(-x))
    } else {
        libm::log1p(math::exp(x))
    }
}

/// Focal loss of a single logit and its analytic d(loss)/d(logit).
///
/// loss = -alpha * (1 - p_t)^gamma * ln(p_t) with p_t the probability
/// assigned to the true label. p_t, its complement, and ln(p_t) are each
/// computed from the signed logit directly; subtracting from 1 would lose
/// the small factors the focal term is built on.
pub fn focal_loss(logit: f64, label: bool, gamma: f64, alpha: f64) -> (f64, f64) {
    let z = if label { logit } else { -logit };
    let t_raw = sigmoid(z);
    let (t, ln_t) = if t_raw < P_T_FLOOR {
        (P_T_FLOOR, math::log(P_T_FLOOR))
    } else {
        (t_raw, -softplus(-z))
    };
    let one_minus = sigmoid(-z);
    let loss = -alpha * math::pow(one_minus, gamma) * ln_t;
    let sign = if label { 1.0 } else { -1.0 };
    let grad = sign
        * alpha
        * (gamma * t * math::pow(one_minus, gamma) * ln_t
            - math::pow(one_minus, gamma + 1.0));
    (loss, grad)
}

/// Per-sample loss weighting scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum WeightMode {
    Uniform,
    /// Weight each sample by the inverse size of its
    /// (attribute value, protected value) cell, normalized to mean 1.
    InverseCellFrequency,
}

/// Training hyperparameters.
#[derive(Debug, Clone, Copy)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub focal_gamma: f64,
    pub focal_alpha: f64,
    pub weight_mode: WeightMode,
    pub hidden: usize,
    /// Update only the output layer, reweighting the frozen features of the
    /// initial classifier; the usual regime when fine-tuning from a
    /// pre-trained representation.
    pub freeze_hidden: bool,
    pub seed: u64,
}

impl TrainConfig {
    /// From-scratch regime: lr 1e-3, 100 epochs.
    pub fn baseline(seed: u64) -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            epochs: 100,
            batch_size: 64,
            focal_gamma: 2.0,
            focal_alpha: 0.25,
            weight_mode: WeightMode::Uniform,
            hidden: 32,
            freeze_hidden: false,
            seed,
        }
    }

    /// Fine-tune regime: lr 1e-4, 50 epochs.
    pub fn finetune(seed: u64) -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            epochs: 50,
            ..TrainConfig::baseline(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(CoreError::InvalidConfig("learning rate must be > 0".to_string()));
        }
        if self.focal_gamma < 0.0 {
            return Err(CoreError::InvalidConfig("focal gamma must be >= 0".to_string()));
        }
        if !(self.focal_alpha > 0.0 && self.focal_alpha <= 1.0) {
            return Err(CoreError::InvalidConfig("focal alpha must be in (0, 1]".to_string()));
        }
        if self.batch_size == 0 || self.hidden == 0 {
            return Err(CoreError::InvalidConfig(
                "batch size and hidden width must be >= 1".to_string(),
            ));
        }
        Ok(())
    }
}

/// One-hidden-layer tanh network with a scalar logit output.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub hidden_weights: Matrix,
    pub hidden_bias: Vec<f64>,
    pub output_weights: Vec<f64>,
    pub output_bias: f64,
}

impl Classifier {
    /// Fresh seeded initialization.
    pub fn init(d_x: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = Rng::seed_from(seed);
        let in_scale = 1.0 / math::sqrt(d_x as f64);
        let hidden_weights = Matrix::from_fn(hidden, d_x, |_, _| rng.next_normal() * in_scale);
        let out_scale = 1.0 / math::sqrt(hidden as f64);
        let output_weights = (0..hidden).map(|_| rng.next_normal() * out_scale).collect();
        Classifier {
            hidden_weights,
            hidden_bias: vec![0.0; hidden],
            output_weights,
            output_bias: 0.0,
        }
    }

    /// Constant predictor used when training data has a single class.
    pub fn constant(d_x: usize, hidden: usize, label: bool) -> Self {
        Classifier {
            hidden_weights: Matrix::zeros(hidden, d_x),
            hidden_bias: vec![0.0; hidden],
            output_weights: vec![0.0; hidden],
            output_bias: if label { 10.0 } else { -10.0 },
        }
    }

    pub fn input_dim(&self) -> usize {
        self.hidden_weights.cols
    }

    fn hidden_activations(&self, x: &[f64]) -> Vec<f64> {
        let mut z = self.hidden_weights.mul_vec(x);
        for (zi, bi) in z.iter_mut().zip(&self.hidden_bias) {
            *zi = math::tanh(*zi + bi);
        }
        z
    }

    pub fn logit(&self, x: &[f64]) -> f64 {
        let a = self.hidden_activations(x);
        math::dot(&self.output_weights, &a) + self.output_bias
    }

    /// Predicted bit and probability. The bit is 1 only for probability
    /// strictly above one half, so a zero logit predicts 0.
    pub fn predict(&self, image: &FeatureImage) -> Result<(bool, f64)> {
        if image.values.len() != self.input_dim() {
            return Err(CoreError::DimensionMismatch {
                expected: self.input_dim(),
                got: image.values.len(),
            });
        }
        let p = sigmoid(self.logit(&image.values));
        Ok((p > 0.5, p))
    }

    /// Mean weighted focal loss over a batch and its gradient with respect
    /// to every parameter.
    pub fn loss_and_gradients(
        &self,
        batch: &[(&[f64], bool, f64)],
        gamma: f64,
        alpha: f64,
    ) -> (f64, ClassifierGradients) {
        let mut grads = ClassifierGradients {
            hidden_weights: Matrix::zeros(self.hidden_weights.rows, self.hidden_weights.cols),
            hidden_bias: vec![0.0; self.hidden_bias.len()],
            output_weights: vec![0.0; self.output_weights.len()],
            output_bias: 0.0,
        };
        let inv = 1.0 / batch.len() as f64;
        let mut total = 0.0;
        for &(x, label, weight) in batch {
            let a = self.hidden_activations(x);
            let logit = math::dot(&self.output_weights, &a) + self.output_bias;
            let (loss, dl) = focal_loss(logit, label, gamma, alpha);
            total += inv * weight * loss;
            let g_logit = inv * weight * dl;
            grads.output_bias += g_logit;
            for (gw, ai) in grads.output_weights.iter_mut().zip(&a) {
                *gw += g_logit * ai;
            }
            for h in 0..a.len() {
                let g_pre = g_logit * self.output_weights[h] * (1.0 - a[h] * a[h]);
                grads.hidden_bias[h] += g_pre;
                let row = grads.hidden_weights.row_mut(h);
                for (ri, xi) in row.iter_mut().zip(x) {
                    *ri += g_pre * xi;
                }
            }
        }
        (total, grads)
    }

    fn apply_gradients(&mut self, grads: &ClassifierGradients, lr: f64, freeze_hidden: bool) {
        if !freeze_hidden {
            for (w, g) in self
                .hidden_weights
                .data
                .iter_mut()
                .zip(&grads.hidden_weights.data)
            {
                *w -= lr * g;
            }
            for (b, g) in self.hidden_bias.iter_mut().zip(&grads.hidden_bias) {
                *b -= lr * g;
            }
        }
        for (w, g) in self.output_weights.iter_mut().zip(&grads.output_weights) {
            *w -= lr * g;
        }
        self.output_bias -= lr * grads.output_bias;
    }
}

/// Parameter gradients, same shape as [`Classifier`].
#[derive(Debug, Clone)]
pub struct ClassifierGradients {
    pub hidden_weights: Matrix,
    pub hidden_bias: Vec<f64>,
    pub output_weights: Vec<f64>,
    pub output_bias: f64,
}

/// Trained classifier, per-epoch loss trace, and a flag for the
/// single-class degenerate case.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub classifier: Classifier,
    pub loss_trace: Vec<f64>,
    pub constant: bool,
}

/// Inverse-cell-frequency weights over (attribute, protected) cells,
/// normalized to mean 1. Uniform mode returns all ones.
pub fn sample_weights(
    dataset: &[LabeledSample],
    attribute_index: usize,
    mode: WeightMode,
) -> Vec<f64> {
    match mode {
        WeightMode::Uniform => vec![1.0; dataset.len()],
        WeightMode::InverseCellFrequency => {
            let mut counts = [[0usize; 2]; 2];
            for s in dataset {
                counts[s.attributes[attribute_index] as usize][s.protected as usize] += 1;
            }
            let nonempty = counts.iter().flatten().filter(|&&c| c > 0).count() as f64;
            let n = dataset.len() as f64;
            dataset
                .iter()
                .map(|s| {
                    let c =
                        counts[s.attributes[attribute_index] as usize][s.protected as usize];
                    n / (nonempty * c as f64)
                })
                .collect()
        }
    }
}

/// Minibatch SGD on mean weighted focal loss. `init` switches to the
/// fine-tune regime (the returned classifier starts from it); zero epochs
/// return the starting point unchanged.
pub fn train(
    dataset: &[LabeledSample],
    attribute_index: usize,
    cfg: &TrainConfig,
    init: Option<&Classifier>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(CoreError::EmptyInput);
    }
    if attribute_index >= dataset[0].attributes.len() {
        return Err(CoreError::DirectionOutOfRange {
            index: attribute_index,
            count: dataset[0].attributes.len(),
        });
    }
    let d_x = dataset[0].image.values.len();
    let positives = dataset
        .iter()
        .filter(|s| s.attributes[attribute_index])
        .count();
    if positives == 0 || positives == dataset.len() {
        return Ok(TrainOutcome {
            classifier: Classifier::constant(d_x, cfg.hidden, positives > 0),
            loss_trace: Vec::new(),
            constant: true,
        });
    }

    let weights = sample_weights(dataset, attribute_index, cfg.weight_mode);
    let mut model = match init {
        Some(m) => m.clone(),
        None => Classifier::init(d_x, cfg.hidden, cfg.seed),
    };
    let mut rng = Rng::seed_from(cfg.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);

    for _ in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(&[f64], bool, f64)> = chunk
                .iter()
                .map(|&i| {
                    (
                        dataset[i].image.values.as_slice(),
                        dataset[i].attributes[attribute_index],
                        weights[i],
                    )
                })
                .collect();
            let (loss, grads) =
                model.loss_and_gradients(&batch, cfg.focal_gamma, cfg.focal_alpha);
            model.apply_gradients(&grads, cfg.learning_rate, cfg.freeze_hidden);
            epoch_loss += loss * batch.len() as f64;
        }
        trace.push(epoch_loss / dataset.len() as f64);
    }
    Ok(TrainOutcome {
        classifier: model,
        loss_trace: trace,
        constant: false,
    })
}

/// A linear-plus-bias scorer over feature space.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearHead {
    pub fn logit(&self, x: &[f64]) -> f64 {
        math::dot(&self.weights, x) + self.bias
    }

    pub fn predict(&self, x: &[f64]) -> bool {
        sigmoid(self.logit(x)) > 0.5
    }
}

/// SGD focal-loss trainer for a single linear head. Used by the pseudo
/// labeler; shares the loss and update rule with the full classifier.
pub fn train_linear_head(
    features: &[&[f64]],
    labels: &[bool],
    cfg: &TrainConfig,
) -> Result<LinearHead> {
    cfg.validate()?;
    if features.is_empty() || features.len() != labels.len() {
        return Err(CoreError::EmptyInput);
    }
    let d = features[0].len();
    let mut rng = Rng::seed_from(cfg.seed);
    let scale = 1.0 / math::sqrt(d as f64);
    let mut head = LinearHead {
        weights: (0..d).map(|_| rng.next_normal() * scale).collect(),
        bias: 0.0,
    };
    let mut order: Vec<usize> = (0..features.len()).collect();
    for _ in 0..cfg.epochs {
        rng.shuffle(&mut order);
        for chunk in order.chunks(cfg.batch_size) {
            let inv = 1.0 / chunk.len() as f64;
            let mut g_w = vec![0.0; d];
            let mut g_b = 0.0;
            for &i in chunk {
                let (_, dl) = focal_loss(
                    head.logit(features[i]),
                    labels[i],
                    cfg.focal_gamma,
                    cfg.focal_alpha,
                );
                let g = inv * dl;
                g_b += g;
                for (gw, xi) in g_w.iter_mut().zip(features[i]) {
                    *gw += g * xi;
                }
            }
            for (w, g) in head.weights.iter_mut().zip(&g_w) {
                *w -= cfg.learning_rate * g;
            }
            head.bias -= cfg.learning_rate * g_b;
        }
    }
    Ok(head)
}
