//! Trainable warped vector fields in the generator's semantic space.
//!
//! Each editing path is the normalized gradient of a sum-of-RBF potential.
//! Training aligns the embedding-space motion caused by one traversal step
//! of field k with the k-th dipole field, while a contrastive term pushes it
//! away from the other dipoles' fields. Support points and weights are the
//! trainable parameters; bandwidths stay fixed.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use crate::embedding::{dipole_field, ImageEncoder, SemanticDipole};
use crate::math::{self, FieldDirection};
use crate::rng::{streams, Rng};
use crate::world::{SemanticCode, WorldSpec};
use crate::{CoreError, Result};

/// Gradients below this norm are flagged as zero.
const ZERO_GRADIENT_EPS: f64 = 1e-12;

/// Sum-of-RBF potential whose normalized gradient is the editing field.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpingField {
    /// Q support points in semantic space.
    pub supports: Vec<Vec<f64>>,
    /// One weight per support.
    pub weights: Vec<f64>,
    /// One fixed bandwidth per support, each > 0.
    pub bandwidths: Vec<f64>,
}

impl WarpingField {
    /// Random initial field: supports drawn from the code prior, small
    /// random weights, all bandwidths at 1/d_s.
    pub fn random(d_s: usize, num_supports: usize, rng: &mut Rng) -> Result<Self> {
        if num_supports == 0 {
            return Err(CoreError::InvalidConfig(
                "need at least one support".to_string(),
            ));
        }
        let supports = (0..num_supports)
            .map(|_| (0..d_s).map(|_| rng.next_normal()).collect())
            .collect();
        let weights = (0..num_supports).map(|_| 0.5 * rng.next_normal()).collect();
        Ok(WarpingField {
            supports,
            weights,
            bandwidths: vec![1.0 / d_s as f64; num_supports],
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.supports.is_empty() {
            return Err(CoreError::InvalidConfig("field has no supports".to_string()));
        }
        if self.supports.len() != self.weights.len()
            || self.supports.len() != self.bandwidths.len()
        {
            return Err(CoreError::InvalidConfig(
                "support/weight/bandwidth lengths differ".to_string(),
            ));
        }
        if self.bandwidths.iter().any(|&g| g <= 0.0) {
            return Err(CoreError::InvalidConfig("bandwidths must be > 0".to_string()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.supports[0].len()
    }

    /// Scalar potential at a code.
    pub fn potential(&self, s: &[f64]) -> f64 {
        self.supports
            .iter()
            .zip(&self.weights)
            .zip(&self.bandwidths)
            .map(|((q, &a), &g)| a * math::exp(-g * math::squared_distance(s, q)))
            .sum()
    }

    /// Raw (unnormalized) potential gradient at a code.
    pub fn raw_gradient(&self, s: &[f64]) -> Vec<f64> {
        let mut grad = vec![0.0; s.len()];
        for ((q, &a), &g) in self.supports.iter().zip(&self.weights).zip(&self.bandwidths) {
            let w = math::exp(-g * math::squared_distance(s, q));
            let coeff = 2.0 * g * a * w;
            for i in 0..s.len() {
                grad[i] += coeff * (q[i] - s[i]);
            }
        }
        grad
    }

    /// Normalized field direction; flags numerically zero gradients.
    pub fn field_at(&self, s: &SemanticCode) -> Result<FieldDirection> {
        if s.values.len() != self.dim() {
            return Err(CoreError::DimensionMismatch {
                expected: self.dim(),
                got: s.values.len(),
            });
        }
        Ok(FieldDirection::from_gradient(
            self.raw_gradient(&s.values),
            ZERO_GRADIENT_EPS,
        ))
    }
}

/// Which pole a traversal moves toward.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum TraversalDirection {
    TowardPositive,
    TowardNegative,
}

impl TraversalDirection {
    pub fn sign(self) -> f64 {
        match self {
            TraversalDirection::TowardPositive => 1.0,
            TraversalDirection::TowardNegative => -1.0,
        }
    }
}

/// Step size and step-count range for traversals.
#[derive(Debug, Clone, Copy)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TraversalPolicy {
    pub epsilon: f64,
    pub steps_min: usize,
    pub steps_max: usize,
    pub direction: TraversalDirection,
}

impl TraversalPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.steps_min < 1 || self.steps_min > self.steps_max {
            return Err(CoreError::InvalidConfig(
                "need 1 <= steps_min <= steps_max".to_string(),
            ));
        }
        if self.epsilon == 0.0 {
            return Err(CoreError::InvalidConfig("epsilon must be nonzero".to_string()));
        }
        Ok(())
    }
}

/// Result of a traversal: the final code, how many steps were applied, and
/// whether a vanishing gradient stopped it early.
#[derive(Debug, Clone, PartialEq)]
pub struct Traversal {
    pub code: SemanticCode,
    pub steps_used: usize,
    pub terminated_early: bool,
}

/// Walk a code along the field. The step count is drawn uniformly from
/// [steps_min, steps_max]; each step moves by epsilon along the (signed)
/// unit field direction and clamps back onto the code ball.
pub fn traverse(
    start: &SemanticCode,
    field: &WarpingField,
    policy: &TraversalPolicy,
    box_radius: f64,
    rng: &mut Rng,
) -> Result<Traversal> {
    policy.validate()?;
    let planned = rng.next_in_range(policy.steps_min, policy.steps_max);
    let sign = policy.direction.sign();
    let mut code = start.clone();
    for step in 0..planned {
        let dir = field.field_at(&code)?;
        if dir.is_zero {
            return Ok(Traversal {
                code,
                steps_used: step,
                terminated_early: true,
            });
        }
        math::axpy(sign * policy.epsilon, &dir.vector, &mut code.values);
        math::clamp_to_ball(&mut code.values, box_radius);
    }
    Ok(Traversal {
        code,
        steps_used: planned,
        terminated_early: false,
    })
}

/// Hyperparameters for path training.
#[derive(Debug, Clone, Copy)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PathTrainingConfig {
    pub epochs: usize,
    pub minibatch: usize,
    pub learning_rate: f64,
    /// Step applied during training to probe embedding motion.
    pub train_step: f64,
    /// Contrastive temperature.
    pub temperature: f64,
    /// Size of the resampled-once training code pool.
    pub training_codes: usize,
    pub seed: u64,
}

impl Default for PathTrainingConfig {
    fn default() -> Self {
        PathTrainingConfig {
            epochs: 40,
            minibatch: 32,
            learning_rate: 0.02,
            train_step: 0.2,
            temperature: 0.1,
            training_codes: 512,
            seed: 0,
        }
    }
}

impl PathTrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.train_step <= 0.0 {
            return Err(CoreError::InvalidConfig("train_step must be > 0".to_string()));
        }
        if self.temperature <= 0.0 {
            return Err(CoreError::InvalidConfig("temperature must be > 0".to_string()));
        }
        if self.minibatch == 0 || self.training_codes == 0 {
            return Err(CoreError::InvalidConfig(
                "minibatch and training_codes must be >= 1".to_string(),
            ));
        }
        Ok(())
    }
}

/// Per-field parameter gradient, same shape as the trainables.
#[derive(Debug, Clone)]
pub struct FieldGradient {
    pub weights: Vec<f64>,
    pub supports: Vec<Vec<f64>>,
}

impl FieldGradient {
    fn zeros_like(field: &WarpingField) -> Self {
        FieldGradient {
            weights: vec![0.0; field.weights.len()],
            supports: field.supports.iter().map(|q| vec![0.0; q.len()]).collect(),
        }
    }
}

/// Mean contrastive loss over a batch of codes, optionally accumulating
/// parameter gradients.
///
/// Per code s and field k, one training step probes the embedding motion
/// delta_e_k = encode(G(s + step * field_k(s))) - encode(G(s)). With K > 1
/// the loss is InfoNCE over cosines against the K dipole field directions
/// at encode(G(s)) (temperature tau); with K = 1 the denominator would
/// cancel the numerator, so the loss reduces to maximizing the single
/// cosine alignment. Pairs with vanishing field gradient or vanishing
/// embedding motion are skipped and counted.
#[allow(clippy::too_many_arguments)]
pub fn contrastive_batch_loss(
    fields: &[WarpingField],
    dipoles: &[SemanticDipole],
    world: &WorldSpec,
    encoder: &ImageEncoder,
    dipole_gamma: f64,
    codes: &[SemanticCode],
    train_step: f64,
    temperature: f64,
    mut grads: Option<&mut Vec<FieldGradient>>,
) -> Result<(f64, usize)> {
    if fields.len() != dipoles.len() || fields.is_empty() {
        return Err(CoreError::InvalidConfig(
            "need the same nonzero number of fields and dipoles".to_string(),
        ));
    }
    if codes.is_empty() {
        return Err(CoreError::EmptyInput);
    }
    let k_total = fields.len();
    let inv_batch = 1.0 / codes.len() as f64;
    let mut total_loss = 0.0;
    let mut skipped = 0usize;

    for s in codes {
        let base_image = world.generate(s)?;
        let e_s = encoder.encode(&base_image)?;
        let dipole_dirs: Vec<FieldDirection> = dipoles
            .iter()
            .map(|d| dipole_field(d, &e_s, dipole_gamma))
            .collect::<Result<_>>()?;

        for k in 0..k_total {
            let raw = fields[k].raw_gradient(&s.values);
            let mut unit = raw.clone();
            let raw_norm = math::normalize(&mut unit, ZERO_GRADIENT_EPS);
            if raw_norm == 0.0 {
                skipped += 1;
                continue;
            }
            let mut stepped = s.values.clone();
            math::axpy(train_step, &unit, &mut stepped);
            let stepped_code = SemanticCode { values: stepped };
            let stepped_image = world.generate(&stepped_code)?;
            let e_stepped = encoder.encode(&stepped_image)?;
            let delta: Vec<f64> = e_stepped
                .values
                .iter()
                .zip(&e_s.values)
                .map(|(a, b)| a - b)
                .collect();
            let delta_norm = math::norm(&delta);
            if delta_norm < ZERO_GRADIENT_EPS {
                skipped += 1;
                continue;
            }

            let cosines: Vec<f64> = dipole_dirs
                .iter()
                .map(|d| {
                    if d.is_zero {
                        0.0
                    } else {
                        math::dot(&delta, &d.vector) / delta_norm
                    }
                })
                .collect();

            // loss and d(loss)/d(cosine_j)
            let mut dl_dcos = vec![0.0; k_total];
            let loss_term = if k_total == 1 {
                dl_dcos[0] = -1.0 / temperature;
                -cosines[0] / temperature
            } else {
                let logits: Vec<f64> = cosines.iter().map(|c| c / temperature).collect();
                let max_logit = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exp_sum: f64 = logits.iter().map(|l| math::exp(l - max_logit)).sum();
                let log_sum = max_logit + math::log(exp_sum);
                for j in 0..k_total {
                    let p = math::exp(logits[j] - log_sum);
                    dl_dcos[j] = (p - if j == k { 1.0 } else { 0.0 }) / temperature;
                }
                log_sum - logits[k]
            };
            total_loss += inv_batch * loss_term;

            let Some(grad_accum) = grads.as_deref_mut() else {
                continue;
            };

            // d(loss)/d(delta_e): sum_j dl_dcos_j * (d_j - cos_j * delta_hat) / |delta|
            let delta_hat: Vec<f64> = delta.iter().map(|d| d / delta_norm).collect();
            let mut g_delta = vec![0.0; delta.len()];
            for j in 0..k_total {
                if dipole_dirs[j].is_zero || dl_dcos[j] == 0.0 {
                    continue;
                }
                let coeff = dl_dcos[j] / delta_norm;
                for i in 0..delta.len() {
                    g_delta[i] +=
                        coeff * (dipole_dirs[j].vector[i] - cosines[j] * delta_hat[i]);
                }
            }

            // back through encode, the generator, the step, and the
            // normalized RBF gradient
            let g_image = encoder.encode_vjp(&stepped_image, &g_delta);
            let g_code = world.generate_vjp(&stepped_code, &g_image);
            let g_unit: Vec<f64> = g_code.iter().map(|g| train_step * g).collect();
            let unit_dot = math::dot(&unit, &g_unit);
            let g_raw: Vec<f64> = g_unit
                .iter()
                .zip(&unit)
                .map(|(g, u)| (g - unit_dot * u) / raw_norm)
                .collect();

            let field = &fields[k];
            let accum = &mut grad_accum[k];
            for (i, (q, &g)) in field.supports.iter().zip(&field.bandwidths).enumerate() {
                let sq = math::squared_distance(&s.values, q);
                let w = math::exp(-g * sq);
                let r: Vec<f64> = q.iter().zip(&s.values).map(|(qi, si)| qi - si).collect();
                let r_dot_g = math::dot(&r, &g_raw);
                accum.weights[i] += inv_batch * 2.0 * g * w * r_dot_g;
                let coeff = inv_batch * 2.0 * g * field.weights[i] * w;
                for d in 0..r.len() {
                    accum.supports[i][d] += coeff * (g_raw[d] - 2.0 * g * r[d] * r_dot_g);
                }
            }
        }
    }
    Ok((total_loss, skipped))
}

/// Outcome of path training: the per-epoch loss trace plus how many
/// (code, field) pairs were skipped for vanishing gradients.
#[derive(Debug, Clone)]
pub struct PathTrainingOutcome {
    pub loss_trace: Vec<f64>,
    pub skipped_pairs: usize,
}

/// Train the fields in place by minibatch gradient descent on the
/// contrastive objective. The code pool is drawn once from `sampler` and
/// reshuffled every epoch.
#[allow(clippy::too_many_arguments)]
pub fn train_paths(
    fields: &mut [WarpingField],
    dipoles: &[SemanticDipole],
    world: &WorldSpec,
    encoder: &ImageEncoder,
    dipole_gamma: f64,
    cfg: &PathTrainingConfig,
    sampler: &mut dyn FnMut(&mut Rng) -> SemanticCode,
) -> Result<PathTrainingOutcome> {
    cfg.validate()?;
    if fields.len() != dipoles.len() || fields.is_empty() {
        return Err(CoreError::InvalidConfig(
            "need the same nonzero number of fields and dipoles".to_string(),
        ));
    }
    for f in fields.iter() {
        f.validate()?;
    }

    let mut rng = Rng::substream(cfg.seed, streams::PATH_TRAIN);
    let pool: Vec<SemanticCode> = (0..cfg.training_codes).map(|_| sampler(&mut rng)).collect();
    let mut order: Vec<usize> = (0..pool.len()).collect();

    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut skipped_total = 0usize;
    for _ in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        for chunk in order.chunks(cfg.minibatch) {
            let batch: Vec<SemanticCode> = chunk.iter().map(|&i| pool[i].clone()).collect();
            let mut grads: Vec<FieldGradient> =
                fields.iter().map(FieldGradient::zeros_like).collect();
            let (loss, skipped) = contrastive_batch_loss(
                fields,
                dipoles,
                world,
                encoder,
                dipole_gamma,
                &batch,
                cfg.train_step,
                cfg.temperature,
                Some(&mut grads),
            )?;
            skipped_total += skipped;
            epoch_loss += loss * batch.len() as f64;
            seen += batch.len();
            for (field, grad) in fields.iter_mut().zip(&grads) {
                for (w, g) in field.weights.iter_mut().zip(&grad.weights) {
                    *w -= cfg.learning_rate * g;
                }
                for (q, gq) in field.supports.iter_mut().zip(&grad.supports) {
                    for (qi, gi) in q.iter_mut().zip(gq) {
                        *qi -= cfg.learning_rate * gi;
                    }
                }
            }
        }
        trace.push(epoch_loss / seen as f64);
    }
    Ok(PathTrainingOutcome {
        loss_trace: trace,
        skipped_pairs: skipped_total,
    })
}

/// Mean cosine between each field's embedding motion and each dipole field
/// over a set of evaluation codes. Entry [k][j] is the mean cosine of field
/// k's motion against dipole j's direction.
#[allow(clippy::too_many_arguments)]
pub fn mean_cosine_matrix(
    fields: &[WarpingField],
    dipoles: &[SemanticDipole],
    world: &WorldSpec,
    encoder: &ImageEncoder,
    dipole_gamma: f64,
    codes: &[SemanticCode],
    train_step: f64,
) -> Result<Vec<Vec<f64>>> {
    let k_total = fields.len();
    let mut sums = vec![vec![0.0; k_total]; k_total];
    let mut counts = vec![0usize; k_total];
    for s in codes {
        let e_s = encoder.encode(&world.generate(s)?)?;
        let dirs: Vec<FieldDirection> = dipoles
            .iter()
            .map(|d| dipole_field(d, &e_s, dipole_gamma))
            .collect::<Result<_>>()?;
        for k in 0..k_total {
            let f = fields[k].field_at(s)?;
            if f.is_zero {
                continue;
            }
            let mut stepped = s.values.clone();
            math::axpy(train_step, &f.vector, &mut stepped);
            let e_stepped = encoder.encode(&world.generate(&SemanticCode { values: stepped })?)?;
            let delta: Vec<f64> = e_stepped
                .values
                .iter()
                .zip(&e_s.values)
                .map(|(a, b)| a - b)
                .collect();
            if math::norm(&delta) < ZERO_GRADIENT_EPS {
                continue;
            }
            counts[k] += 1;
            for j in 0..k_total {
                sums[k][j] += if dirs[j].is_zero {
                    0.0
                } else {
                    math::cosine(&delta, &dirs[j].vector)
                };
            }
        }
    }
    for k in 0..k_total {
        if counts[k] > 0 {
            for j in 0..k_total {
                sums[k][j] /= counts[k] as f64;
            }
        }
    }
    Ok(sums)
}

/// Margin of field k: own-dipole mean cosine minus the best other dipole's.
/// With a single field the margin is just the own-dipole cosine.
pub fn alignment_margins(matrix: &[Vec<f64>]) -> Vec<f64> {
    matrix
        .iter()
        .enumerate()
        .map(|(k, row)| {
            let own = row[k];
            let best_other = row
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != k)
                .map(|(_, &v)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            if best_other == f64::NEG_INFINITY {
                own
            } else {
                own - best_other
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::make_dipoles;
    use crate::world::WorldConfig;

    fn single_support_field(d_s: usize, q: Vec<f64>, alpha: f64) -> WarpingField {
        WarpingField {
            supports: vec![q],
            weights: vec![alpha],
            bandwidths: vec![1.0 / d_s as f64],
        }
    }

    #[test]
    fn single_support_points_at_support() {
        let q = vec![2.0, -1.0, 0.5, 3.0];
        let field = single_support_field(4, q.clone(), 1.0);
        let s = SemanticCode {
            values: vec![0.0, 0.0, 0.0, 0.0],
        };
        let dir = field.field_at(&s).unwrap();
        assert!(!dir.is_zero);
        let mut expected = q;
        math::normalize(&mut expected, 1e-12);
        assert!(math::distance(&dir.vector, &expected) < 1e-12);
    }

    #[test]
    fn at_support_flags_zero_gradient() {
        let q = vec![1.0, 2.0, 3.0, 4.0];
        let field = single_support_field(4, q.clone(), 1.0);
        let dir = field.field_at(&SemanticCode { values: q }).unwrap();
        assert!(dir.is_zero);
        assert!(dir.vector.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn field_matches_finite_difference_gradient() {
        // oracle: central differences of the potential at 50 random points
        let mut rng = Rng::seed_from(17);
        let d_s = 6;
        let field = WarpingField::random(d_s, 8, &mut rng).unwrap();
        for _ in 0..50 {
            let s: Vec<f64> = (0..d_s).map(|_| 2.0 * rng.next_normal()).collect();
            let analytic = field.raw_gradient(&s);
            let h = 1e-5;
            let mut fd = vec![0.0; d_s];
            for i in 0..d_s {
                let mut plus = s.clone();
                plus[i] += h;
                let mut minus = s.clone();
                minus[i] -= h;
                fd[i] = (field.potential(&plus) - field.potential(&minus)) / (2.0 * h);
            }
            let scale = math::norm(&fd).max(1e-9);
            assert!(
                math::distance(&analytic, &fd) / scale < 1e-5,
                "gradient mismatch at {s:?}"
            );
        }
    }

    #[test]
    fn traverse_validates_policy() {
        let field = single_support_field(4, vec![1.0; 4], 1.0);
        let s = SemanticCode { values: vec![0.0; 4] };
        let mut rng = Rng::seed_from(0);
        let bad = TraversalPolicy {
            epsilon: 0.1,
            steps_min: 0,
            steps_max: 0,
            direction: TraversalDirection::TowardPositive,
        };
        assert!(traverse(&s, &field, &bad, 6.0, &mut rng).is_err());
        let bad_eps = TraversalPolicy {
            epsilon: 0.0,
            steps_min: 1,
            steps_max: 2,
            direction: TraversalDirection::TowardPositive,
        };
        assert!(traverse(&s, &field, &bad_eps, 6.0, &mut rng).is_err());
    }

    #[test]
    fn tiny_steps_stay_near_start() {
        let mut rng = Rng::seed_from(1);
        let field = WarpingField::random(4, 4, &mut rng).unwrap();
        let s = SemanticCode {
            values: vec![0.3, -0.2, 0.1, 0.4],
        };
        let policy = TraversalPolicy {
            epsilon: 1e-6,
            steps_min: 3,
            steps_max: 8,
            direction: TraversalDirection::TowardPositive,
        };
        let t = traverse(&s, &field, &policy, 6.0, &mut rng).unwrap();
        assert!(t.steps_used >= 3 && t.steps_used <= 8);
        let moved = math::distance(&t.code.values, &s.values);
        assert!(moved <= t.steps_used as f64 * policy.epsilon + 1e-15);
    }

    #[test]
    fn positive_traversal_approaches_single_support() {
        let q = vec![3.0, 0.0, 0.0, 0.0];
        let field = single_support_field(4, q.clone(), 1.0);
        let mut code = SemanticCode {
            values: vec![-2.0, 0.0, 0.0, 0.0],
        };
        let policy = TraversalPolicy {
            epsilon: 0.1,
            steps_min: 1,
            steps_max: 1,
            direction: TraversalDirection::TowardPositive,
        };
        let mut dist = math::distance(&code.values, &q);
        let mut rng = Rng::seed_from(2);
        for _ in 0..20 {
            let t = traverse(&code, &field, &policy, 6.0, &mut rng).unwrap();
            code = t.code;
            let now = math::distance(&code.values, &q);
            assert!(now < dist, "distance should shrink: {now} vs {dist}");
            dist = now;
        }
    }

    #[test]
    fn traversal_is_deterministic_and_within_step_range() {
        let mut rng_init = Rng::seed_from(3);
        let field = WarpingField::random(6, 5, &mut rng_init).unwrap();
        let s = SemanticCode {
            values: vec![0.5; 6],
        };
        let policy = TraversalPolicy {
            epsilon: 0.2,
            steps_min: 2,
            steps_max: 7,
            direction: TraversalDirection::TowardNegative,
        };
        let a = traverse(&s, &field, &policy, 6.0, &mut Rng::seed_from(9)).unwrap();
        let b = traverse(&s, &field, &policy, 6.0, &mut Rng::seed_from(9)).unwrap();
        assert_eq!(a, b);
        assert!((2..=7).contains(&a.steps_used));
    }

    fn tiny_fixture(k: usize) -> (WorldSpec, ImageEncoder, Vec<SemanticDipole>, f64) {
        let world = WorldSpec::build(&WorldConfig {
            d_s: 4,
            d_x: 6,
            num_attributes: 1,
            noise_std: 0.0,
            seed: 7,
            ..WorldConfig::default()
        })
        .unwrap();
        let encoder = ImageEncoder::build(world.d_x, 5, 7).unwrap();
        let indices: Vec<usize> = if k == 1 { vec![1] } else { vec![0, 1] };
        let dipoles = make_dipoles(&world, &encoder, &indices, 3.0, &[]).unwrap();
        let gamma = crate::embedding::median_heuristic_gamma(&dipoles);
        (world, encoder, dipoles, gamma)
    }

    #[test]
    fn contrastive_gradients_match_finite_differences() {
        // exercises the analytic chain with K = 2 on a d_s = 4 world
        let (world, encoder, dipoles, gamma) = tiny_fixture(2);
        let mut rng = Rng::seed_from(11);
        let mut fields = vec![
            WarpingField::random(4, 3, &mut rng).unwrap(),
            WarpingField::random(4, 3, &mut rng).unwrap(),
        ];
        let codes: Vec<SemanticCode> = (0..8).map(|_| world.sample_code(&mut rng)).collect();
        let loss_of = |fields: &[WarpingField]| -> f64 {
            contrastive_batch_loss(
                fields, &dipoles, &world, &encoder, gamma, &codes, 0.2, 0.1, None,
            )
            .unwrap()
            .0
        };
        let mut grads: Vec<FieldGradient> =
            fields.iter().map(FieldGradient::zeros_like).collect();
        let (_, skipped) = contrastive_batch_loss(
            &fields,
            &dipoles,
            &world,
            &encoder,
            gamma,
            &codes,
            0.2,
            0.1,
            Some(&mut grads),
        )
        .unwrap();
        assert_eq!(skipped, 0);

        let h = 1e-5;
        let mut checked = 0usize;
        'outer: for k in 0..2 {
            for i in 0..fields[k].weights.len() {
                let orig = fields[k].weights[i];
                fields[k].weights[i] = orig + h;
                let up = loss_of(&fields);
                fields[k].weights[i] = orig - h;
                let down = loss_of(&fields);
                fields[k].weights[i] = orig;
                let fd = (up - down) / (2.0 * h);
                let analytic = grads[k].weights[i];
                let denom = fd.abs().max(analytic.abs()).max(1e-6);
                assert!(
                    (analytic - fd).abs() / denom < 1e-3,
                    "weight grad field {k} support {i}: {analytic} vs {fd}"
                );
                checked += 1;
                if checked >= 20 {
                    break 'outer;
                }
                let d = i % fields[k].dim();
                let orig = fields[k].supports[i][d];
                fields[k].supports[i][d] = orig + h;
                let up = loss_of(&fields);
                fields[k].supports[i][d] = orig - h;
                let down = loss_of(&fields);
                fields[k].supports[i][d] = orig;
                let fd = (up - down) / (2.0 * h);
                let analytic = grads[k].supports[i][d];
                let denom = fd.abs().max(analytic.abs()).max(1e-6);
                assert!(
                    (analytic - fd).abs() / denom < 1e-3,
                    "support grad field {k} support {i} dim {d}: {analytic} vs {fd}"
                );
                checked += 1;
                if checked >= 20 {
                    break 'outer;
                }
            }
        }
        assert!(checked >= 10, "too few coordinates checked");
    }

    #[test]
    fn single_dipole_training_aligns_motion() {
        let (world, encoder, dipoles, gamma) = tiny_fixture(1);
        let mut rng = Rng::seed_from(13);
        let mut fields = vec![WarpingField::random(world.d_s, 6, &mut rng).unwrap()];
        let cfg = PathTrainingConfig {
            epochs: 30,
            minibatch: 32,
            learning_rate: 0.05,
            training_codes: 256,
            seed: 13,
            ..PathTrainingConfig::default()
        };
        let world_ref = world.clone();
        let outcome = train_paths(
            &mut fields,
            &dipoles,
            &world,
            &encoder,
            gamma,
            &cfg,
            &mut |rng| world_ref.sample_code(rng),
        )
        .unwrap();
        assert_eq!(outcome.loss_trace.len(), 30);

        let mut eval_rng = Rng::seed_from(1000);
        let held_out: Vec<SemanticCode> =
            (0..1000).map(|_| world.sample_code(&mut eval_rng)).collect();
        let matrix = mean_cosine_matrix(
            &fields, &dipoles, &world, &encoder, gamma, &held_out, 0.2,
        )
        .unwrap();
        assert!(matrix[0][0] > 0.5, "mean alignment {}", matrix[0][0]);
    }

    #[test]
    fn two_dipole_training_beats_untrained_margins() {
        let world = WorldSpec::build(&WorldConfig {
            d_s: 8,
            d_x: 12,
            num_attributes: 1,
            noise_std: 0.0,
            seed: 19,
            ..WorldConfig::default()
        })
        .unwrap();
        let encoder = ImageEncoder::build(world.d_x, 8, 19).unwrap();
        let dipoles = make_dipoles(&world, &encoder, &[0, 1], 3.0, &[]).unwrap();
        let gamma = crate::embedding::median_heuristic_gamma(&dipoles);

        let mut rng = Rng::seed_from(23);
        let mut fields = vec![
            WarpingField::random(world.d_s, 8, &mut rng).unwrap(),
            WarpingField::random(world.d_s, 8, &mut rng).unwrap(),
        ];

        let mut eval_rng = Rng::seed_from(555);
        let held_out: Vec<SemanticCode> =
            (0..500).map(|_| world.sample_code(&mut eval_rng)).collect();
        let pre = mean_cosine_matrix(
            &fields, &dipoles, &world, &encoder, gamma, &held_out, 0.2,
        )
        .unwrap();
        let pre_margins = alignment_margins(&pre);

        let cfg = PathTrainingConfig {
            epochs: 40,
            minibatch: 32,
            learning_rate: 0.05,
            training_codes: 384,
            seed: 23,
            ..PathTrainingConfig::default()
        };
        let world_ref = world.clone();
        train_paths(
            &mut fields,
            &dipoles,
            &world,
            &encoder,
            gamma,
            &cfg,
            &mut |rng| world_ref.sample_code(rng),
        )
        .unwrap();

        let post = mean_cosine_matrix(
            &fields, &dipoles, &world, &encoder, gamma, &held_out, 0.2,
        )
        .unwrap();
        let post_margins = alignment_margins(&post);
        for k in 0..2 {
            assert!(
                post_margins[k] > pre_margins[k],
                "field {k}: post {} <= pre {}",
                post_margins[k],
                pre_margins[k]
            );
            assert!(
                post_margins[k] >= 0.2,
                "field {k} margin {}",
                post_margins[k]
            );
        }
    }

    #[test]
    fn loss_trace_moving_average_non_increasing() {
        let (world, encoder, dipoles, gamma) = tiny_fixture(2);
        let mut rng = Rng::seed_from(29);
        let mut fields = vec![
            WarpingField::random(world.d_s, 6, &mut rng).unwrap(),
            WarpingField::random(world.d_s, 6, &mut rng).unwrap(),
        ];
        let cfg = PathTrainingConfig {
            epochs: 25,
            minibatch: 32,
            learning_rate: 0.03,
            training_codes: 256,
            seed: 29,
            ..PathTrainingConfig::default()
        };
        let world_ref = world.clone();
        let outcome = train_paths(
            &mut fields,
            &dipoles,
            &world,
            &encoder,
            gamma,
            &cfg,
            &mut |rng| world_ref.sample_code(rng),
        )
        .unwrap();
        let trace = &outcome.loss_trace;
        let window = 5;
        let avg = |i: usize| -> f64 { trace[i..i + window].iter().sum::<f64>() / window as f64 };
        for i in 0..trace.len() - window {
            assert!(
                avg(i + 1) <= avg(i) + 1e-6,
                "moving average increased at epoch {i}: {} -> {}",
                avg(i),
                avg(i + 1)
            );
        }
    }
}
