//! Synthetic generative world: a seeded generator over a semantic space,
//! ground-truth attribute semantics, and bias-controlled dataset sampling.
//!
//! The world stands in for a pre-trained image generator. Codes live in a
//! `d_s`-dimensional semantic space; images are `d_x`-dimensional feature
//! vectors produced by a fixed random linear map followed by a bounded
//! smooth squashing. Each attribute (and the protected characteristic) is a
//! half-space indicator in semantic space, so every sampled dataset has an
//! exact labeling oracle.

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use crate::math::{self, Matrix};
use crate::rng::{streams, Rng};
use crate::{CoreError, Result};

/// A point in the generator's semantic space.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticCode {
    pub values: Vec<f64>,
}

/// A generated feature vector standing in for an image.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureImage {
    pub values: Vec<f64>,
}

/// Where a labeled sample came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Origin {
    Real,
    Synthetic,
    Augmented,
}

/// A feature vector with task-attribute labels and a protected label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub image: FeatureImage,
    pub attributes: Vec<bool>,
    pub protected: bool,
    pub origin: Origin,
}

/// Scalar knobs from which a [`WorldSpec`] is built deterministically.
#[derive(Debug, Clone)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct WorldConfig {
    /// Semantic space dimension.
    pub d_s: usize,
    /// Feature (image) space dimension.
    pub d_x: usize,
    /// Number of task attributes; the world carries one extra protected
    /// characteristic direction at index `num_attributes`.
    pub num_attributes: usize,
    /// Per-direction decision thresholds; empty means all zero.
    pub thresholds: Vec<f64>,
    /// Scale of the bounded nonlinearity; larger is closer to linear.
    pub saturation: f64,
    /// Observation noise added to real-dataset images (not to generated pools).
    pub noise_std: f64,
    /// Codes are clamped back onto the ball of this radius.
    pub box_radius: f64,
    /// How strongly the protected characteristic imprints on the image
    /// relative to other semantic directions. Values above 1 model globally
    /// salient characteristics; the generator's mixing map is scaled along
    /// the protected direction by this factor at construction.
    pub protected_salience: f64,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            d_s: 16,
            d_x: 32,
            num_attributes: 4,
            thresholds: Vec::new(),
            saturation: 3.0,
            noise_std: 0.25,
            box_radius: 6.0,
            protected_salience: 1.0,
            seed: 0,
        }
    }
}

/// The fully constructed world: attribute geometry plus the generator map.
#[derive(Debug, Clone)]
pub struct WorldSpec {
    pub d_s: usize,
    pub d_x: usize,
    /// M task-attribute directions followed by the protected direction.
    pub attribute_directions: Vec<Vec<f64>>,
    pub attribute_thresholds: Vec<f64>,
    /// Linear part of the generator map.
    pub generator_weights: Matrix,
    /// Additive offset applied before the nonlinearity.
    pub generator_offset: Vec<f64>,
    pub saturation: f64,
    pub noise_std: f64,
    pub box_radius: f64,
    pub seed: u64,
}

/// Directions are re-drawn until every pair satisfies this separation.
const MAX_PAIRWISE_COSINE: f64 = 0.5;

impl WorldSpec {
    /// Build the world from its scalar configuration. Attribute directions
    /// are unit vectors drawn by rejection so that every pairwise |cosine|
    /// stays at or below 0.5; if rejection stalls the candidate is
    /// orthogonalized against the accepted set instead.
    pub fn build(cfg: &WorldConfig) -> Result<Self> {
        if cfg.d_s == 0 || cfg.d_x == 0 {
            return Err(CoreError::InvalidConfig("dimensions must be positive".to_string()));
        }
        if cfg.num_attributes == 0 {
            return Err(CoreError::InvalidConfig(
                "need at least one task attribute".to_string(),
            ));
        }
        if cfg.saturation <= 0.0 {
            return Err(CoreError::InvalidConfig("saturation must be > 0".to_string()));
        }
        if cfg.noise_std < 0.0 {
            return Err(CoreError::InvalidConfig("noise_std must be >= 0".to_string()));
        }
        if cfg.box_radius <= 0.0 {
            return Err(CoreError::InvalidConfig("box_radius must be > 0".to_string()));
        }
        if cfg.protected_salience <= 0.0 {
            return Err(CoreError::InvalidConfig(
                "protected_salience must be > 0".to_string(),
            ));
        }
        let k = cfg.num_attributes + 1;
        let thresholds = if cfg.thresholds.is_empty() {
            vec![0.0; k]
        } else if cfg.thresholds.len() == k {
            cfg.thresholds.clone()
        } else {
            return Err(CoreError::InvalidConfig(format!(
                "expected {k} thresholds, got {}",
                cfg.thresholds.len()
            )));
        };

        let mut rng = Rng::substream(cfg.seed, streams::WORLD);
        let mut directions: Vec<Vec<f64>> = Vec::with_capacity(k);
        for _ in 0..k {
            let dir = draw_separated_direction(&mut rng, cfg.d_s, &directions)?;
            directions.push(dir);
        }

        let scale = 1.0 / math::sqrt(cfg.d_s as f64);
        let mut generator_weights =
            Matrix::from_fn(cfg.d_x, cfg.d_s, |_, _| rng.next_normal() * scale);
        if cfg.protected_salience != 1.0 {
            // fold the salience into the mixing map: W <- W (I + (k-1) p p^T)
            let p = &directions[cfg.num_attributes];
            let gain = cfg.protected_salience - 1.0;
            for r in 0..generator_weights.rows {
                let row = generator_weights.row_mut(r);
                let proj = math::dot(row, p);
                math::axpy(gain * proj, p, row);
            }
        }

        Ok(WorldSpec {
            d_s: cfg.d_s,
            d_x: cfg.d_x,
            attribute_directions: directions,
            attribute_thresholds: thresholds,
            generator_weights,
            generator_offset: vec![0.0; cfg.d_x],
            saturation: cfg.saturation,
            noise_std: cfg.noise_std,
            box_radius: cfg.box_radius,
            seed: cfg.seed,
        })
    }

    pub fn num_attributes(&self) -> usize {
        self.attribute_directions.len() - 1
    }

    /// Index of the protected characteristic direction (the last one).
    pub fn protected_index(&self) -> usize {
        self.attribute_directions.len() - 1
    }

    /// Signed projection of a code onto direction `index`, minus threshold.
    pub fn margin(&self, code: &SemanticCode, index: usize) -> f64 {
        math::dot(&code.values, &self.attribute_directions[index])
            - self.attribute_thresholds[index]
    }

    /// Deterministic generator map: saturation * tanh((W s + b) / saturation).
    pub fn generate(&self, code: &SemanticCode) -> Result<FeatureImage> {
        if code.values.len() != self.d_s {
            return Err(CoreError::DimensionMismatch {
                expected: self.d_s,
                got: code.values.len(),
            });
        }
        let mut z = self.generator_weights.mul_vec(&code.values);
        for (zi, bi) in z.iter_mut().zip(&self.generator_offset) {
            *zi = self.saturation * math::tanh((*zi + bi) / self.saturation);
        }
        Ok(FeatureImage { values: z })
    }

    /// Jacobian-vector product of the generator at `code`: J_G(code) * v.
    pub fn generate_jvp(&self, code: &SemanticCode, v: &[f64]) -> Vec<f64> {
        let z = self.generator_weights.mul_vec(&code.values);
        let wv = self.generator_weights.mul_vec(v);
        z.iter()
            .zip(&self.generator_offset)
            .zip(wv)
            .map(|((zi, bi), wvi)| {
                let t = math::tanh((zi + bi) / self.saturation);
                (1.0 - t * t) * wvi
            })
            .collect()
    }

    /// Transposed Jacobian product of the generator: J_G(code)^T * u.
    pub fn generate_vjp(&self, code: &SemanticCode, u: &[f64]) -> Vec<f64> {
        let z = self.generator_weights.mul_vec(&code.values);
        let scaled: Vec<f64> = z
            .iter()
            .zip(&self.generator_offset)
            .zip(u)
            .map(|((zi, bi), ui)| {
                let t = math::tanh((zi + bi) / self.saturation);
                (1.0 - t * t) * ui
            })
            .collect();
        self.generator_weights.mul_vec_transposed(&scaled)
    }

    /// Upper bound on the generator's Lipschitz constant: the spectral norm
    /// of the linear part (the squashing has slope at most 1).
    pub fn lipschitz_bound(&self) -> f64 {
        self.generator_weights.spectral_norm(100)
    }

    /// Ground-truth labels of a code: one bit per task attribute plus the
    /// protected bit last. Strict inequality; a tie at the threshold is 0.
    pub fn ground_truth_labels(&self, code: &SemanticCode) -> Vec<bool> {
        assert_eq!(code.values.len(), self.d_s, "code dimension");
        (0..self.attribute_directions.len())
            .map(|j| self.margin(code, j) > 0.0)
            .collect()
    }

    /// Draw a code from the standard normal prior clamped to the box.
    pub fn sample_code(&self, rng: &mut Rng) -> SemanticCode {
        let mut values: Vec<f64> = (0..self.d_s).map(|_| rng.next_normal()).collect();
        math::clamp_to_ball(&mut values, self.box_radius);
        SemanticCode { values }
    }
}

fn draw_separated_direction(
    rng: &mut Rng,
    d_s: usize,
    accepted: &[Vec<f64>],
) -> Result<Vec<f64>> {
    const MAX_TRIES: usize = 10_000;
    for _ in 0..MAX_TRIES {
        let mut cand: Vec<f64> = (0..d_s).map(|_| rng.next_normal()).collect();
        if math::normalize(&mut cand, 1e-9) == 0.0 {
            continue;
        }
        let ok = accepted
            .iter()
            .all(|a| math::fabs(math::dot(a, &cand)) <= MAX_PAIRWISE_COSINE);
        if ok {
            return Ok(cand);
        }
    }
    // Rejection stalled; orthogonalize a fresh draw against the accepted set.
    if accepted.len() >= d_s {
        return Err(CoreError::InvalidConfig(format!(
            "cannot place {} separated directions in {d_s} dimensions",
            accepted.len() + 1
        )));
    }
    let mut cand: Vec<f64> = (0..d_s).map(|_| rng.next_normal()).collect();
    for a in accepted {
        let c = math::dot(a, &cand);
        math::axpy(-c, a, &mut cand);
    }
    if math::normalize(&mut cand, 1e-9) == 0.0 {
        return Err(CoreError::InvalidConfig(
            "degenerate direction after orthogonalization".to_string(),
        ));
    }
    Ok(cand)
}

/// How a sampled dataset correlates one task attribute with the protected
/// characteristic, and how imbalanced the protected groups are.
#[derive(Debug, Clone, Copy)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BiasSpec {
    /// Which task attribute the correlation applies to.
    pub attribute_index: usize,
    /// Pearson correlation between the attribute and protected labels.
    pub correlation: f64,
    /// Fraction of protected=1 samples.
    pub group_imbalance: f64,
}

impl BiasSpec {
    pub fn validate(&self, world: &WorldSpec) -> Result<()> {
        if self.attribute_index >= world.num_attributes() {
            return Err(CoreError::DirectionOutOfRange {
                index: self.attribute_index,
                count: world.num_attributes(),
            });
        }
        if !(-1.0..=1.0).contains(&self.correlation) {
            return Err(CoreError::InvalidConfig(format!(
                "correlation {} outside [-1, 1]",
                self.correlation
            )));
        }
        if !(self.group_imbalance > 0.0 && self.group_imbalance < 1.0) {
            return Err(CoreError::InvalidConfig(format!(
                "group_imbalance {} outside (0, 1)",
                self.group_imbalance
            )));
        }
        Ok(())
    }
}

/// Joint label-cell probabilities indexed by [attribute value][protected value].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellProbs {
    pub p: [[f64; 2]; 2],
}

fn validate_rho_pi(rho: f64, pi: f64) -> Result<()> {
    if !(-1.0..=1.0).contains(&rho) {
        return Err(CoreError::InvalidConfig(format!("correlation {rho} outside [-1, 1]")));
    }
    if !(pi > 0.0 && pi < 1.0) {
        return Err(CoreError::InvalidConfig(format!("group fraction {pi} outside (0, 1)")));
    }
    Ok(())
}

/// Solve the 2x2 cell distribution realizing the requested Pearson
/// correlation and protected marginal. The attribute marginal is the
/// remaining degree of freedom: it interpolates from 1/2 at zero
/// correlation toward the value that makes |rho| = 1 attainable, falling
/// back to that endpoint exactly when the interpolated table would violate
/// the Frechet bounds.
pub fn solve_cell_probs(rho: f64, pi: f64) -> Result<CellProbs> {
    validate_rho_pi(rho, pi)?;
    let endpoint = if rho >= 0.0 { pi } else { 1.0 - pi };
    let abs_rho = math::fabs(rho);
    for p_a in [0.5 * (1.0 - abs_rho) + abs_rho * endpoint, endpoint] {
        if let Some(cells) = table_for_marginals(rho, pi, p_a) {
            return Ok(cells);
        }
    }
    Err(CoreError::InfeasibleBias(format!(
        "no 2x2 table with correlation {rho} and protected fraction {pi}"
    )))
}

/// Same solve with the attribute marginal pinned by the caller. Errors when
/// the three requested moments violate the Frechet bounds.
pub fn solve_cell_probs_with_marginal(rho: f64, pi: f64, p_a: f64) -> Result<CellProbs> {
    validate_rho_pi(rho, pi)?;
    if !(p_a > 0.0 && p_a < 1.0) {
        return Err(CoreError::InvalidConfig(format!(
            "attribute marginal {p_a} outside (0, 1)"
        )));
    }
    table_for_marginals(rho, pi, p_a).ok_or_else(|| {
        CoreError::InfeasibleBias(format!(
            "no 2x2 table with correlation {rho}, protected fraction {pi}, attribute marginal {p_a}"
        ))
    })
}

fn table_for_marginals(rho: f64, pi: f64, p_a: f64) -> Option<CellProbs> {
    if !(p_a > 0.0 && p_a < 1.0) {
        return None;
    }
    let cov = rho * math::sqrt(p_a * (1.0 - p_a) * pi * (1.0 - pi));
    let p11 = p_a * pi + cov;
    let p10 = p_a - p11;
    let p01 = pi - p11;
    let p00 = 1.0 - p11 - p10 - p01;
    let cells = [p00, p01, p10, p11];
    if cells.iter().any(|&c| c < -1e-12) {
        return None;
    }
    let clamp = |c: f64| if c < 0.0 { 0.0 } else { c };
    Some(CellProbs {
        p: [[clamp(p00), clamp(p01)], [clamp(p10), clamp(p11)]],
    })
}

/// Exact per-cell counts for n samples via largest-remainder rounding.
fn cell_counts(n: usize, probs: &CellProbs) -> [usize; 4] {
    let flat = [probs.p[0][0], probs.p[0][1], probs.p[1][0], probs.p[1][1]];
    let mut counts = [0usize; 4];
    let mut fractional: Vec<(usize, f64)> = Vec::with_capacity(4);
    let mut assigned = 0usize;
    for (i, &p) in flat.iter().enumerate() {
        let exact = p * n as f64;
        let base = exact as usize;
        counts[i] = base;
        assigned += base;
        fractional.push((i, exact - base as f64));
    }
    fractional.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let mut remaining = n - assigned;
    for (i, _) in fractional {
        if remaining == 0 {
            break;
        }
        counts[i] += 1;
        remaining -= 1;
    }
    counts
}

/// Rejection-sample a code whose (attribute, protected) ground-truth labels
/// match the requested cell.
fn sample_code_in_cell(
    world: &WorldSpec,
    attribute_index: usize,
    want_a: bool,
    want_p: bool,
    rng: &mut Rng,
) -> Result<SemanticCode> {
    const MAX_TRIES: usize = 1_000_000;
    let prot = world.protected_index();
    for _ in 0..MAX_TRIES {
        let code = world.sample_code(rng);
        let a = world.margin(&code, attribute_index) > 0.0;
        let p = world.margin(&code, prot) > 0.0;
        if a == want_a && p == want_p {
            return Ok(code);
        }
    }
    Err(CoreError::InfeasibleBias(format!(
        "cell (attribute={want_a}, protected={want_p}) has vanishing mass"
    )))
}

/// Sample a labeled dataset from an explicit cell distribution, keeping the
/// codes. Cell counts are exact (largest-remainder), so empirical moments
/// deviate from the distribution only by rounding.
pub fn sample_dataset_from_cells(
    n: usize,
    attribute_index: usize,
    probs: &CellProbs,
    world: &WorldSpec,
    seed: u64,
) -> Result<Vec<(SemanticCode, LabeledSample)>> {
    if n == 0 {
        return Err(CoreError::InvalidConfig("dataset size must be >= 1".to_string()));
    }
    if attribute_index >= world.num_attributes() {
        return Err(CoreError::DirectionOutOfRange {
            index: attribute_index,
            count: world.num_attributes(),
        });
    }
    let counts = cell_counts(n, probs);

    let mut rng = Rng::substream(seed, streams::REAL_DATASET);
    let mut cells: Vec<u8> = Vec::with_capacity(n);
    for (cell, &count) in counts.iter().enumerate() {
        cells.extend(core::iter::repeat_n(cell as u8, count));
    }
    rng.shuffle(&mut cells);

    let mut out = Vec::with_capacity(n);
    for cell in cells {
        let want_a = cell >= 2;
        let want_p = cell % 2 == 1;
        let code = sample_code_in_cell(world, attribute_index, want_a, want_p, &mut rng)?;
        let mut image = world.generate(&code)?;
        if world.noise_std > 0.0 {
            for v in image.values.iter_mut() {
                *v += world.noise_std * rng.next_normal();
            }
        }
        let labels = world.ground_truth_labels(&code);
        let (attrs, prot) = labels.split_at(world.num_attributes());
        out.push((
            code,
            LabeledSample {
                image,
                attributes: attrs.to_vec(),
                protected: prot[0],
                origin: Origin::Real,
            },
        ));
    }
    Ok(out)
}

/// Sample a biased labeled dataset along with the codes that produced it.
pub fn sample_real_dataset_with_codes(
    n: usize,
    bias: &BiasSpec,
    world: &WorldSpec,
    seed: u64,
) -> Result<Vec<(SemanticCode, LabeledSample)>> {
    bias.validate(world)?;
    let probs = solve_cell_probs(bias.correlation, bias.group_imbalance)?;
    sample_dataset_from_cells(n, bias.attribute_index, &probs, world, seed)
}

/// Sample a biased labeled dataset (codes discarded, as for real images).
pub fn sample_real_dataset(
    n: usize,
    bias: &BiasSpec,
    world: &WorldSpec,
    seed: u64,
) -> Result<Vec<LabeledSample>> {
    Ok(sample_real_dataset_with_codes(n, bias, world, seed)?
        .into_iter()
        .map(|(_, s)| s)
        .collect())
}

/// Sample the synthetic pool: codes kept alongside their exact generated
/// images (no observation noise), unlabeled until pseudo-labeling.
pub fn sample_synthetic_pool(
    n: usize,
    pool_bias: &BiasSpec,
    world: &WorldSpec,
    seed: u64,
) -> Result<Vec<(SemanticCode, FeatureImage)>> {
    let probs = solve_cell_probs(pool_bias.correlation, pool_bias.group_imbalance)?;
    sample_synthetic_pool_from_cells(n, pool_bias, &probs, world, seed)
}

/// Pool sampling with an explicit cell distribution, for pools whose
/// attribute mixture differs from the solver's default marginal.
pub fn sample_synthetic_pool_from_cells(
    n: usize,
    pool_bias: &BiasSpec,
    probs: &CellProbs,
    world: &WorldSpec,
    seed: u64,
) -> Result<Vec<(SemanticCode, FeatureImage)>> {
    if n == 0 {
        return Err(CoreError::InvalidConfig("pool size must be >= 1".to_string()));
    }
    pool_bias.validate(world)?;
    let counts = cell_counts(n, probs);

    let mut rng = Rng::substream(seed, streams::POOL);
    let mut cells: Vec<u8> = Vec::with_capacity(n);
    for (cell, &count) in counts.iter().enumerate() {
        cells.extend(core::iter::repeat_n(cell as u8, count));
    }
    rng.shuffle(&mut cells);

    let mut out = Vec::with_capacity(n);
    for cell in cells {
        let want_a = cell >= 2;
        let want_p = cell % 2 == 1;
        let code =
            sample_code_in_cell(world, pool_bias.attribute_index, want_a, want_p, &mut rng)?;
        let image = world.generate(&code)?;
        out.push((code, image));
    }
    Ok(out)
}
