//! Surrogate vision-language space: an image encoder into a unit-sphere
//! embedding space and semantic dipoles whose two poles anchor a warping
//! potential.
//!
//! There is no real text tower at this scale; each dipole's poles are the
//! encoder images of two prototype features generated from codes at
//! +/- scale * direction, which grounds the "text" anchors in the same
//! embedding space an actual vision-language model would use. The prompt
//! strings ride along as metadata only.

use alloc::string::String;
use alloc::vec::Vec;

use crate::math::{self, Matrix};
use crate::rng::{streams, Rng};
use crate::world::{FeatureImage, SemanticCode, WorldSpec};
use crate::{CoreError, Result};

/// A point in the embedding space.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub values: Vec<f64>,
}

/// Deterministic map from feature space onto the unit sphere of the
/// embedding space: normalize(E x).
///
/// On the region where ||E x|| >= r the map is Lipschitz with constant
/// 2 * ||E||_2 / r; [`ImageEncoder::lipschitz_bound`] evaluates it.
#[derive(Debug, Clone)]
pub struct ImageEncoder {
    pub weights: Matrix,
    pub seed: u64,
}

impl ImageEncoder {
    /// Build a seeded random encoder mapping d_x features to d_e dimensions.
    /// When d_e <= d_x the rows are orthonormalized, so the map is a random
    /// partial isometry and distances distort only through the projection,
    /// not through row correlations.
    pub fn build(d_x: usize, d_e: usize, seed: u64) -> Result<Self> {
        if d_x == 0 || d_e == 0 {
            return Err(CoreError::InvalidConfig(
                alloc::string::ToString::to_string(&"encoder dimensions must be positive"),
            ));
        }
        let mut rng = Rng::substream(seed, streams::ENCODER);
        let scale = 1.0 / math::sqrt(d_x as f64);
        let mut weights = Matrix::from_fn(d_e, d_x, |_, _| rng.next_normal() * scale);
        if d_e <= d_x {
            for r in 0..d_e {
                for prev in 0..r {
                    let c = math::dot(weights.row(r), weights.row(prev));
                    let prev_row = weights.row(prev).to_vec();
                    math::axpy(-c, &prev_row, weights.row_mut(r));
                }
                if math::normalize(weights.row_mut(r), 1e-12) == 0.0 {
                    return Err(CoreError::InvalidConfig(
                        alloc::string::ToString::to_string(&"degenerate encoder row"),
                    ));
                }
            }
        }
        Ok(ImageEncoder { weights, seed })
    }

    pub fn dim(&self) -> usize {
        self.weights.rows
    }

    /// Encode an image; output has unit norm. A numerically zero pre-image
    /// falls back to the first basis vector so the map stays total.
    pub fn encode(&self, image: &FeatureImage) -> Result<Embedding> {
        if image.values.len() != self.weights.cols {
            return Err(CoreError::DimensionMismatch {
                expected: self.weights.cols,
                got: image.values.len(),
            });
        }
        let mut z = self.weights.mul_vec(&image.values);
        if math::normalize(&mut z, 1e-300) == 0.0 {
            z.iter_mut().for_each(|v| *v = 0.0);
            z[0] = 1.0;
        }
        Ok(Embedding { values: z })
    }

    /// Transposed Jacobian product of encode at `image`: J^T u where
    /// J = (I - e e^T) E / ||E x||.
    pub fn encode_vjp(&self, image: &FeatureImage, u: &[f64]) -> Vec<f64> {
        let z = self.weights.mul_vec(&image.values);
        let mut e = z.clone();
        let n = math::normalize(&mut e, 1e-300);
        if n == 0.0 {
            return alloc::vec![0.0; self.weights.cols];
        }
        let proj = math::dot(&e, u);
        let tangent: Vec<f64> = u
            .iter()
            .zip(&e)
            .map(|(ui, ei)| (ui - proj * ei) / n)
            .collect();
        self.weights.mul_vec_transposed(&tangent)
    }

    /// Lipschitz constant of the encoder on the region where the pre-image
    /// norm stays at or above `min_preimage_norm`.
    pub fn lipschitz_bound(&self, min_preimage_norm: f64) -> f64 {
        2.0 * self.weights.spectral_norm(100) / min_preimage_norm
    }

    /// Norm of E x, the quantity the Lipschitz region is conditioned on.
    pub fn preimage_norm(&self, image: &FeatureImage) -> f64 {
        math::norm(&self.weights.mul_vec(&image.values))
    }
}

/// Two opposed anchor embeddings with their prompt metadata.
#[derive(Debug, Clone)]
pub struct SemanticDipole {
    pub name: String,
    pub negative_pole: Embedding,
    pub positive_pole: Embedding,
    /// (negative prompt, positive prompt); metadata only.
    pub prompts: (String, String),
    /// Which world direction this dipole edits.
    pub direction_index: usize,
}

/// Rejection threshold: poles this aligned cannot define a direction.
const DEGENERATE_POLE_COSINE: f64 = 0.999;

/// Build one dipole per requested direction index. The negative pole is the
/// encoded prototype at -scale * direction, the positive pole at
/// +scale * direction.
pub fn make_dipoles(
    world: &WorldSpec,
    encoder: &ImageEncoder,
    direction_indices: &[usize],
    prototype_scale: f64,
    prompts: &[(String, String)],
) -> Result<Vec<SemanticDipole>> {
    if prototype_scale <= 0.0 {
        return Err(CoreError::InvalidConfig(
            alloc::string::ToString::to_string(&"prototype scale must be > 0"),
        ));
    }
    let mut out = Vec::with_capacity(direction_indices.len());
    for (i, &k) in direction_indices.iter().enumerate() {
        if k >= world.attribute_directions.len() {
            return Err(CoreError::DirectionOutOfRange {
                index: k,
                count: world.attribute_directions.len(),
            });
        }
        let dir = &world.attribute_directions[k];
        let proto = |sign: f64| -> Result<Embedding> {
            let values: Vec<f64> = dir.iter().map(|d| sign * prototype_scale * d).collect();
            let image = world.generate(&SemanticCode { values })?;
            encoder.encode(&image)
        };
        let negative_pole = proto(-1.0)?;
        let positive_pole = proto(1.0)?;
        let cos = math::dot(&negative_pole.values, &positive_pole.values);
        if cos > DEGENERATE_POLE_COSINE {
            return Err(CoreError::DegeneratePoles { cosine: cos });
        }
        let (neg_prompt, pos_prompt) = prompts
            .get(i)
            .cloned()
            .unwrap_or_else(|| (default_prompt(k, false), default_prompt(k, true)));
        out.push(SemanticDipole {
            name: alloc::format!("direction_{k}"),
            negative_pole,
            positive_pole,
            prompts: (neg_prompt, pos_prompt),
            direction_index: k,
        });
    }
    Ok(out)
}

fn default_prompt(k: usize, positive: bool) -> String {
    if positive {
        alloc::format!("a sample with characteristic {k}.")
    } else {
        alloc::format!("a sample without characteristic {k}.")
    }
}

/// Bandwidth default: 1 / (2 * median pairwise squared distance) over all
/// pole embeddings of the given dipoles.
pub fn median_heuristic_gamma(dipoles: &[SemanticDipole]) -> f64 {
    let mut poles: Vec<&[f64]> = Vec::new();
    for d in dipoles {
        poles.push(&d.negative_pole.values);
        poles.push(&d.positive_pole.values);
    }
    let mut sq: Vec<f64> = Vec::new();
    for i in 0..poles.len() {
        for j in (i + 1)..poles.len() {
            sq.push(math::squared_distance(poles[i], poles[j]));
        }
    }
    if sq.is_empty() {
        return 1.0;
    }
    sq.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = sq[sq.len() / 2];
    if median <= 0.0 {
        1.0
    } else {
        1.0 / (2.0 * median)
    }
}

pub use crate::math::FieldDirection;

/// Signed two-center potential of a dipole at an embedding point:
/// exp(-gamma ||e - pole+||^2) - exp(-gamma ||e - pole-||^2).
pub fn dipole_potential(dipole: &SemanticDipole, e: &Embedding, gamma: f64) -> f64 {
    let dp = math::squared_distance(&e.values, &dipole.positive_pole.values);
    let dn = math::squared_distance(&e.values, &dipole.negative_pole.values);
    math::exp(-gamma * dp) - math::exp(-gamma * dn)
}

/// Normalized gradient of [`dipole_potential`]: ascent toward the positive
/// pole, away from the negative pole. Returns a zero vector with the flag
/// set when the gradient is numerically zero (exact saddle).
pub fn dipole_field(dipole: &SemanticDipole, e: &Embedding, gamma: f64) -> Result<FieldDirection> {
    if gamma <= 0.0 {
        return Err(CoreError::InvalidConfig(
            alloc::string::ToString::to_string(&"gamma must be > 0"),
        ));
    }
    if e.values.len() != dipole.positive_pole.values.len() {
        return Err(CoreError::DimensionMismatch {
            expected: dipole.positive_pole.values.len(),
            got: e.values.len(),
        });
    }
    let wp = math::exp(-gamma * math::squared_distance(&e.values, &dipole.positive_pole.values));
    let wn = math::exp(-gamma * math::squared_distance(&e.values, &dipole.negative_pole.values));
    let grad: Vec<f64> = (0..e.values.len())
        .map(|i| {
            2.0 * gamma
                * ((dipole.positive_pole.values[i] - e.values[i]) * wp
                    - (dipole.negative_pole.values[i] - e.values[i]) * wn)
        })
        .collect();
    Ok(FieldDirection::from_gradient(grad, 1e-12))
}
