//! Small dense vector helpers shared by the numeric modules.
//!
//! Transcendental functions go through `libm` unconditionally so that std
//! and no_std builds of this crate produce identical bit streams.

use alloc::vec;
use alloc::vec::Vec;

pub use libm::{exp, fabs, log, pow, sqrt, tanh};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    sqrt(dot(a, a))
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    sqrt(squared_distance(a, b))
}

/// a + s*b, elementwise.
pub fn axpy(s: f64, b: &[f64], a: &mut [f64]) {
    debug_assert_eq!(a.len(), b.len());
    for (ai, bi) in a.iter_mut().zip(b) {
        *ai += s * bi;
    }
}

pub fn scale(a: &mut [f64], s: f64) {
    for ai in a.iter_mut() {
        *ai *= s;
    }
}

/// Normalize in place; returns the original norm. Vectors with norm below
/// `eps` are left untouched and report 0.0 so callers can flag degeneracy.
pub fn normalize(a: &mut [f64], eps: f64) -> f64 {
    let n = norm(a);
    if n < eps {
        return 0.0;
    }
    scale(a, 1.0 / n);
    n
}

/// Cosine similarity; 0.0 when either vector is numerically zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = norm(a);
    let nb = norm(b);
    if na < 1e-300 || nb < 1e-300 {
        return 0.0;
    }
    dot(a, b) / (na * nb)
}

/// Scale the vector back onto the ball of the given radius if it escaped.
pub fn clamp_to_ball(a: &mut [f64], radius: f64) {
    let n = norm(a);
    if n > radius {
        scale(a, radius / n);
    }
}

/// A unit direction, or a flagged zero vector where a gradient vanished.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldDirection {
    pub vector: Vec<f64>,
    pub is_zero: bool,
}

impl FieldDirection {
    /// Normalize a raw gradient; flags it as zero below `eps`.
    pub fn from_gradient(mut gradient: Vec<f64>, eps: f64) -> Self {
        let n = normalize(&mut gradient, eps);
        if n == 0.0 {
            gradient.iter_mut().for_each(|v| *v = 0.0);
            FieldDirection {
                vector: gradient,
                is_zero: true,
            }
        } else {
            FieldDirection {
                vector: gradient,
                is_zero: false,
            }
        }
    }
}

/// Dense row-major matrix with explicit shape, used for generator, encoder,
/// and classifier weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Matrix { rows, cols, data }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// y = M x
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|r| dot(self.row(r), x)).collect()
    }

    /// y = M^T x
    pub fn mul_vec_transposed(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.rows);
        let mut y = vec![0.0; self.cols];
        for r in 0..self.rows {
            let row = self.row(r);
            let xr = x[r];
            for c in 0..self.cols {
                y[c] += row[c] * xr;
            }
        }
        y
    }

    /// Spectral norm estimate by power iteration; upper-bounds motion of the
    /// linear part of any map built from this matrix.
    pub fn spectral_norm(&self, iterations: usize) -> f64 {
        if self.rows == 0 || self.cols == 0 {
            return 0.0;
        }
        let mut v = vec![1.0 / sqrt(self.cols as f64); self.cols];
        let mut sigma = 0.0;
        for _ in 0..iterations {
            let u = self.mul_vec(&v);
            let mut w = self.mul_vec_transposed(&u);
            let n = normalize(&mut w, 1e-300);
            if n == 0.0 {
                return 0.0;
            }
            v = w;
            sigma = sqrt(n);
        }
        sigma
    }
}
