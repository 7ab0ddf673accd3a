//! Core algorithms for desk-scale bias control on labeled datasets.
//!
//! The crate models the full loop: a seeded synthetic world that plays the
//! role of a pre-trained generator with ground-truth attribute semantics, a
//! surrogate vision-language embedding with semantic dipoles, trainable
//! RBF-warped traversal paths in the generator's semantic space, pseudo
//! labeling of a synthetic pool, quota planning and counter-bias sample
//! assembly, a small focal-loss classifier, and group-conditioned fairness
//! metrics.
//!
//! Everything is deterministic given explicit seeds. The crate is
//! `no_std`-compatible (`alloc` required); IO, file formats, and the
//! experiment harness live in the companion `vlbc-harness` crate.

#![cfg_attr(not(feature = "std"), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod classify;
pub mod control;
pub mod embedding;
pub mod error;
pub mod fairness;
pub mod math;
pub mod paths;
pub mod pseudo;
pub mod rng;
pub mod world;

pub use error::CoreError;
pub use rng::Rng;

/// Result alias used across the crate.
pub type Result<T> = core::result::Result<T, CoreError>;
