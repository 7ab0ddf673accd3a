//! Seeded pseudo-random number generation.
//!
//! The whole pipeline must reproduce bit-for-bit from (config, seed), so the
//! generator is owned by this crate rather than borrowed from an external
//! dependency whose stream might change between versions. State mixing is
//! splitmix64, the stream generator is xoshiro256++.

/// splitmix64 step; used to expand seeds and to derive named substreams.
#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a parent seed and a stream tag.
///
/// Each pipeline stage (world geometry, real dataset, pool, labeler, paths,
/// training, ...) draws from its own stream so that changing one stage's
/// consumption never perturbs another.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut s = seed ^ stream.wrapping_mul(0xd1342543de82ef95);
    let a = splitmix64(&mut s);
    splitmix64(&mut s) ^ a.rotate_left(23)
}

/// xoshiro256++ generator with convenience samplers.
#[derive(Debug, Clone)]
pub struct Rng {
    state: [u64; 4],
    spare_normal: Option<f64>,
}

impl Rng {
    /// Seed the full 256-bit state from a single u64 via splitmix64.
    pub fn seed_from(seed: u64) -> Self {
        let mut sm = seed;
        let state = [
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
        ];
        Rng {
            state,
            spare_normal: None,
        }
    }

    /// A generator for the given named substream of this seed.
    pub fn substream(seed: u64, stream: u64) -> Self {
        Rng::seed_from(derive_seed(seed, stream))
    }

    pub fn next_u64(&mut self) -> u64 {
        let s = &mut self.state;
        let result = s[0]
            .wrapping_add(s[3])
            .rotate_left(23)
            .wrapping_add(s[0]);
        let t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = s[3].rotate_left(45);
        result
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in [0, n). n must be nonzero.
    pub fn next_below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // multiply-shift; bias is < 2^-64 per draw, irrelevant here
        (((self.next_u64() as u128) * (n as u128)) >> 64) as usize
    }

    /// Uniform integer in [lo, hi] inclusive.
    pub fn next_in_range(&mut self, lo: usize, hi: usize) -> usize {
        debug_assert!(lo <= hi);
        lo + self.next_below(hi - lo + 1)
    }

    /// Standard normal via Box-Muller; the second value of each pair is cached.
    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        // u in (0,1] so the log is finite
        let u = 1.0 - self.next_f64();
        let v = self.next_f64();
        let r = libm::sqrt(-2.0 * libm::log(u));
        let theta = 2.0 * core::f64::consts::PI * v;
        self.spare_normal = Some(r * libm::sin(theta));
        r * libm::cos(theta)
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_below(i + 1);
            items.swap(i, j);
        }
    }
}

/// Stream tags for the pipeline stages.
pub mod streams {
    pub const WORLD: u64 = 1;
    pub const REAL_DATASET: u64 = 2;
    pub const POOL: u64 = 3;
    pub const LABELER: u64 = 4;
    pub const PATH_INIT: u64 = 5;
    pub const PATH_TRAIN: u64 = 6;
    pub const BASELINE_TRAIN: u64 = 7;
    pub const FINETUNE_TRAIN: u64 = 8;
    pub const TEST_SET: u64 = 9;
    pub const AUGMENT: u64 = 10;
    pub const ENCODER: u64 = 11;
    pub const ABLATION: u64 = 12;
}
