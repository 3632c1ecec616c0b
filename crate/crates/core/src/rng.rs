//! Deterministic, splittable randomness.
//!
//! Every random choice in a decode session comes from a [`Rng`] derived from the
//! session seed by a fixed label path, so two decoders that ask for the same
//! label path see the same draws regardless of what else they consumed.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Stream labels used by decode sessions.
pub mod label {
    pub const TARGET: u64 = 0x7461_7267;
    pub const DRAFT_WINDOW: u64 = 0x6472_6166;
    pub const BRANCH: u64 = 0x6272_6e63;
    pub const TOP_UP: u64 = 0x746f_7075;
    pub const KEEP: u64 = 0x6b65_6570;
}

/// SplitMix64 finalizer; used only to combine keys.
pub(crate) fn mix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

pub(crate) fn combine(seed: u64, label: u64) -> u64 {
    mix64(seed ^ mix64(label).rotate_left(17))
}

/// Seeded random stream with a draw counter.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    draws: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            draws: 0,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of uniform draws consumed so far.
    pub fn draws(&self) -> u64 {
        self.draws
    }

    /// Child stream keyed by `(seed, label)`. Independent of how much of this
    /// stream has been consumed.
    pub fn child(&self, label: u64) -> Rng {
        Rng::new(combine(self.seed, label))
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.draws += 1;
        self.inner.gen::<f64>()
    }

    /// Uniform draw in `[-1, 1]`.
    pub fn symmetric(&mut self) -> f64 {
        self.draws += 1;
        self.inner.gen_range(-1.0..=1.0)
    }
}

/// Position-keyed stream factory for one decode session.
///
/// Target draws are keyed by absolute sequence position, so every decoding
/// algorithm that commits the same prefix samples the same target token at
/// the next position.
#[derive(Debug, Clone, Copy)]
pub struct SessionStreams {
    root: u64,
}

impl SessionStreams {
    pub fn new(seed: u64) -> Self {
        Self { root: seed }
    }

    pub fn seed(&self) -> u64 {
        self.root
    }

    fn base(&self) -> Rng {
        Rng::new(self.root)
    }

    pub fn target(&self, position: usize) -> Rng {
        self.base().child(label::TARGET).child(position as u64)
    }

    /// Draft stream for a fresh window starting at `position`.
    pub fn draft_window(&self, position: usize) -> Rng {
        self.base().child(label::DRAFT_WINDOW).child(position as u64)
    }

    /// Stream for branch `index` of the tree built at `position`.
    pub fn branch(&self, position: usize, index: usize) -> Rng {
        self.base()
            .child(label::BRANCH)
            .child(position as u64)
            .child(index as u64)
    }

    /// Stream used to extend a reused continuation back to full window length.
    pub fn top_up(&self, position: usize) -> Rng {
        self.base().child(label::TOP_UP).child(position as u64)
    }
}
