//! Granular-ball domain adversarial learning (GB-DAL) with simulated
//! non-causal factors (SNF), exercised end to end on a synthetic
//! biased-scene benchmark.
//!
//! The crate is organised around the training pipeline:
//!
//! - [`synthgen`] renders the benchmark: scenes whose object shape is the
//!   causal class factor while object color and background texture are
//!   non-causal, with controllable per-dataset bias.
//! - [`nnkit`] is a tiny deterministic detector surrogate (conv extractor,
//!   class + box heads, pixel-level domain classifier behind a gradient
//!   reversal layer) with exact reverse-mode gradients in `f64`.
//! - [`pgbs`] splits pooled features into K pseudo-domains: K-means,
//!   Hungarian matching against persistent prototypes, and EMA prototype
//!   updates keep domain labels consistent across iterations.
//! - [`dal`] holds the local/global domain cross-entropy losses and the
//!   total training loss.
//! - [`snf`] builds targeted single-step adversarial samples with random
//!   labels, used both as simulated non-causal factors and as augmentation.
//! - [`trainer`] runs the three-phase iteration (SNF simulation, domain
//!   alignment, supervised detection) with checkpointing and run records.
//! - [`evalkit`] scores checkpoints on held-out, adversarial and noisy
//!   splits, and drives ablations and hyperparameter sweeps.

pub mod dal;
pub mod error;
pub mod evalkit;
pub mod nnkit;
pub mod pgbs;
pub mod snf;
pub mod synthgen;
pub mod trainer;

pub use error::{Error, Result};

/// Mixes a 64-bit value into a well-distributed stream seed (splitmix64).
///
/// Used to derive independent deterministic RNG streams, e.g. one per
/// (run seed, epoch) pair for shuffling, without consuming the main stream.
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x9e37_79b9_7f4a_7c15;
    for &p in parts {
        let mut z = h ^ p.wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h = z ^ (z >> 31);
    }
    h
}
