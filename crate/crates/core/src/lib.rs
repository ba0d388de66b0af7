//! Semi-supervised learning to rank.
//!
//! The pipeline: a committee of MLP rankers trained with different ranking
//! losses pseudo-labels unlabeled queries; a denoising self-attentive
//! autoencoder is pre-trained on the combined set with a joint
//! reconstruction + ranking objective; its representations are lifted by
//! random Fourier features into a wide space where the final ranker is
//! trained.

pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod numerics;
pub mod pretrain;
pub mod pseudo_label;
pub mod rff_ranker;
pub mod scorer;

pub use error::{Error, Result};

/// Seeded generator used everywhere randomness is needed.
pub type Rng = rand_chacha::ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}

/// Derives an independent stream seed from a base seed and a tag.
pub fn derive_seed(base: u64, tag: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = base ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
