//! Closed-loop recommender simulation.
//!
//! A biased matrix-factorization recommender is fitted to a rating corpus,
//! its top-k recommendations are appended back into the corpus as accepted
//! ratings, and the model is refitted, epoch after epoch. Content diversity
//! of what gets recommended is measured in tag-genome space. Supporting
//! modules map tags onto a self-organizing map for visual footprints, and
//! probe whether a single user can raise their own recommendation diversity
//! by editing their ratings.

pub mod dataset;
pub mod diversity;
pub mod error;
pub mod escape;
pub mod par;
pub mod recommender;
pub mod simulator;
pub mod somviz;
pub mod synthetic;

pub use error::{Error, Result};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The crate-wide deterministic RNG.
pub type Rng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mixes a base seed with a stream label so derived streams do not collide.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
