//! Zero-shot stance detection from topic-masked contrastive features.
//!
//! The pipeline masks topical words of every sentence, learns
//! target-invariant sentence features from the masked text with a dropout
//! contrastive objective, fuses them with a joint target/text encoding
//! through retrieval attention, and classifies stance.

pub mod autodiff;
pub mod contrastive;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod fusion;
pub mod harness;
pub mod text;
pub mod topicmask;
pub mod training;

pub use error::{Error, Result};

/// Derives an independent seed for stream `stream` of a run seeded with `seed`
/// (one splitmix64 step).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed.wrapping_add(stream.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
