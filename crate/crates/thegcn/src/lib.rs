//! Node classification on continuous-time event graphs whose edges are not
//! assumed homophilous.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: a small reverse-mode autodiff engine over `f64` tensors,
//!   multi-layer perceptrons, Adam, and checkpointing.
//! - [`graph`]: temporal event graphs, CSV ingestion, and edge-heterophily
//!   metrics over time windows.
//! - [`sampler`]: time-respecting recursive event sampling around a query
//!   node, and the flattening of a sampled context into a static view whose
//!   vertices are (node, time) instances.
//! - [`model`]: cosine time encoding and signed low/high-pass message
//!   passing over sampled contexts.
//! - [`training`]: splits, the training loop, evaluation, ablations and
//!   parameter sweeps, all bitwise deterministic for a fixed seed.
//! - [`synthgen`]: synthetic event-graph generation with controlled edge
//!   heterophily and label dynamics, plus construction of event graphs from
//!   sensor series.
//! - [`cli`]: the `thegcn` command-line front end.

pub mod cli;
pub mod error;
pub mod graph;
pub mod model;
pub mod sampler;
pub mod synthgen;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};

/// Derives a 256-bit RNG seed from a sequence of 64-bit words.
///
/// Every random decision in the crate draws from a ChaCha stream seeded
/// through this function, so distinct purposes (model init, per-epoch
/// sampling, evaluation) get decorrelated streams while remaining
/// reproducible from one user-facing seed.
pub fn derive_seed(parts: &[u64]) -> [u8; 32] {
    // splitmix64 finalizer, applied to a running combination of the parts.
    fn mix(mut z: u64) -> u64 {
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    let mut state = 0x243f_6a88_85a3_08d3u64; // arbitrary non-zero start
    for &p in parts {
        state = mix(state ^ p).wrapping_add(0x9e37_79b9_7f4a_7c15);
    }
    let mut seed = [0u8; 32];
    for (i, chunk) in seed.chunks_exact_mut(8).enumerate() {
        state = mix(state.wrapping_add((i as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)));
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    seed
}

/// First 64 bits of [`derive_seed`], for chaining stream seeds.
pub fn derive_u64(parts: &[u64]) -> u64 {
    let seed = derive_seed(parts);
    u64::from_le_bytes(seed[..8].try_into().expect("seed has 32 bytes"))
}

/// Purpose tags mixed into derived seeds so different uses of the same user
/// seed cannot collide.
pub mod seed_domain {
    pub const MODEL_INIT: u64 = 1;
    pub const SAMPLING: u64 = 2;
    pub const EVAL: u64 = 3;
    pub const SHUFFLE: u64 = 4;
    pub const SPLIT: u64 = 5;
    pub const SYNTH: u64 = 6;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derive_seed_is_deterministic_and_sensitive() {
        let a = derive_seed(&[1, 2, 3]);
        let b = derive_seed(&[1, 2, 3]);
        assert_eq!(a, b);
        assert_ne!(a, derive_seed(&[1, 2, 4]));
        assert_ne!(a, derive_seed(&[1, 2]));
        // order matters
        assert_ne!(derive_seed(&[2, 1]), derive_seed(&[1, 2]));
    }

    #[test]
    fn derive_seed_handles_empty_and_zero_parts() {
        assert_ne!(derive_seed(&[]), [0u8; 32]);
        assert_ne!(derive_seed(&[0]), derive_seed(&[]));
        assert_ne!(derive_seed(&[0, 0]), derive_seed(&[0]));
    }
}
