//! Counter-based random streams.
//!
//! Every stochastic task draws from a ChaCha8 stream keyed by the run seed and
//! addressed by `(kind, index)`. Two tasks never share a stream and a task's
//! stream does not depend on which worker runs it, so results are identical
//! for any thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// The kind of work a stream feeds. The discriminant occupies the top 16 bits
/// of the ChaCha stream id, the task index the low 48.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u16)]
pub enum TaskKind {
    Disorder = 1,
    PerturbDisorder = 2,
    Restart = 3,
    Goe = 4,
    Probe = 5,
    Covariance = 6,
    BasinHop = 7,
    Generic = 8,
}

const INDEX_BITS: u32 = 48;

/// Returns the generator for task `index` of the given kind under `seed`.
pub fn stream(seed: u64, kind: TaskKind, index: u64) -> StreamRng {
    debug_assert!(index < (1u64 << INDEX_BITS));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((kind as u64) << INDEX_BITS) | (index & ((1u64 << INDEX_BITS) - 1)));
    rng
}

/// Mixes a parent seed with a label into a child seed (SplitMix64 finalizer).
/// Used to give independent seeds to nested experiments.
pub fn child_seed(seed: u64, label: u64) -> u64 {
    let mut z = seed ^ label.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
