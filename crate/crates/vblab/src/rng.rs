//! Seedable, splittable random number streams.
//!
//! Every randomized routine in this crate draws from a ChaCha8 stream
//! derived from a user seed, a [`StreamPurpose`], and an index. ChaCha is
//! counter-based: streams with different ids are statistically independent,
//! and a stream's output depends only on `(seed, purpose, index)`, never on
//! how much any other stream has consumed. That is what makes partitioned
//! work (e.g. corrupting disjoint label ranges on several workers, one
//! stream per instance) reproduce the sequential result bit for bit.
//!
//! The generator choice and the stream-id layout below are part of this
//! crate's compatibility contract: golden output files depend on them, so
//! neither can change without a format version bump.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Namespaces for derived streams, one per randomized subsystem.
///
/// The stream id is `purpose << 56 | index`, which leaves room for 2^56
/// per-purpose indices (instance ids, epoch numbers, worker ids).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum StreamPurpose {
    /// Per-instance label corruption; index = instance id.
    Corruption = 0,
    /// One-off tensors shared by a corruption run (e.g. projection weights).
    CorruptionGlobal = 1,
    /// Synthetic dataset class means.
    DatasetMeans = 2,
    /// Synthetic dataset sample draws.
    DatasetPoints = 3,
    /// Train/test splitting; index = class id.
    Split = 4,
    /// Model parameter initialization; index = layer id.
    WeightInit = 5,
    /// Per-epoch shuffling of the training set; index = epoch.
    Shuffle = 6,
    /// Monte-Carlo sampling in analysis routines; index = worker id.
    Sampling = 7,
    /// Seed derivation for nested runs (sweeps, experiments).
    Derive = 8,
}

const INDEX_BITS: u32 = 56;

/// Returns the ChaCha8 stream identified by `(seed, purpose, index)`.
///
/// `index` must fit in 56 bits; everything indexed in this crate (instances,
/// epochs, layers) is far below that.
pub fn stream(seed: u64, purpose: StreamPurpose, index: u64) -> ChaCha8Rng {
    assert!(
        index >> INDEX_BITS == 0,
        "stream index {index} exceeds 56 bits"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((purpose as u64) << INDEX_BITS | index);
    rng
}
