//! Deterministic stream derivation for seeded Monte Carlo.
//!
//! Every trial uses three independent RNG streams — one for the market
//! realization (horizons and buyer values), one for the policy's internal
//! randomness, and one for acceptance coin flips at price-equal values — so
//! that changing a policy's internal sampling never perturbs the realized
//! market, and common-random-number coupling against the prophet stays exact.
//!
//! Streams are derived from `(master_seed, trial_index, stream_id)` with a
//! SplitMix64 chain, which is stable across runs, platforms, and thread
//! counts.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream id for sampling the realization (horizons, buyer values).
pub const STREAM_REALIZATION: u64 = 0;
/// Stream id for the policy's internal randomness.
pub const STREAM_POLICY: u64 = 1;
/// Stream id for acceptance coin flips on price-equal values.
pub const STREAM_ACCEPTANCE: u64 = 2;
/// Stream id for the independent benchmark realization when coupling is off.
pub const STREAM_UNCOUPLED: u64 = 3;

/// SplitMix64 finalizer: a strong 64-bit mix.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a 64-bit sub-seed for `(master, trial, stream)`.
pub fn derive_seed(master: u64, trial: u64, stream: u64) -> u64 {
    mix64(mix64(mix64(master) ^ trial) ^ stream.wrapping_mul(0xa076_1d64_78bd_642f))
}

/// Builds the ChaCha8 generator for one `(master, trial, stream)` triple.
pub fn stream_rng(master: u64, trial: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, trial, stream))
}

/// Maps `f` over trial indices `0..trials`, in parallel when the `parallel`
/// feature is enabled. Results are returned in trial order regardless of
/// thread count, so downstream aggregation is deterministic.
pub fn map_trials<T, F>(trials: u64, f: F) -> crate::Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> crate::Result<T> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..trials).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..trials).map(f).collect()
    }
}
