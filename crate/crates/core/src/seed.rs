//! Order-independent seed derivation.
//!
//! Every random stream in a run is keyed by `(master, repeat, round, user,
//! purpose)` and mixed with SplitMix64 finalizers, so the stream a client sees
//! does not depend on how many draws other components made before it, nor on
//! the order in which parallel work executes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a derived stream is used for. Distinct tags give independent streams
/// for the same `(repeat, round, user)` coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    UserPositions = 1,
    CpuFrequency = 2,
    Partition = 3,
    Placement = 4,
    Selection = 5,
    LocalTraining = 6,
    ModelInit = 7,
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds `parts` into a single 64-bit seed.
pub fn mix(parts: &[u64]) -> u64 {
    parts.iter().fold(GOLDEN, |acc, &p| {
        splitmix(acc.wrapping_add(GOLDEN) ^ splitmix(p.wrapping_add(GOLDEN)))
    })
}

/// Seed for one stream of one repeat. `round` and `user` are zero when the
/// stream is not round- or user-specific.
pub fn derive(master: u64, repeat: u64, round: u64, user: u64, purpose: Purpose) -> u64 {
    mix(&[master, repeat, round, user, purpose as u64])
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
