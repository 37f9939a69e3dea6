//! Deterministic random substreams.
//!
//! Every consumer of randomness derives its own ChaCha stream from the global
//! seed, a purpose tag and a tuple of indices (UE, round, epoch, ...). Results
//! therefore never depend on scheduling or on how many workers are running.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Purpose of a random stream. The discriminant participates in seed mixing.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Collect = 2,
    Shuffle = 3,
    Dropout = 4,
    Noise = 5,
    Eval = 6,
    GradCheck = 7,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes the seed, stream tag and index path into a single 64-bit key.
pub fn derive_key(seed: u64, stream: Stream, path: &[u64]) -> u64 {
    let mut h = splitmix64(seed ^ splitmix64(stream as u64));
    for &p in path {
        h = splitmix64(h ^ splitmix64(p.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    h
}

pub fn substream(seed: u64, stream: Stream, path: &[u64]) -> SimRng {
    SimRng::seed_from_u64(derive_key(seed, stream, path))
}
