//! Seeded random sub-streams.
//!
//! Every random decision in the crate draws from a ChaCha stream whose seed is
//! derived from a small key (run seed, epoch, sample id, purpose). Streams are
//! therefore independent of iteration order and thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Purpose tags keep sub-streams for different consumers apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Schedule = 2,
    Weak = 3,
    Strong = 4,
    Synth = 5,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable 64-bit FNV-1a hash of a sample identifier.
pub fn hash_id(id: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in id.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Derives a generator from an ordered list of key words.
pub fn substream(seed: u64, stream: Stream, keys: &[u64]) -> Rng {
    let mut h = splitmix(seed ^ splitmix(stream as u64));
    for &k in keys {
        h = splitmix(h ^ k);
    }
    Rng::seed_from_u64(h)
}

/// Per-sample augmentation stream keyed by (seed, epoch, sample id).
pub fn sample_stream(seed: u64, stream: Stream, epoch: usize, id: &str) -> Rng {
    substream(seed, stream, &[epoch as u64, hash_id(id)])
}
