//! Deterministic random streams derived from a global seed and a context.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a hash of a string, used to turn record ids into stream keys.
pub fn hash_str(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent stream for `(seed, context...)`. The same inputs always give
/// the same stream, regardless of which thread asks for it.
pub fn stream(seed: u64, context: &[u64]) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    let mut h = splitmix(seed);
    for (i, c) in context.iter().enumerate() {
        h = splitmix(h ^ splitmix(c.wrapping_add(i as u64 + 1)));
    }
    for (i, chunk) in key.chunks_mut(8).enumerate() {
        chunk.copy_from_slice(&splitmix(h.wrapping_add(i as u64)).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Stream for one record in one epoch, as used by augmentation workers.
pub fn record_stream(seed: u64, record_id: &str, epoch: u64) -> ChaCha8Rng {
    stream(seed, &[hash_str(record_id), epoch])
}
