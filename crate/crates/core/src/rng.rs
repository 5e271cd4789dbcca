//! Seed derivation for replicas.
//!
//! Every random stream is a ChaCha8 generator. The 256-bit key is filled by a
//! SplitMix64 sequence started from `seed ^ mix(tag)`; the ChaCha stream id is
//! the replica index. `tag` separates experiments sharing one seed (for
//! example the lattice size in a sweep), so `(seed, tag, replica)` names a
//! stream uniquely and independently of scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// One SplitMix64 step.
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The generator for `(seed, tag, replica)`.
pub fn stream(seed: u64, tag: u64, replica: u64) -> ChaCha8Rng {
    let mut t = tag;
    let mut state = seed ^ splitmix64(&mut t);
    let mut key = [0u8; 32];
    for chunk in key.chunks_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(replica);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let draw = |mut r: ChaCha8Rng| -> Vec<u64> { (0..4).map(|_| r.gen()).collect() };
        let a = draw(stream(7, 1, 3));
        let b = draw(stream(7, 1, 3));
        assert_eq!(a, b);
        let c: u64 = stream(7, 1, 4).gen();
        let d: u64 = stream(7, 2, 3).gen();
        assert_ne!(a[0], c);
        assert_ne!(a[0], d);
    }
}
