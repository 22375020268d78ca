//! Derivation of independent per-item RNG streams from one master seed, so
//! parallel and serial runs of a batch produce identical output.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// RNG for the item addressed by (stream, substream) under `master_seed`.
pub fn derive_rng(master_seed: u64, stream: u64, substream: u64) -> ChaCha8Rng {
    let mut state = master_seed;
    let mut seed = [0u8; 32];
    let words = [
        splitmix64(&mut state) ^ stream,
        splitmix64(&mut state) ^ substream,
        splitmix64(&mut state),
        splitmix64(&mut state),
    ];
    for (chunk, word) in seed.chunks_exact_mut(8).zip(words) {
        let mut s = word;
        chunk.copy_from_slice(&splitmix64(&mut s).to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}
