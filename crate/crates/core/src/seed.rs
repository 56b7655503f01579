//! Seed derivation. Every random draw in the crate comes from a ChaCha8
//! stream keyed by a 64-bit seed, and child seeds are derived with the
//! SplitMix64 finalizer so results are identical across platforms and
//! thread schedules.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// SplitMix64 output function.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for counter `index` under `seed`.
pub fn derive(seed: u64, index: u64) -> u64 {
    splitmix64(seed.wrapping_add(splitmix64(index)))
}

/// Child seed for a named stream (stage tags such as `"l2a"`).
pub fn derive_tagged(seed: u64, tag: &str) -> u64 {
    derive(seed, digest_u64(tag.as_bytes()))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stable 64-bit digest of arbitrary bytes.
pub fn digest_u64(bytes: &[u8]) -> u64 {
    let out = Sha256::digest(bytes);
    let mut buf = [0u8; 8];
    buf.copy_from_slice(&out[..8]);
    u64::from_le_bytes(buf)
}
