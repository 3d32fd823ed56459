//! Counter-based seed derivation and stable content hashing.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::linalg::CMat;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for item `index` of a stream rooted at `seed`. Independent of generation order.
pub fn derive(seed: u64, index: u64) -> u64 {
    mix64(seed ^ mix64(index.wrapping_mul(0xD1B5_4A32_D192_ED03)))
}

/// Seed derived from a root seed and a short domain tag, for separating RNG streams
/// that share a root (e.g. initialization vs. CSI corruption).
pub fn derive_tagged(seed: u64, tag: &str, index: u64) -> u64 {
    let t = tag.bytes().fold(0xCBF2_9CE4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01B3));
    derive(mix64(seed ^ t), index)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stable 64-bit hash of the exact bit patterns of a list of matrices.
pub fn hash_matrices(ms: &[CMat]) -> u64 {
    let mut h = 0x6A09_E667_F3BC_C908u64;
    for m in ms {
        h = mix64(h ^ m.nrows() as u64);
        h = mix64(h ^ m.ncols() as u64);
        for z in m.iter() {
            h = mix64(h ^ z.re.to_bits());
            h = mix64(h ^ z.im.to_bits());
        }
    }
    h
}
