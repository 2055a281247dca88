//! Named, independently reproducible random streams derived from one root seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random source used throughout the crate. ChaCha output is specified
/// byte-for-byte, so seeded streams are identical on every platform.
pub type Rng = ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn fnv1a(label: &str) -> u64 {
    label.bytes().fold(0xCBF2_9CE4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// Derive the seed of the stream `label` under `root`.
pub fn derive_seed(root: u64, label: &str) -> u64 {
    splitmix64(splitmix64(root) ^ fnv1a(label))
}

/// Open the named stream `label` under `root`.
pub fn stream(root: u64, label: &str) -> Rng {
    Rng::seed_from_u64(derive_seed(root, label))
}
