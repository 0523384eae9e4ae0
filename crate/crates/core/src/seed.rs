//! Deterministic seed fan-out.
//!
//! A master seed is combined with a textual label (for example
//! `"lda/bucket1/K4"`) through SHA-256, and the first eight bytes of the digest
//! become the derived seed. The mapping is platform independent.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// The RNG used everywhere in the crate. ChaCha has a documented, portable
/// output stream, unlike `StdRng`.
pub type Rng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derive a stage seed from a master seed and a label.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}
