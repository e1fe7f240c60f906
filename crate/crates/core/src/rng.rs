//! Counter-style random streams keyed by a seed and a cell key, so results do
//! not depend on the order in which cells are generated.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Independent stream for `(seed, parts..., index)`.
pub fn keyed_rng(seed: u64, parts: &[&str], index: u64) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for p in parts {
        // Length prefix keeps ("ab", "c") apart from ("a", "bc").
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    h.update(index.to_le_bytes());
    let digest: [u8; 32] = h.finalize().into();
    ChaCha8Rng::from_seed(digest)
}

/// Child seed for replicate `index` of a scenario.
pub fn derive_seed(seed: u64, label: &str, index: u64) -> u64 {
    use rand::RngCore;
    keyed_rng(seed, &[label], index).next_u64()
}
