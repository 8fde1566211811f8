//! Stable sub-seed derivation so that every random draw in a run is keyed by
//! what it is for, not by the order in which work happens to execute.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub fn derive(seed: u64, parts: &[&str]) -> u64 {
    let mut d = Sha256::new();
    d.update(seed.to_le_bytes());
    for p in parts {
        d.update((p.len() as u64).to_le_bytes());
        d.update(p.as_bytes());
    }
    let out = d.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("sha256 is 32 bytes"))
}

pub fn rng(seed: u64, parts: &[&str]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, parts))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parts_are_length_prefixed() {
        assert_ne!(derive(1, &["ab", "c"]), derive(1, &["a", "bc"]));
        assert_eq!(derive(1, &["x"]), derive(1, &["x"]));
        assert_ne!(derive(1, &["x"]), derive(2, &["x"]));
    }
}
