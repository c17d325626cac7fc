//! Deterministic seed fan-out for sweeps: every row derives its own RNG
//! seed by hashing the master seed together with the row key, so rows can
//! run in any order, in parallel, or resume without replaying the stream.

use sha2::{Digest, Sha256};

pub fn derive_seed(master: u64, row_key: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update([0x1f]);
    h.update(row_key.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}
