//! Stable seed derivation. Every random stream in a run is seeded by
//! hashing the master seed with a purpose string and two indices, so no
//! stream depends on scheduling or on draw order elsewhere.

use sha2::{Digest, Sha256};

pub fn derive(master: u64, purpose: &str, a: u64, b: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update((purpose.len() as u64).to_le_bytes());
    h.update(purpose.as_bytes());
    h.update(a.to_le_bytes());
    h.update(b.to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 yields 32 bytes"))
}
