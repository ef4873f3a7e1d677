//! Seed derivation. Every random draw in a run flows from the single run seed.

use sha2::{Digest, Sha256};

/// Derives a per-item seed from the run seed and a stable label (usually an
/// example id), so distinct examples get uncorrelated streams.
pub fn derive(run_seed: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(run_seed.to_le_bytes());
    hasher.update([0u8]);
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}
