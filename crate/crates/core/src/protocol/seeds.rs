use sha2::{Digest, Sha256};

/// Independent 64-bit seed for the stream `(master, label, key)`.
pub fn derive_seed(master: u64, label: &str, key: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update((label.len() as u64).to_le_bytes());
    h.update(label.as_bytes());
    h.update(key.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}
