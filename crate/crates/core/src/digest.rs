//! Content digests for provenance manifests and determinism checks.

use sha2::{Digest, Sha256};

/// Incrementally hashes heterogeneous content into a hex SHA-256 digest.
pub struct ContentDigest {
    hasher: Sha256,
}

impl ContentDigest {
    pub fn new() -> Self {
        Self { hasher: Sha256::new() }
    }

    pub fn update_bytes(&mut self, bytes: &[u8]) {
        self.hasher.update(bytes);
    }

    pub fn update_str(&mut self, s: &str) {
        self.hasher.update(s.as_bytes());
    }

    pub fn update_u64(&mut self, v: u64) {
        self.hasher.update(v.to_le_bytes());
    }

    /// Hashes an `f32` slice bit-exactly (little-endian).
    pub fn update_f32s(&mut self, xs: &[f32]) {
        for x in xs {
            self.hasher.update(x.to_le_bytes());
        }
    }

    pub fn finish(self) -> String {
        hex_string(&self.hasher.finalize())
    }
}

impl Default for ContentDigest {
    fn default() -> Self {
        Self::new()
    }
}

/// Hex SHA-256 of a byte slice.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hex_string(&hasher.finalize())
}

fn hex_string(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        out.push_str(&format!("{b:02x}"));
    }
    out
}
