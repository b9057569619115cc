//! Stable configuration digests.

use serde::Serialize;
use sha2::{Digest, Sha256};

/// SHA-256 over the canonical JSON form of `config`, truncated to 16 hex
/// characters. Object keys are sorted (serde_json's default map is ordered),
/// so field declaration order does not leak into the digest.
pub fn config_digest<T: Serialize>(config: &T) -> String {
    let value = serde_json::to_value(config).expect("config serializes to JSON");
    let canonical = serde_json::to_string(&value).expect("JSON value serializes");
    let hash = Sha256::digest(canonical.as_bytes());
    hex::encode(&hash[..8])
}

/// Deterministic 64-bit seed derived from a base seed and string parts.
pub fn derive_seed(base: u64, parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    let out = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&out[..8]);
    u64::from_le_bytes(bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn digest_ignores_key_order() {
        let a = json!({"a": 1, "b": [1, 2]});
        let b = json!({"b": [1, 2], "a": 1});
        assert_eq!(config_digest(&a), config_digest(&b));
        assert_eq!(config_digest(&a).len(), 16);
    }

    #[test]
    fn derived_seed_depends_on_all_parts() {
        let s = derive_seed(7, &["imdb", "1"]);
        assert_eq!(s, derive_seed(7, &["imdb", "1"]));
        assert_ne!(s, derive_seed(8, &["imdb", "1"]));
        assert_ne!(s, derive_seed(7, &["imdb1", ""]));
    }
}
