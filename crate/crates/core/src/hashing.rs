//! Stable 64-bit hashing used for digests, cache keys and seed derivation.

use xxhash_rust::xxh3::xxh3_64;

/// Stable 64-bit hash of a byte string.
pub fn digest64(bytes: &[u8]) -> u64 {
    xxh3_64(bytes)
}

/// Lower-case, zero-padded hex form of a 64-bit digest.
pub fn hex64(value: u64) -> String {
    format!("{value:016x}")
}

pub fn hex_digest(bytes: &[u8]) -> String {
    hex64(digest64(bytes))
}

/// Derives a child seed from a parent seed and a list of integer components.
///
/// Used to give every (label, stage, call) a distinct but reproducible seed.
pub fn derive_seed(parent: u64, parts: &[u64]) -> u64 {
    let mut buf = Vec::with_capacity(8 * (parts.len() + 1));
    buf.extend_from_slice(&parent.to_le_bytes());
    for p in parts {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    xxh3_64(&buf)
}
