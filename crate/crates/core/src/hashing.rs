//! Deterministic hashing primitives shared by every stage.
//!
//! Anything order-sensitive in the pipeline (shuffles, samples, member
//! ordering) is derived from these functions keyed on `(seed, id)`, never
//! from iteration order, so results do not depend on how work is split
//! across threads or shards.

use sha2::{Digest, Sha256};
use xxhash_rust::xxh3::xxh3_64_with_seed;

/// 64-bit hash of raw bytes under `seed`.
#[inline]
pub fn hash_bytes(bytes: &[u8], seed: u64) -> u64 {
    xxh3_64_with_seed(bytes, seed)
}

/// 64-bit hash of a string under `seed`.
#[inline]
pub fn hash_str(s: &str, seed: u64) -> u64 {
    xxh3_64_with_seed(s.as_bytes(), seed)
}

/// SplitMix64 finalizer. A bijection on `u64`.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from a master seed, a purpose tag and an index.
pub fn derive_seed(master: u64, tag: &str, index: u64) -> u64 {
    let mut buf = Vec::with_capacity(tag.len() + 16);
    buf.extend_from_slice(&master.to_le_bytes());
    buf.extend_from_slice(tag.as_bytes());
    buf.extend_from_slice(&index.to_le_bytes());
    hash_bytes(&buf, 0x005E_ED0F_C0DE)
}

/// Sort key used for seeded "random" orderings: `(hash(seed, id), id)`.
///
/// The id is part of the key so that hash collisions still give a total
/// order.
pub fn seeded_order_key(seed: u64, id: &str) -> (u64, &str) {
    (hash_str(id, seed), id)
}

/// Reorder `items` pseudo-randomly as a pure function of `seed` and each
/// item's id.
pub fn seeded_shuffle_by<T, F>(items: &mut [T], seed: u64, id_of: F)
where
    F: Fn(&T) -> &str,
{
    items.sort_by(|a, b| seeded_order_key(seed, id_of(a)).cmp(&seeded_order_key(seed, id_of(b))));
}

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Incremental SHA-256 for hashing multi-part content (files, record streams).
#[derive(Default, Clone)]
pub struct ContentHasher {
    inner: Sha256,
}

impl ContentHasher {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn update(&mut self, bytes: &[u8]) -> &mut Self {
        self.inner.update(bytes);
        self
    }

    /// Length-prefixed field, so that `("ab", "c")` and `("a", "bc")` differ.
    pub fn field(&mut self, bytes: &[u8]) -> &mut Self {
        self.inner.update((bytes.len() as u64).to_le_bytes());
        self.inner.update(bytes);
        self
    }

    pub fn finish_hex(self) -> String {
        hex::encode(self.inner.finalize())
    }
}
