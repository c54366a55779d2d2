use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::text::tokenize;

pub const DEFAULT_DIM: usize = 64;
pub const DEFAULT_HASH_SEED: u64 = 0x5bd1_e995;
const SIGN_SEED_MIX: u64 = 0x9e37_79b9_7f4a_7c15;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8], seed: u64) -> u64 {
    let mut hash = FNV_OFFSET ^ seed;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f64>,
    normalized: bool,
}

impl EmbeddingVector {
    pub fn zeros(dim: usize) -> Self {
        Self {
            values: vec![0.0; dim],
            normalized: false,
        }
    }

    /// L2-normalizes `values`; an all-zero input stays zero and is flagged as
    /// not normalized.
    pub fn normalized_from(mut values: Vec<f64>) -> Self {
        let norm = l2_norm(&values);
        if norm == 0.0 || !norm.is_finite() {
            values.iter_mut().for_each(|v| *v = 0.0);
            return Self {
                values,
                normalized: false,
            };
        }
        values.iter_mut().for_each(|v| *v /= norm);
        Self {
            values,
            normalized: true,
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.values)
    }

    pub fn dot(&self, other: &EmbeddingVector) -> f64 {
        dot(&self.values, &other.values)
    }

    /// Cosine similarity; zero when either side is the zero vector.
    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        cosine(&self.values, &other.values)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2_norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let denom = l2_norm(a) * l2_norm(b);
    if denom == 0.0 {
        0.0
    } else {
        dot(a, b) / denom
    }
}

/// Signed feature hashing of lowercased alphanumeric tokens.
///
/// Each token lands in bucket `fnv1a(token, seed) % dim` with sign taken from
/// bit 32 of `fnv1a(token, seed ^ SIGN_SEED_MIX)`; the accumulated counts are
/// L2-normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Embedder {
    dim: usize,
    seed: u64,
}

impl Default for Embedder {
    fn default() -> Self {
        Self::new(DEFAULT_DIM)
    }
}

impl Embedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self {
            dim,
            seed: DEFAULT_HASH_SEED,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn bucket(&self, token: &str) -> (usize, f64) {
        let bucket = (fnv1a(token.as_bytes(), self.seed) % self.dim as u64) as usize;
        let sign_bit = (fnv1a(token.as_bytes(), self.seed ^ SIGN_SEED_MIX) >> 32) & 1;
        (bucket, if sign_bit == 0 { 1.0 } else { -1.0 })
    }

    /// Unnormalized signed counts.
    pub fn raw_counts(&self, text: &str) -> Vec<f64> {
        let mut values = vec![0.0; self.dim];
        for token in tokenize(text) {
            let (bucket, sign) = self.bucket(&token);
            values[bucket] += sign;
        }
        values
    }

    pub fn embed(&self, text: &str) -> EmbeddingVector {
        EmbeddingVector::normalized_from(self.raw_counts(text))
    }

    /// Short stable fingerprint of everything that determines item vectors.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(b"hashed-bag-v1;fields=title+entities+summary;");
        h.update((self.dim as u64).to_le_bytes());
        h.update(self.seed.to_le_bytes());
        h.finalize()
            .iter()
            .take(8)
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// Embeds with the default 64-dimensional hasher.
pub fn embed_text(text: &str) -> EmbeddingVector {
    Embedder::default().embed(text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn deterministic() {
        assert_eq!(embed_text("jazz"), embed_text("jazz"));
        assert_eq!(embed_text("Jazz!"), embed_text("jazz"));
    }

    #[test]
    fn empty_text_is_flagged_zero() {
        let v = embed_text("");
        assert!(v.is_zero());
        assert!(!v.is_normalized());
        assert_eq!(v.dim(), DEFAULT_DIM);
        assert!(!embed_text("  ...  ").is_normalized());
    }

    #[test]
    fn related_text_is_closer() {
        let music = embed_text("jazz music");
        let concert = embed_text("jazz concert");
        let carbonara = embed_text("carbonara recipe");
        assert!(music.cosine(&concert) > music.cosine(&carbonara));
    }

    #[test]
    fn dimension_and_seed_change_fingerprint() {
        let base = Embedder::default();
        assert_ne!(base.fingerprint(), Embedder::new(32).fingerprint());
        assert_ne!(base.fingerprint(), base.with_seed(7).fingerprint());
        assert_eq!(base.fingerprint(), Embedder::default().fingerprint());
    }

    proptest! {
        #[test]
        fn nonempty_embeddings_have_unit_norm(text in "[a-z]{1,8}( [a-z]{1,8}){0,10}") {
            let v = embed_text(&text);
            // a token can cancel against another with the opposite sign
            if v.is_normalized() {
                prop_assert!((v.norm() - 1.0).abs() <= 1e-6);
            } else {
                prop_assert!(v.is_zero());
            }
        }
    }
}
