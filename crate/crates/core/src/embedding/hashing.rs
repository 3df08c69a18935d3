//! Signed feature hashing of lower-cased alphanumeric tokens.

use std::io::Cursor;

use super::{EmbedRequest, EmbeddingProvider, EmbeddingVector, Fingerprint, Result};

pub const DEFAULT_HASH_FEATURES: usize = 1024;
pub const DEFAULT_HASH_SEED: u32 = 42;

/// Lower-cases `text` and splits it on runs of non-alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// 32-bit MurmurHash3 (x86 variant) of the token's UTF-8 bytes.
pub fn token_hash(token: &str, seed: u32) -> u32 {
    murmur3::murmur3_32(&mut Cursor::new(token.as_bytes()), seed)
        .expect("reading from an in-memory cursor cannot fail")
}

/// Bucket in `[0, n_features)` and sign for one token. The bucket is the
/// hash modulo `n_features`; the sign is taken from the hash's top bit.
pub fn token_bucket(token: &str, n_features: usize, seed: u32) -> (usize, f64) {
    let h = token_hash(token, seed);
    let bucket = (h as u64 % n_features as u64) as usize;
    let sign = if h & 0x8000_0000 == 0 { 1.0 } else { -1.0 };
    (bucket, sign)
}

/// Signed hashed counts, L2-normalized. Text without any alphanumeric
/// token maps to the zero vector.
///
/// # Panics
///
/// If `n_features < 2`.
pub fn hashing_embed(text: &str, n_features: usize, seed: u32) -> EmbeddingVector {
    assert!(n_features >= 2, "n_features must be at least 2");
    let mut counts = vec![0.0f64; n_features];
    for token in tokenize(text) {
        let (bucket, sign) = token_bucket(&token, n_features, seed);
        counts[bucket] += sign;
    }
    let norm = counts.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        counts.iter_mut().for_each(|v| *v /= norm);
    }
    EmbeddingVector::from_values_unchecked(counts.into_iter().map(|v| v as f32).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashingEmbedder {
    n_features: usize,
    seed: u32,
}

impl HashingEmbedder {
    pub fn new(n_features: usize, seed: u32) -> Self {
        assert!(n_features >= 2, "n_features must be at least 2");
        Self { n_features, seed }
    }
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_HASH_FEATURES, DEFAULT_HASH_SEED)
    }
}

impl EmbeddingProvider for HashingEmbedder {
    fn dim(&self) -> usize {
        self.n_features
    }

    fn fingerprint(&self) -> Fingerprint {
        Fingerprint::of(&format!(
            "kind=hashing;dim={};n_features={};seed={};signed=1;norm=l2",
            self.n_features, self.n_features, self.seed
        ))
    }

    fn embed_batch(&self, items: &[EmbedRequest<'_>]) -> Result<Vec<EmbeddingVector>> {
        Ok(items
            .iter()
            .map(|item| hashing_embed(item.text, self.n_features, self.seed))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn murmur3_known_answers() {
        // Published MurmurHash3_x86_32 test vectors.
        assert_eq!(token_hash("", 0), 0);
        assert_eq!(token_hash("", 1), 0x514E_28B7);
        assert_eq!(token_hash("hello", 0), 0x248B_FA47);
        assert_eq!(token_hash("Hello, world!", 1234), 0xFAF6_CDB3);
    }

    #[test]
    fn tokenizer_lowercases_and_splits() {
        assert_eq!(tokenize("The People's-Will, 2020!"), vec!["the", "people", "s", "will", "2020"]);
        assert!(tokenize("... --- !!!").is_empty());
    }

    #[test]
    fn no_tokens_gives_zero_vector() {
        let v = hashing_embed("?! ...", 16, 42);
        assert_eq!(v.dim(), 16);
        assert!(v.values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn repeated_token_has_double_weight() {
        let (people, people_sign) = token_bucket("people", 8, 42);
        let (nation, nation_sign) = token_bucket("nation", 8, 42);
        // Frozen from an independent MurmurHash3 implementation.
        assert_eq!((people, people_sign, nation, nation_sign), (7, -1.0, 6, -1.0));
        assert_ne!(people, nation);

        let v = hashing_embed("people people nation", 8, 42);
        let norm = 5f64.sqrt();
        assert!((f64::from(v.values()[people]) - people_sign * 2.0 / norm).abs() < 1e-6);
        assert!((f64::from(v.values()[nation]) - nation_sign / norm).abs() < 1e-6);
        let ratio = v.values()[people].abs() / v.values()[nation].abs();
        assert!((ratio - 2.0).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn unit_norm_or_zero(text in "[a-z ]{0,40}", n in 2usize..64, seed in any::<u32>()) {
            let v = hashing_embed(&text, n, seed);
            let norm: f64 = v.values().iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
            if tokenize(&text).is_empty() {
                prop_assert_eq!(norm, 0.0);
            } else if norm != 0.0 {
                prop_assert!((norm - 1.0).abs() < 1e-6);
            }
        }

        #[test]
        fn pure_function_of_inputs(text in ".{0,60}", n in 2usize..128, seed in any::<u32>()) {
            let a = hashing_embed(&text, n, seed);
            let b = hashing_embed(&text, n, seed);
            prop_assert_eq!(a.values(), b.values());
        }
    }
}
