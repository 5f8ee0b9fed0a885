use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{apply_prefix, EmbedRequest, EmbeddingProvider, EmbeddingVector, Result};

pub const DEFAULT_HASH_DIM: usize = 64;

/// Deterministic test provider.
///
/// The vector of a text is a function of its bytes only: SHA-256 of the
/// (optionally role-prefixed) text keys a ChaCha8 stream whose 32-bit
/// outputs are mapped to components in `[-1, 1)`. Identical strings give
/// identical vectors; distinct strings give nearly orthogonal ones for
/// moderate `dim`.
#[derive(Clone, Debug)]
pub struct HashProvider {
    dim: usize,
    model_id: String,
    prefix_roles: bool,
}

impl HashProvider {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "hash provider needs a positive dimension");
        Self {
            dim,
            model_id: format!("hash-{dim}"),
            prefix_roles: false,
        }
    }

    pub fn with_model_id(mut self, model_id: impl Into<String>) -> Self {
        self.model_id = model_id.into();
        self
    }

    /// Hash the role-prefixed text, so query and passage vectors of one
    /// text differ.
    pub fn with_role_prefixes(mut self, enabled: bool) -> Self {
        self.prefix_roles = enabled;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vector_for(&self, text: &str) -> Vec<f32> {
        let digest: [u8; 32] = Sha256::digest(text.as_bytes()).into();
        let mut rng = ChaCha8Rng::from_seed(digest);
        (0..self.dim)
            .map(|_| (rng.next_u32() >> 8) as f32 / (1u32 << 23) as f32 - 1.0)
            .collect()
    }
}

impl Default for HashProvider {
    fn default() -> Self {
        Self::new(DEFAULT_HASH_DIM)
    }
}

impl EmbeddingProvider for HashProvider {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn embed(&self, req: &EmbedRequest) -> Result<Vec<EmbeddingVector>> {
        req.texts
            .iter()
            .map(|t| {
                let text = apply_prefix(t, req.role, self.prefix_roles);
                EmbeddingVector::new(self.vector_for(&text), req.role)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedder::{cosine, embed_batch, embed_texts, Role};

    #[test]
    fn identical_strings_identical_vectors() {
        let p = HashProvider::default();
        let out = embed_texts(&p, &["a", "a"], Role::Query).unwrap();
        assert_eq!(out[0], out[1]);
        assert_eq!(out[0].dim(), DEFAULT_HASH_DIM);
    }

    #[test]
    fn components_in_unit_range() {
        let v = HashProvider::new(512).vector_for("Բարև");
        assert!(v.iter().all(|x| (-1.0..1.0).contains(x)));
    }

    #[test]
    fn roles_share_vectors_unless_prefixed() {
        let p = HashProvider::default();
        let q = embed_texts(&p, &["x"], Role::Query).unwrap();
        let d = embed_texts(&p, &["x"], Role::Passage).unwrap();
        assert_eq!(q[0].values(), d[0].values());

        let p = p.with_role_prefixes(true);
        let q = embed_texts(&p, &["x"], Role::Query).unwrap();
        let d = embed_texts(&p, &["x"], Role::Passage).unwrap();
        assert_ne!(q[0].values(), d[0].values());
    }

    #[test]
    fn distinct_texts_are_far_apart() {
        let p = HashProvider::default();
        let out = embed_texts(&p, &["cat", "dog"], Role::Passage).unwrap();
        assert!(cosine(&out[0], &out[1]).unwrap() < 0.85);
    }

    #[test]
    fn permuting_texts_permutes_vectors() {
        let p = HashProvider::default();
        let texts: Vec<String> = (0..8).map(|i| format!("text {i}")).collect();
        let perm = [3usize, 7, 0, 1, 6, 2, 5, 4];
        let permuted: Vec<String> = perm.iter().map(|&i| texts[i].clone()).collect();
        let a = embed_batch(&p, &EmbedRequest::new(texts, Role::Query, "h")).unwrap();
        let b = embed_batch(&p, &EmbedRequest::new(permuted, Role::Query, "h")).unwrap();
        for (j, &i) in perm.iter().enumerate() {
            assert_eq!(b[j], a[i]);
        }
    }
}
