use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{tokenize, BackendError, BackendResult, EmbeddingVector, Embedder};

/// Bag-of-tokens embedder: each token maps to a seeded pseudo-random vector
/// and a text embeds to the normalized mean of its token vectors.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
    seed: u64,
}

impl HashEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim, seed }
    }

    fn token_vector(&self, token: &str) -> Vec<f64> {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(token.as_bytes());
        let mut rng = ChaCha8Rng::from_seed(hasher.finalize().into());
        (0..self.dim).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn embed_tokens(&self, tokens: &[String]) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim];
        for token in tokens {
            for (a, v) in acc.iter_mut().zip(self.token_vector(token)) {
                *a += v;
            }
        }
        normalize(acc)
    }
}

impl Embedder for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_text(&self, text: &str) -> BackendResult<EmbeddingVector> {
        if text.trim().is_empty() {
            return Err(BackendError::invalid("cannot embed empty text"));
        }
        let mut tokens = tokenize(text);
        if tokens.is_empty() {
            tokens.push(text.trim().to_string());
        }
        Ok(EmbeddingVector(self.embed_tokens(&tokens)))
    }
}

/// Embedder that knows a prototype vector per planted token. Text carrying
/// planted tokens lands next to their prototypes; other tokens only add a
/// small hashed perturbation. Used as the oracle embedder for synthetic
/// corpora.
#[derive(Debug, Clone)]
pub struct PlantedEmbedder {
    prototypes: BTreeMap<String, Vec<f64>>,
    fallback: HashEmbedder,
    filler_weight: f64,
}

impl PlantedEmbedder {
    pub const DEFAULT_FILLER_WEIGHT: f64 = 0.05;

    pub fn new(prototypes: BTreeMap<String, Vec<f64>>, seed: u64) -> BackendResult<Self> {
        let dim = prototypes
            .values()
            .next()
            .map(Vec::len)
            .ok_or_else(|| BackendError::invalid("planted embedder needs at least one prototype"))?;
        if dim == 0 || prototypes.values().any(|p| p.len() != dim) {
            return Err(BackendError::invalid("prototypes disagree on dimension"));
        }
        let prototypes = prototypes.into_iter().map(|(k, v)| (k.to_lowercase(), normalize(v))).collect();
        Ok(Self { prototypes, fallback: HashEmbedder::new(dim, seed), filler_weight: Self::DEFAULT_FILLER_WEIGHT })
    }

    pub fn with_filler_weight(mut self, weight: f64) -> Self {
        self.filler_weight = weight;
        self
    }

    pub fn prototype(&self, token: &str) -> Option<&[f64]> {
        self.prototypes.get(token).map(Vec::as_slice)
    }
}

impl Embedder for PlantedEmbedder {
    fn dim(&self) -> usize {
        self.fallback.dim
    }

    fn embed_text(&self, text: &str) -> BackendResult<EmbeddingVector> {
        if text.trim().is_empty() {
            return Err(BackendError::invalid("cannot embed empty text"));
        }
        let tokens = tokenize(text);
        let (planted, filler): (Vec<String>, Vec<String>) =
            tokens.into_iter().partition(|t| self.prototypes.contains_key(t));
        let mut seen = Vec::new();
        for t in planted {
            if !seen.contains(&t) {
                seen.push(t);
            }
        }
        if seen.is_empty() {
            return self.fallback.embed_text(text);
        }
        let mut acc = vec![0.0; self.dim()];
        for token in &seen {
            for (a, v) in acc.iter_mut().zip(&self.prototypes[token]) {
                *a += v;
            }
        }
        let mut out = normalize(acc);
        if !filler.is_empty() {
            let noise = self.fallback.embed_tokens(&filler);
            for (o, n) in out.iter_mut().zip(noise) {
                *o += self.filler_weight * n;
            }
        }
        Ok(EmbeddingVector(out))
    }
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}
