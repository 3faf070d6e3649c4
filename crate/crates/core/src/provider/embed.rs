use std::collections::BTreeMap;

use super::{Embedder, ProviderError};

pub const MOCK_EMBEDDING_DIM: usize = 64;

/// Deterministic offline embedder: signed feature hashing of lowercase word
/// tokens into `dim` buckets, then L2 normalization. Texts sharing words land
/// close together, which is all the retrieval paths need for testing.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
    seed: u64,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        HashEmbedder { dim: MOCK_EMBEDDING_DIM, seed: 0x5eed }
    }
}

fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed.wrapping_mul(0x100_0000_01b3);
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    // final avalanche so nearby tokens spread over buckets
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    h
}

/// Lowercase alphanumeric word tokens.
pub fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(|t| t.to_lowercase())
}

impl HashEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        HashEmbedder { dim, seed }
    }

    pub fn vector(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        let mut any = false;
        for tok in tokens(text) {
            let h = fnv1a(self.seed, tok.as_bytes());
            let idx = (h % self.dim as u64) as usize;
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            v[idx] += sign;
            any = true;
        }
        if !any || v.iter().all(|x| *x == 0.0) {
            let h = fnv1a(self.seed ^ 0xa5a5, text.as_bytes());
            v.iter_mut().for_each(|x| *x = 0.0);
            v[(h % self.dim as u64) as usize] = 1.0;
        }
        normalize(&mut v);
        v
    }
}

impl Embedder for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        Ok(texts.iter().map(|t| self.vector(t)).collect())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn normalize(v: &mut [f64]) {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Cosine similarity; 0 when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

/// Term-frequency bag over lowercase word tokens.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseVector(pub BTreeMap<String, f64>);

impl SparseVector {
    pub fn from_text(text: &str) -> Self {
        let mut m = BTreeMap::new();
        for t in tokens(text) {
            *m.entry(t).or_insert(0.0) += 1.0;
        }
        SparseVector(m)
    }

    pub fn cosine(&self, other: &SparseVector) -> f64 {
        let (small, large) = if self.0.len() <= other.0.len() { (self, other) } else { (other, self) };
        let d: f64 = small.0.iter().filter_map(|(k, v)| large.0.get(k).map(|w| v * w)).sum();
        let na: f64 = self.0.values().map(|v| v * v).sum::<f64>().sqrt();
        let nb: f64 = other.0.values().map(|v| v * v).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            0.0
        } else {
            d / (na * nb)
        }
    }
}
