use std::cmp::Ordering;

use crate::provider::{cosine, dot, SparseVector};

use super::segment::Level;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("DimensionMismatch: expected {expected}, got {found}")]
pub struct DimensionMismatch {
    pub expected: usize,
    pub found: usize,
}

/// Sorts by descending score, ties by ascending id, and keeps `k`.
pub fn rank<T: Ord + Clone>(mut scored: Vec<(T, f64)>, k: usize) -> Vec<(T, f64)> {
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then_with(|| a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub segment_id: String,
    pub dataset: String,
    pub level: Level,
    pub text: String,
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Entry {
    segment: Segment,
    sparse: SparseVector,
}

/// Exact top-k cosine index over segments of a fixed dimension.
#[derive(Debug, Clone)]
pub struct VectorIndex {
    dim: usize,
    entries: Vec<Entry>,
}

impl VectorIndex {
    pub fn new(dim: usize) -> Self {
        VectorIndex { dim, entries: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, segment: Segment) -> Result<(), DimensionMismatch> {
        if segment.embedding.len() != self.dim {
            return Err(DimensionMismatch { expected: self.dim, found: segment.embedding.len() });
        }
        self.entries.retain(|e| e.segment.segment_id != segment.segment_id);
        let sparse = SparseVector::from_text(&segment.text);
        self.entries.push(Entry { segment, sparse });
        Ok(())
    }

    pub fn remove_dataset(&mut self, dataset: &str) {
        self.entries.retain(|e| e.segment.dataset != dataset);
    }

    pub fn get(&self, segment_id: &str) -> Option<&Segment> {
        self.entries.iter().map(|e| &e.segment).find(|s| s.segment_id == segment_id)
    }

    pub fn segments(&self) -> impl Iterator<Item = &Segment> {
        self.entries.iter().map(|e| &e.segment)
    }

    /// The `k` most similar segments at `level` (all levels when `None`).
    /// Stored embeddings are unit norm, so cosine is a dot product.
    pub fn search(
        &self,
        query: &[f64],
        k: usize,
        level: Option<Level>,
    ) -> Result<Vec<(String, f64)>, DimensionMismatch> {
        if query.len() != self.dim {
            return Err(DimensionMismatch { expected: self.dim, found: query.len() });
        }
        let norm = dot(query, query).sqrt();
        let scored = self
            .entries
            .iter()
            .filter(|e| level.is_none_or(|l| e.segment.level == l))
            .map(|e| {
                let s = if norm == 0.0 { 0.0 } else { dot(query, &e.segment.embedding) / norm };
                (e.segment.segment_id.clone(), s)
            })
            .collect();
        Ok(rank(scored, k))
    }

    /// Dense and term-frequency scores fused by taking the larger one.
    pub fn hybrid_search(
        &self,
        query: &[f64],
        query_text: &str,
        k: usize,
        level: Option<Level>,
    ) -> Result<Vec<(String, f64)>, DimensionMismatch> {
        if query.len() != self.dim {
            return Err(DimensionMismatch { expected: self.dim, found: query.len() });
        }
        let sparse = SparseVector::from_text(query_text);
        let scored = self
            .entries
            .iter()
            .filter(|e| level.is_none_or(|l| e.segment.level == l))
            .map(|e| {
                let dense = cosine(query, &e.segment.embedding);
                (e.segment.segment_id.clone(), dense.max(sparse.cosine(&e.sparse)))
            })
            .collect();
        Ok(rank(scored, k))
    }
}
