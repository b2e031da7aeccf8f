//! Exact cosine top-k search over L2-normalized embeddings, with persistence.
//!
//! The index is a flat store: search scans every entry and computes exact dot
//! products. Corpora here are thousands of chunks, so exactness costs nothing
//! and keeps the search oracle-testable against a brute-force scan.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::embed::{EmbedError, TextEmbedder};

/// Allowed deviation from unit norm.
pub const NORM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("dimension mismatch: index is {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("vector is not unit-norm (|v| = {0})")]
    NotNormalized(f64),
    #[error("cannot normalize a zero vector")]
    ZeroVector,
    #[error("duplicate chunk id {0}")]
    DuplicateId(String),
    #[error("corrupt index file: {0}")]
    CorruptIndex(String),
    #[error("index built with embedder {found:?} but {required:?} is required")]
    EmbedderMismatch { required: String, found: String },
    #[error("io failure: {0}")]
    IoFailure(#[from] std::io::Error),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

/// A unit-norm vector of the index dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    values: Vec<f64>,
}

impl Embedding {
    /// Wrap a vector that is already normalized (within [`NORM_TOLERANCE`]).
    pub fn from_normalized(values: Vec<f64>) -> Result<Self, IndexError> {
        let norm = l2_norm(&values);
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(IndexError::NotNormalized(norm));
        }
        Ok(Self { values })
    }

    /// Normalize and wrap.
    pub fn normalized(mut values: Vec<f64>) -> Result<Self, IndexError> {
        let norm = l2_norm(&values);
        if norm == 0.0 {
            return Err(IndexError::ZeroVector);
        }
        for v in &mut values {
            *v /= norm;
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn dot(&self, other: &Embedding) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }
}

fn l2_norm(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// One search result: a chunk id and its cosine similarity to the query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub chunk_id: String,
    pub score: f64,
}

/// Flat store of `(chunk_id, embedding)` pairs sharing one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    dimension: usize,
    embedder_tag: String,
    entries: Vec<(String, Embedding)>,
}

#[derive(Serialize, Deserialize)]
struct IndexHeader {
    dimension: usize,
    count: usize,
    embedder_tag: String,
    checksum: String,
}

#[derive(Serialize, Deserialize)]
struct EntryLine {
    id: String,
    values: Vec<f64>,
}

impl VectorIndex {
    pub fn new(dimension: usize, embedder_tag: impl Into<String>) -> Self {
        Self { dimension, embedder_tag: embedder_tag.into(), entries: Vec::new() }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn embedder_tag(&self) -> &str {
        &self.embedder_tag
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, chunk_id: impl Into<String>, embedding: Embedding) -> Result<(), IndexError> {
        let chunk_id = chunk_id.into();
        if embedding.dimension() != self.dimension {
            return Err(IndexError::DimensionMismatch {
                expected: self.dimension,
                got: embedding.dimension(),
            });
        }
        if self.entries.iter().any(|(id, _)| *id == chunk_id) {
            return Err(IndexError::DuplicateId(chunk_id));
        }
        self.entries.push((chunk_id, embedding));
        Ok(())
    }

    /// Embed `(id, text)` pairs and build an index tagged by the embedder.
    pub fn build<'a, I>(items: I, embedder: &dyn TextEmbedder) -> Result<Self, IndexError>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let mut entries = Vec::new();
        let mut dimension = None;
        for (id, text) in items {
            let embedding = embedder.embed(text)?;
            let dim = *dimension.get_or_insert(embedding.dimension());
            if embedding.dimension() != dim {
                return Err(IndexError::DimensionMismatch { expected: dim, got: embedding.dimension() });
            }
            entries.push((id.to_string(), embedding));
        }
        let mut index = Self::new(dimension.unwrap_or(0), embedder.tag());
        for (id, embedding) in entries {
            index.insert(id, embedding)?;
        }
        Ok(index)
    }

    /// Exact top-k by cosine similarity (dot product of unit vectors),
    /// descending score, ties broken by ascending chunk id. Returns
    /// `min(k, len)` hits.
    pub fn search(&self, query: &Embedding, k: usize) -> Result<Vec<RetrievalHit>, IndexError> {
        if query.dimension() != self.dimension {
            return Err(IndexError::DimensionMismatch {
                expected: self.dimension,
                got: query.dimension(),
            });
        }
        let mut hits: Vec<RetrievalHit> = self
            .entries
            .iter()
            .map(|(id, emb)| RetrievalHit { chunk_id: id.clone(), score: emb.dot(query) })
            .collect();
        hits.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .expect("scores are finite")
                .then_with(|| a.chunk_id.cmp(&b.chunk_id))
        });
        hits.truncate(k);
        Ok(hits)
    }

    /// Persist as a header line (dimension, count, embedder tag, checksum of
    /// the entry section) followed by one JSON line per entry.
    pub fn save(&self, path: &Path) -> Result<(), IndexError> {
        let mut body = Vec::new();
        for (id, emb) in &self.entries {
            let line = EntryLine { id: id.clone(), values: emb.values.clone() };
            serde_json::to_writer(&mut body, &line).expect("entry serializes");
            body.push(b'\n');
        }
        let header = IndexHeader {
            dimension: self.dimension,
            count: self.entries.len(),
            embedder_tag: self.embedder_tag.clone(),
            checksum: format!("{:x}", Sha256::digest(&body)),
        };
        let mut file = fs::File::create(path)?;
        serde_json::to_writer(&mut file, &header).map_err(io_from_json)?;
        file.write_all(b"\n")?;
        file.write_all(&body)?;
        Ok(())
    }

    /// Load a persisted index. When `required_tag` is given, the file's
    /// embedder tag must match exactly.
    pub fn load(path: &Path, required_tag: Option<&str>) -> Result<Self, IndexError> {
        let raw = fs::read_to_string(path)?;
        let (header_line, body) = raw
            .split_once('\n')
            .ok_or_else(|| IndexError::CorruptIndex("missing header line".into()))?;
        let header: IndexHeader = serde_json::from_str(header_line)
            .map_err(|e| IndexError::CorruptIndex(format!("bad header: {e}")))?;
        if let Some(required) = required_tag {
            if required != header.embedder_tag {
                return Err(IndexError::EmbedderMismatch {
                    required: required.to_string(),
                    found: header.embedder_tag,
                });
            }
        }
        let checksum = format!("{:x}", Sha256::digest(body.as_bytes()));
        if checksum != header.checksum {
            return Err(IndexError::CorruptIndex("checksum mismatch".into()));
        }
        let mut index = Self::new(header.dimension, header.embedder_tag);
        for (i, line) in body.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: EntryLine = serde_json::from_str(line)
                .map_err(|e| IndexError::CorruptIndex(format!("entry {}: {e}", i + 1)))?;
            if entry.values.len() != header.dimension {
                return Err(IndexError::CorruptIndex(format!(
                    "entry {}: dimension {} != {}",
                    i + 1,
                    entry.values.len(),
                    header.dimension
                )));
            }
            let embedding = Embedding::from_normalized(entry.values)
                .map_err(|e| IndexError::CorruptIndex(format!("entry {}: {e}", i + 1)))?;
            index.insert(entry.id, embedding)?;
        }
        if index.len() != header.count {
            return Err(IndexError::CorruptIndex(format!(
                "entry count {} != header count {}",
                index.len(),
                header.count
            )));
        }
        Ok(index)
    }
}

fn io_from_json(e: serde_json::Error) -> IndexError {
    IndexError::IoFailure(std::io::Error::other(e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::HashedBowEmbedder;

    fn basis(dim: usize, axis: usize) -> Embedding {
        let mut v = vec![0.0; dim];
        v[axis] = 1.0;
        Embedding::from_normalized(v).unwrap()
    }

    #[test]
    fn self_similarity_is_one() {
        let mut index = VectorIndex::new(3, "test");
        index.insert("e1", basis(3, 0)).unwrap();
        index.insert("e2", basis(3, 1)).unwrap();
        let hits = index.search(&basis(3, 0), 1).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].chunk_id, "e1");
        assert!((hits[0].score - 1.0).abs() < 1e-12);
    }

    #[test]
    fn k_clamps_to_entry_count() {
        let mut index = VectorIndex::new(2, "test");
        for (i, id) in ["a", "b", "c"].iter().enumerate() {
            index.insert(*id, basis(2, i % 2)).unwrap();
        }
        assert_eq!(index.search(&basis(2, 0), 10).unwrap().len(), 3);
    }

    #[test]
    fn ties_break_by_ascending_id() {
        let mut index = VectorIndex::new(2, "test");
        index.insert("zeta", basis(2, 0)).unwrap();
        index.insert("alpha", basis(2, 0)).unwrap();
        let hits = index.search(&basis(2, 0), 2).unwrap();
        assert_eq!(hits[0].chunk_id, "alpha");
        assert_eq!(hits[1].chunk_id, "zeta");
    }

    #[test]
    fn scores_are_non_increasing() {
        let mut index = VectorIndex::new(2, "test");
        index.insert("x", basis(2, 0)).unwrap();
        index.insert("y", basis(2, 1)).unwrap();
        index.insert("m", Embedding::normalized(vec![1.0, 1.0]).unwrap()).unwrap();
        let hits = index.search(&basis(2, 0), 3).unwrap();
        for pair in hits.windows(2) {
            assert!(pair[0].score >= pair[1].score);
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let index = VectorIndex::new(3, "test");
        let err = index.search(&basis(2, 0), 1);
        assert!(matches!(err, Err(IndexError::DimensionMismatch { expected: 3, got: 2 })));
    }

    #[test]
    fn duplicate_id_rejected() {
        let mut index = VectorIndex::new(2, "test");
        index.insert("a", basis(2, 0)).unwrap();
        assert!(matches!(index.insert("a", basis(2, 1)), Err(IndexError::DuplicateId(_))));
    }

    #[test]
    fn non_normalized_vectors_rejected() {
        assert!(matches!(
            Embedding::from_normalized(vec![1.0, 1.0]),
            Err(IndexError::NotNormalized(_))
        ));
        assert!(matches!(Embedding::normalized(vec![0.0, 0.0]), Err(IndexError::ZeroVector)));
    }

    #[test]
    fn round_trip_is_exact() {
        let embedder = HashedBowEmbedder::default();
        let index = VectorIndex::build(
            vec![("a", "open the data file"), ("b", "save a screenshot")],
            &embedder,
        )
        .unwrap();
        let file = tempfile::NamedTempFile::new().unwrap();
        index.save(file.path()).unwrap();
        let loaded = VectorIndex::load(file.path(), None).unwrap();
        assert_eq!(loaded, index);
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let embedder = HashedBowEmbedder::default();
        let index =
            VectorIndex::build(vec![("a", "alpha beta"), ("b", "gamma delta")], &embedder).unwrap();
        let file = tempfile::NamedTempFile::new().unwrap();
        index.save(file.path()).unwrap();
        let raw = fs::read_to_string(file.path()).unwrap();
        fs::write(file.path(), &raw[..raw.len() - 10]).unwrap();
        assert!(matches!(
            VectorIndex::load(file.path(), None),
            Err(IndexError::CorruptIndex(_))
        ));
    }

    #[test]
    fn embedder_tag_is_enforced_on_demand() {
        let mut index = VectorIndex::new(2, "remote-x");
        index.insert("a", basis(2, 0)).unwrap();
        let file = tempfile::NamedTempFile::new().unwrap();
        index.save(file.path()).unwrap();
        assert!(VectorIndex::load(file.path(), Some("remote-x")).is_ok());
        let err = VectorIndex::load(file.path(), Some("fallback-v1"));
        assert!(matches!(err, Err(IndexError::EmbedderMismatch { .. })));
    }
}
