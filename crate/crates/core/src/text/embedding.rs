use std::borrow::Cow;
use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const DEFAULT_EMBED_DIM: usize = 200;
pub const MAX_SENTENCE_LEN: usize = 150;

/// Half-width of the uniform range used for out-of-vocabulary vectors.
const OOV_RANGE: f64 = 0.25;

/// Frozen word vectors of a fixed dimension.
///
/// Words missing from the table get a vector derived from a hash of the word
/// and the table seed, so a lookup always returns the same vector for the same
/// word and seed. The padding vector is all zeros.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
    oov_seed: u64,
}

impl EmbeddingTable {
    pub fn new(dim: usize, oov_seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument(
                "embedding dimension must be positive".into(),
            ));
        }
        Ok(Self {
            dim,
            vectors: HashMap::new(),
            oov_seed,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn oov_seed(&self) -> u64 {
        self.oov_seed
    }

    pub fn with_oov_seed(mut self, seed: u64) -> Self {
        self.oov_seed = seed;
        self
    }

    /// Inserts or replaces a word vector.
    pub fn insert(&mut self, word: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::shape(
                "embedding",
                format!("vector of length {} in a table of dimension {}", vector.len(), self.dim),
            ));
        }
        self.vectors.insert(word.into(), vector);
        Ok(())
    }

    pub fn contains(&self, word: &str) -> bool {
        self.vectors.contains_key(word)
    }

    /// The stored vector, if the word is in the table.
    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.vectors.get(word).map(Vec::as_slice)
    }

    /// The stored vector or the deterministic out-of-vocabulary fallback.
    pub fn lookup(&self, word: &str) -> Cow<'_, [f64]> {
        match self.vectors.get(word) {
            Some(v) => Cow::Borrowed(v),
            None => Cow::Owned(self.oov_vector(word)),
        }
    }

    fn oov_vector(&self, word: &str) -> Vec<f64> {
        let mut hasher = Sha256::new();
        hasher.update(self.oov_seed.to_le_bytes());
        hasher.update(word.as_bytes());
        let seed: [u8; 32] = hasher.finalize().into();
        let mut rng = ChaCha8Rng::from_seed(seed);
        (0..self.dim)
            .map(|_| rng.gen_range(-OOV_RANGE..=OOV_RANGE))
            .collect()
    }

    /// Words in lexicographic order.
    pub fn words(&self) -> Vec<&str> {
        let mut words: Vec<&str> = self.vectors.keys().map(String::as_str).collect();
        words.sort_unstable();
        words
    }

    /// Embeds a token sequence into a fixed-size, zero-padded matrix.
    pub fn embed_sentence<S: AsRef<str>>(&self, tokens: &[S], max_len: usize) -> SentenceMatrix {
        let n = tokens.len().min(max_len);
        let mut data = vec![0.0; max_len * self.dim];
        for (row, token) in tokens.iter().take(n).enumerate() {
            data[row * self.dim..(row + 1) * self.dim].copy_from_slice(&self.lookup(token.as_ref()));
        }
        SentenceMatrix {
            len: n,
            max_len,
            dim: self.dim,
            data,
        }
    }
}

/// A sentence stored as `max_len × dim` word vectors; rows past the true
/// length hold the zero padding vector.
#[derive(Clone, Debug, PartialEq)]
pub struct SentenceMatrix {
    len: usize,
    max_len: usize,
    dim: usize,
    data: Vec<f64>,
}

impl SentenceMatrix {
    /// Number of real (non-padding) tokens.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// The first `rows` rows, flattened.
    pub fn leading_rows(&self, rows: usize) -> &[f64] {
        &self.data[..rows.min(self.max_len) * self.dim]
    }
}
