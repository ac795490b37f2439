//! Token embeddings and cross-lingual alignment.
//!
//! Three routes produce cross-lingual vectors:
//! - mapping: train each language separately, then rotate one space onto the
//!   other with orthogonal Procrustes on identically-spelled anchor tokens
//!   (optionally refined by CSLS self-learning);
//! - concatenation: train one skip-gram model on both corpora together;
//! - pivot-private: concatenate a shared half trained on both corpora with a
//!   private half trained per language.

mod io;
mod mapping;
mod pivot;
mod skipgram;

pub use io::{export_embeddings, import_embeddings, read_embeddings, write_embeddings};
pub use mapping::{
    apply_mapping, build_anchor_dict, csls_scores, induce_dictionary, learn_mapping,
    mapping_objective, normalize_rows, precision_at_1, procrustes, AnchorDictionary, MappingConfig,
    MappingMatrix, MappingReport,
};
pub use pivot::{compose_pivot_private, compose_pivot_private_for, PivotPrivate, PIVOT_HALF_DIM};
pub use skipgram::{sgns_loss_grad, train_skipgram, SgnsGrad, SkipGramConfig, SkipGramReport};

use std::collections::HashMap;

use ndarray::{Array2, ArrayView1};

use crate::{Error, Result};

/// Dense vectors, one row per token.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    tokens: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, usize>,
    vectors: Array2<f64>,
}

impl EmbeddingMatrix {
    pub fn new(tokens: Vec<String>, counts: Vec<u64>, vectors: Array2<f64>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::EmptyVocabulary);
        }
        if vectors.nrows() != tokens.len() {
            return Err(Error::DimensionMismatch {
                expected: tokens.len(),
                found: vectors.nrows(),
            });
        }
        if counts.len() != tokens.len() {
            return Err(Error::LengthMismatch {
                left: tokens.len(),
                right: counts.len(),
            });
        }
        if !vectors.iter().all(|v| v.is_finite()) {
            return Err(Error::format("embedding matrix", "non-finite entry"));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::format(
                    "embedding matrix",
                    format!("duplicate token `{t}`"),
                ));
            }
        }
        Ok(EmbeddingMatrix {
            tokens,
            counts,
            index,
            vectors,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn vectors(&self) -> &Array2<f64> {
        &self.vectors
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.vectors.row(i)
    }

    pub fn get(&self, token: &str) -> Option<ArrayView1<'_, f64>> {
        self.index_of(token).map(|i| self.row(i))
    }

    /// Same tokens, new vectors (e.g. after mapping).
    pub fn with_vectors(&self, vectors: Array2<f64>) -> Result<Self> {
        Self::new(self.tokens.clone(), self.counts.clone(), vectors)
    }
}

pub fn cosine(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        a.dot(&b) / (na * nb)
    }
}

/// Embedding table in vocabulary order for model initialization. Rows are
/// scaled to unit norm; tokens without a vector (specials, rare tokens) get
/// small random rows of the same scale.
pub fn vocab_table(m: &EmbeddingMatrix, vocab: &crate::vocab::Vocab, seed: u64) -> Array2<f64> {
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;

    let d = m.dim();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut out = Array2::from_shape_simple_fn((vocab.len(), d), || {
        rng.sample::<f64, _>(StandardNormal) / (d as f64).sqrt()
    });
    for (id, tok) in vocab.learned() {
        if let Some(v) = m.get(tok) {
            let n = v.dot(&v).sqrt();
            if n > 0.0 {
                out.row_mut(id as usize).assign(&(&v / n));
            }
        }
    }
    out
}
