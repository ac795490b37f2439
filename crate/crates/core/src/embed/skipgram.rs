use std::collections::HashMap;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::EmbeddingMatrix;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SkipGramConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    /// Initial learning rate; decays linearly to 1e-4 of itself.
    pub lr: f64,
    pub min_count: u64,
    pub seed: u64,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        SkipGramConfig {
            dim: 512,
            window: 5,
            negatives: 5,
            epochs: 5,
            lr: 0.025,
            min_count: 1,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SkipGramReport {
    /// Mean per-pair loss of each epoch.
    pub epoch_losses: Vec<f64>,
    pub pairs_per_epoch: u64,
}

/// Loss and gradients of one (center, context, negatives) example:
/// `-ln σ(u·v) - Σ ln σ(-n_k·v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SgnsGrad {
    pub loss: f64,
    pub d_center: Vec<f64>,
    pub d_context: Vec<f64>,
    pub d_negatives: Vec<Vec<f64>>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `-ln σ(x)` without overflow.
fn neg_log_sigmoid(x: f64) -> f64 {
    if x > 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sgns_loss_grad(center: &[f64], context: &[f64], negatives: &[&[f64]]) -> SgnsGrad {
    let d = center.len();
    let mut d_center = vec![0.0; d];
    let s = dot(center, context);
    let mut loss = neg_log_sigmoid(s);
    // d/ds -ln σ(s) = σ(s) - 1
    let g = sigmoid(s) - 1.0;
    let d_context: Vec<f64> = center.iter().map(|c| g * c).collect();
    for (dc, u) in d_center.iter_mut().zip(context) {
        *dc += g * u;
    }
    let mut d_negatives = Vec::with_capacity(negatives.len());
    for n in negatives {
        let s = dot(center, n);
        loss += neg_log_sigmoid(-s);
        // d/ds -ln σ(-s) = σ(s)
        let g = sigmoid(s);
        d_negatives.push(center.iter().map(|c| g * c).collect());
        for (dc, x) in d_center.iter_mut().zip(n.iter()) {
            *dc += g * x;
        }
    }
    SgnsGrad {
        loss,
        d_center,
        d_context,
        d_negatives,
    }
}

/// Cumulative unigram^0.75 distribution for negative sampling.
struct NegativeTable {
    cumulative: Vec<f64>,
}

impl NegativeTable {
    fn new(counts: &[u64]) -> Self {
        let mut acc = 0.0;
        let cumulative = counts
            .iter()
            .map(|&c| {
                acc += (c as f64).powf(0.75);
                acc
            })
            .collect();
        NegativeTable { cumulative }
    }

    fn sample(&self, rng: &mut impl Rng) -> usize {
        let total = *self.cumulative.last().expect("non-empty vocab");
        let x = rng.random::<f64>() * total;
        self.cumulative
            .partition_point(|&c| c <= x)
            .min(self.cumulative.len() - 1)
    }
}

/// Skip-gram with negative sampling, serial and deterministic for a seed.
/// Returns the input (center) vectors.
pub fn train_skipgram(
    corpus: &[Vec<String>],
    cfg: &SkipGramConfig,
) -> Result<(EmbeddingMatrix, SkipGramReport)> {
    if cfg.dim == 0 || cfg.window == 0 || cfg.negatives == 0 {
        return Err(Error::InvalidArgument(
            "dim, window and negatives must be ≥ 1".into(),
        ));
    }
    let mut freq: HashMap<&str, u64> = HashMap::new();
    for s in corpus {
        for t in s {
            *freq.entry(t).or_insert(0) += 1;
        }
    }
    let mut vocab: Vec<(&str, u64)> = freq
        .into_iter()
        .filter(|(_, c)| *c >= cfg.min_count)
        .collect();
    if vocab.is_empty() {
        return Err(Error::EmptyVocabulary);
    }
    vocab.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let index: HashMap<&str, usize> = vocab
        .iter()
        .enumerate()
        .map(|(i, (t, _))| (*t, i))
        .collect();
    let counts: Vec<u64> = vocab.iter().map(|(_, c)| *c).collect();
    let sentences: Vec<Vec<usize>> = corpus
        .iter()
        .map(|s| {
            s.iter()
                .filter_map(|t| index.get(t.as_str()).copied())
                .collect()
        })
        .collect();

    let d = cfg.dim;
    let v = vocab.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut w_in = Array2::from_shape_simple_fn((v, d), || (rng.random::<f64>() - 0.5) / d as f64);
    let mut w_out = Array2::<f64>::zeros((v, d));
    let table = NegativeTable::new(&counts);

    let tokens_per_epoch: usize = sentences.iter().map(Vec::len).sum();
    let total = (tokens_per_epoch * cfg.epochs).max(1) as f64;
    let mut processed = 0usize;
    let mut report = SkipGramReport::default();
    let mut neg_ids = Vec::with_capacity(cfg.negatives);

    for _ in 0..cfg.epochs {
        let mut loss_sum = 0.0;
        let mut pairs = 0u64;
        for s in &sentences {
            for (i, &center) in s.iter().enumerate() {
                let lr = cfg.lr * (1.0 - processed as f64 / total).max(1e-4);
                processed += 1;
                let lo = i.saturating_sub(cfg.window);
                let hi = (i + cfg.window + 1).min(s.len());
                for (j, &ctx) in s.iter().enumerate().take(hi).skip(lo) {
                    if j == i {
                        continue;
                    }
                    neg_ids.clear();
                    while neg_ids.len() < cfg.negatives {
                        let n = table.sample(&mut rng);
                        if n != ctx || v == 1 {
                            neg_ids.push(n);
                        }
                    }
                    let c = w_in.row(center).to_vec();
                    let u = w_out.row(ctx).to_vec();
                    let negs: Vec<Vec<f64>> =
                        neg_ids.iter().map(|&n| w_out.row(n).to_vec()).collect();
                    let neg_refs: Vec<&[f64]> = negs.iter().map(Vec::as_slice).collect();
                    let g = sgns_loss_grad(&c, &u, &neg_refs);
                    loss_sum += g.loss;
                    pairs += 1;
                    w_out
                        .row_mut(ctx)
                        .zip_mut_with(&ndarray::aview1(&g.d_context), |w, d| *w -= lr * d);
                    for (&n, dn) in neg_ids.iter().zip(&g.d_negatives) {
                        w_out
                            .row_mut(n)
                            .zip_mut_with(&ndarray::aview1(dn), |w, d| *w -= lr * d);
                    }
                    w_in.row_mut(center)
                        .zip_mut_with(&ndarray::aview1(&g.d_center), |w, d| *w -= lr * d);
                }
            }
        }
        report.pairs_per_epoch = pairs;
        report.epoch_losses.push(if pairs > 0 {
            loss_sum / pairs as f64
        } else {
            0.0
        });
    }

    let tokens = vocab.iter().map(|(t, _)| t.to_string()).collect();
    Ok((EmbeddingMatrix::new(tokens, counts, w_in)?, report))
}
