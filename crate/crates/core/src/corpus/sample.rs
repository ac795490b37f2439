use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Sentence;
use crate::{Error, Result};

/// Width of a sentence-length bucket, in characters.
pub const BUCKET_WIDTH: usize = 5;
/// Lower bound of the final, open-ended bucket.
pub const OPEN_BUCKET_LOW: usize = 100;

/// Bucket index for a sentence of `len` characters.
pub fn length_bucket(len: usize) -> usize {
    len.min(OPEN_BUCKET_LOW) / BUCKET_WIDTH
}

/// Stratified downsampling that preserves the length distribution.
///
/// Each length bucket gets a quota proportional to its share of the input
/// (largest-remainder rounding, so quotas sum to exactly `target`); members
/// are drawn by a seeded shuffle within the bucket. Output keeps input order.
pub fn downsample_balanced(corpus: &[Sentence], target: usize, seed: u64) -> Result<Vec<Sentence>> {
    let lengths: Vec<usize> = corpus.iter().map(Sentence::char_len).collect();
    Ok(downsample_indices(&lengths, target, seed)?
        .into_iter()
        .map(|i| corpus[i].clone())
        .collect())
}

/// Index-level form of [`downsample_balanced`]: returns sorted indices.
pub fn downsample_indices(lengths: &[usize], target: usize, seed: u64) -> Result<Vec<usize>> {
    let n = lengths.len();
    if target > n {
        return Err(Error::InsufficientData {
            requested: target,
            available: n,
        });
    }
    let n_buckets = length_bucket(OPEN_BUCKET_LOW) + 1;
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_buckets];
    for (i, &len) in lengths.iter().enumerate() {
        members[length_bucket(len)].push(i);
    }

    let mut quota = vec![0usize; n_buckets];
    let mut remainders = Vec::with_capacity(n_buckets);
    let mut assigned = 0;
    for (b, m) in members.iter().enumerate() {
        let exact = m.len() * target;
        quota[b] = exact / n.max(1);
        assigned += quota[b];
        remainders.push((exact % n.max(1), b));
    }
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, b) in remainders.iter().take(target - assigned) {
        quota[b] += 1;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = Vec::with_capacity(target);
    for (b, m) in members.iter_mut().enumerate() {
        m.shuffle(&mut rng);
        picked.extend_from_slice(&m[..quota[b]]);
    }
    picked.sort_unstable();
    Ok(picked)
}
