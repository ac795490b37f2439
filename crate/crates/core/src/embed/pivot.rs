use ndarray::{s, Array2};

use super::EmbeddingMatrix;
use crate::{Error, Result};

/// Width of each half of a pivot-private vector.
pub const PIVOT_HALF_DIM: usize = 256;

#[derive(Debug, Clone)]
pub struct PivotPrivate {
    pub l1: EmbeddingMatrix,
    pub l2: EmbeddingMatrix,
    /// Per language: tokens absent from the shared matrix (zero first half).
    pub missing_shared: [usize; 2],
    /// Per language: tokens absent from the private matrix (zero second half).
    pub missing_private: [usize; 2],
}

/// `[shared ∥ private]` per token, with each language's vocabulary taken from
/// its private matrix.
pub fn compose_pivot_private(
    shared: &EmbeddingMatrix,
    private_l1: &EmbeddingMatrix,
    private_l2: &EmbeddingMatrix,
) -> Result<PivotPrivate> {
    compose_pivot_private_for(
        shared,
        private_l1,
        private_l2,
        private_l1.tokens(),
        private_l2.tokens(),
    )
}

/// Same as [`compose_pivot_private`] over explicit vocabularies. Tokens
/// missing from a source get zeros in that half and are counted.
pub fn compose_pivot_private_for(
    shared: &EmbeddingMatrix,
    private_l1: &EmbeddingMatrix,
    private_l2: &EmbeddingMatrix,
    vocab_l1: &[String],
    vocab_l2: &[String],
) -> Result<PivotPrivate> {
    for m in [shared, private_l1, private_l2] {
        if m.dim() != PIVOT_HALF_DIM {
            return Err(Error::DimensionMismatch {
                expected: PIVOT_HALF_DIM,
                found: m.dim(),
            });
        }
    }
    let build =
        |private: &EmbeddingMatrix, vocab: &[String]| -> Result<(EmbeddingMatrix, usize, usize)> {
            let mut v = Array2::<f64>::zeros((vocab.len(), 2 * PIVOT_HALF_DIM));
            let (mut miss_s, mut miss_p) = (0, 0);
            let mut counts = Vec::with_capacity(vocab.len());
            for (i, t) in vocab.iter().enumerate() {
                match shared.get(t) {
                    Some(row) => v.slice_mut(s![i, ..PIVOT_HALF_DIM]).assign(&row),
                    None => miss_s += 1,
                }
                match private.index_of(t) {
                    Some(j) => {
                        v.slice_mut(s![i, PIVOT_HALF_DIM..]).assign(&private.row(j));
                        counts.push(private.counts()[j]);
                    }
                    None => {
                        miss_p += 1;
                        counts.push(shared.index_of(t).map_or(0, |j| shared.counts()[j]));
                    }
                }
            }
            Ok((
                EmbeddingMatrix::new(vocab.to_vec(), counts, v)?,
                miss_s,
                miss_p,
            ))
        };
    let (l1, s1, p1) = build(private_l1, vocab_l1)?;
    let (l2, s2, p2) = build(private_l2, vocab_l2)?;
    Ok(PivotPrivate {
        l1,
        l2,
        missing_shared: [s1, s2],
        missing_private: [p1, p2],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(tokens: &[&str], fill: f64) -> EmbeddingMatrix {
        let v = Array2::from_shape_fn((tokens.len(), PIVOT_HALF_DIM), |(i, j)| {
            fill + i as f64 + j as f64 * 1e-3
        });
        EmbeddingMatrix::new(
            tokens.iter().map(|s| s.to_string()).collect(),
            vec![1; tokens.len()],
            v,
        )
        .unwrap()
    }

    #[test]
    fn concatenation_and_fill() {
        let shared = m(&["好", "佢"], 10.0);
        let a = m(&["好", "的"], 20.0);
        let b = m(&["好", "佢"], 30.0);
        let out = compose_pivot_private(&shared, &a, &b).unwrap();
        assert_eq!(out.l1.dim(), 512);
        let hao = out.l1.get("好").unwrap();
        assert_eq!(hao.slice(s![..256]), shared.get("好").unwrap());
        assert_eq!(hao.slice(s![256..]), a.get("好").unwrap());
        let de = out.l1.get("的").unwrap();
        assert!(de.slice(s![..256]).iter().all(|&x| x == 0.0));
        assert_eq!(out.missing_shared, [1, 0]);
        assert_eq!(out.missing_private, [0, 0]);
    }

    #[test]
    fn rejects_wrong_width() {
        let bad = EmbeddingMatrix::new(vec!["a".into()], vec![1], Array2::zeros((1, 128))).unwrap();
        let ok = m(&["a"], 0.0);
        assert!(matches!(
            compose_pivot_private(&bad, &ok, &ok),
            Err(Error::DimensionMismatch {
                expected: 256,
                found: 128
            })
        ));
        assert!(compose_pivot_private(&ok, &ok, &bad).is_err());
    }
}
