use std::collections::{BTreeSet, HashMap};

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, Axis};

use super::EmbeddingMatrix;
use crate::vocab::Vocab;
use crate::{Error, Result};

/// Seed translation pairs `(row in A, row in B)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnchorDictionary {
    pub pairs: Vec<(usize, usize)>,
}

impl AnchorDictionary {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// `tokenA<TAB>tokenB` per line.
    pub fn to_text(&self, a: &EmbeddingMatrix, b: &EmbeddingMatrix) -> String {
        self.pairs
            .iter()
            .map(|&(i, j)| format!("{}\t{}\n", a.tokens()[i], b.tokens()[j]))
            .collect()
    }
}

/// Tokens spelled identically in both sides, by descending joint frequency
/// (ties by token). Works on embedding rows.
pub fn build_anchor_dict(a: &EmbeddingMatrix, b: &EmbeddingMatrix) -> Result<AnchorDictionary> {
    let mut shared: Vec<(u64, &str, usize, usize)> = a
        .tokens()
        .iter()
        .enumerate()
        .filter_map(|(i, t)| {
            b.index_of(t)
                .map(|j| (a.counts()[i] + b.counts()[j], t.as_str(), i, j))
        })
        .collect();
    if shared.is_empty() {
        return Err(Error::NoAnchors);
    }
    shared.sort_by(|x, y| y.0.cmp(&x.0).then(x.1.cmp(y.1)));
    Ok(AnchorDictionary {
        pairs: shared.into_iter().map(|(_, _, i, j)| (i, j)).collect(),
    })
}

impl AnchorDictionary {
    /// Same rule over two vocabularies; ids are vocabulary ids. Reserved
    /// tokens never anchor.
    pub fn from_vocabs(a: &Vocab, b: &Vocab) -> Result<Self> {
        let mut shared: Vec<(u64, &str, usize, usize)> = a
            .learned()
            .filter_map(|(i, t)| {
                b.id(t)
                    .map(|j| (a.count(i) + b.count(j), t, i as usize, j as usize))
            })
            .collect();
        if shared.is_empty() {
            return Err(Error::NoAnchors);
        }
        shared.sort_by(|x, y| y.0.cmp(&x.0).then(x.1.cmp(y.1)));
        Ok(AnchorDictionary {
            pairs: shared.into_iter().map(|(_, _, i, j)| (i, j)).collect(),
        })
    }
}

/// Orthogonal map applied to row vectors: `y ≈ x · W`.
#[derive(Debug, Clone, PartialEq)]
pub struct MappingMatrix {
    pub w: Array2<f64>,
}

impl MappingMatrix {
    /// `max |WᵀW − I|`.
    pub fn orthogonality_error(&self) -> f64 {
        let wtw = self.w.t().dot(&self.w);
        let mut m: f64 = 0.0;
        for ((i, j), v) in wtw.indexed_iter() {
            let target = if i == j { 1.0 } else { 0.0 };
            m = m.max((v - target).abs());
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MappingConfig {
    pub self_learning_iters: usize,
    pub csls_k: usize,
    /// Length-normalize then mean-center both spaces before solving.
    pub normalize: bool,
}

impl Default for MappingConfig {
    fn default() -> Self {
        MappingConfig {
            self_learning_iters: 0,
            csls_k: 10,
            normalize: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MappingReport {
    /// Per self-learning iteration: objective of the previous map and of the
    /// re-solved map, both on that iteration's induced dictionary.
    pub objectives: Vec<(f64, f64)>,
    pub dictionary_sizes: Vec<usize>,
    pub orthogonality_errors: Vec<f64>,
}

/// Unit-length rows, then subtract the column mean.
pub fn normalize_rows(m: &Array2<f64>) -> Array2<f64> {
    let mut out = m.clone();
    for mut row in out.rows_mut() {
        let n = row.dot(&row).sqrt();
        if n > 0.0 {
            row /= n;
        }
    }
    if out.nrows() > 0 {
        let mean: Array1<f64> = out.mean_axis(Axis(0)).expect("non-empty");
        out -= &mean;
    }
    out
}

fn to_dmatrix(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

fn from_dmatrix(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// Closed-form `argmin_W ‖XW − Y‖_F` over orthogonal W: with `XᵀY = UΣVᵀ`,
/// `W = UVᵀ`. When `XᵀY` is rank-deficient the free directions are fixed so
/// that `det W = +1`.
pub fn procrustes(xs: &Array2<f64>, ys: &Array2<f64>) -> Array2<f64> {
    let m = to_dmatrix(&xs.t().dot(ys));
    let svd = m.svd(true, true);
    let mut u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested Vᵀ");
    let sv = &svd.singular_values;
    let w = &u * &v_t;
    let largest = sv.max();
    let (imin, smallest) = sv.argmin();
    if w.determinant() < 0.0 && smallest <= 1e-10 * largest.max(1e-300) {
        let mut col = u.column_mut(imin);
        col *= -1.0;
    }
    from_dmatrix(&(&u * &v_t))
}

/// `Σ ‖x_i W − y_j‖²` over dictionary pairs.
pub fn mapping_objective(
    x: &Array2<f64>,
    y: &Array2<f64>,
    w: &Array2<f64>,
    pairs: &[(usize, usize)],
) -> f64 {
    pairs
        .iter()
        .map(|&(i, j)| {
            let diff = x.row(i).dot(w) - y.row(j);
            diff.dot(&diff)
        })
        .sum()
}

pub fn apply_mapping(x: &Array2<f64>, m: &MappingMatrix) -> Array2<f64> {
    x.dot(&m.w)
}

fn unit_rows(m: &Array2<f64>) -> Array2<f64> {
    let mut out = m.clone();
    for mut row in out.rows_mut() {
        let n = row.dot(&row).sqrt();
        if n > 0.0 {
            row /= n;
        }
    }
    out
}

fn mean_top_k(values: impl Iterator<Item = f64>, k: usize) -> f64 {
    let mut v: Vec<f64> = values.collect();
    let k = k.min(v.len()).max(1);
    v.sort_by(|a, b| b.total_cmp(a));
    v[..k].iter().sum::<f64>() / k as f64
}

/// Cross-domain similarity local scaling between mapped source rows and
/// target rows: `2 cos(x, y) − r_x − r_y`, where `r` is the mean cosine to
/// the k nearest neighbours in the other space.
pub fn csls_scores(mapped: &Array2<f64>, target: &Array2<f64>, k: usize) -> Array2<f64> {
    let xs = unit_rows(mapped);
    let ys = unit_rows(target);
    let sims = xs.dot(&ys.t());
    let r_x: Vec<f64> = sims
        .rows()
        .into_iter()
        .map(|r| mean_top_k(r.iter().copied(), k))
        .collect();
    let r_y: Vec<f64> = sims
        .columns()
        .into_iter()
        .map(|c| mean_top_k(c.iter().copied(), k))
        .collect();
    Array2::from_shape_fn(sims.dim(), |(i, j)| 2.0 * sims[[i, j]] - r_x[i] - r_y[j])
}

/// Best CSLS target for every source row.
pub fn induce_dictionary(
    mapped: &Array2<f64>,
    target: &Array2<f64>,
    k: usize,
) -> Vec<(usize, usize)> {
    let scores = csls_scores(mapped, target, k);
    scores
        .rows()
        .into_iter()
        .enumerate()
        .map(|(i, row)| {
            let mut best = 0;
            for (j, &s) in row.iter().enumerate() {
                if s > row[best] {
                    best = j;
                }
            }
            (i, best)
        })
        .collect()
}

/// Learn an orthogonal map from X's space onto Y's.
pub fn learn_mapping(
    x: &EmbeddingMatrix,
    y: &EmbeddingMatrix,
    anchors: &AnchorDictionary,
    cfg: &MappingConfig,
) -> Result<(MappingMatrix, MappingReport)> {
    if x.dim() != y.dim() {
        return Err(Error::DimensionMismatch {
            expected: x.dim(),
            found: y.dim(),
        });
    }
    if anchors.is_empty() {
        return Err(Error::NoAnchors);
    }
    if let Some(&(i, j)) = anchors
        .pairs
        .iter()
        .find(|&&(i, j)| i >= x.len() || j >= y.len())
    {
        return Err(Error::InvalidArgument(format!(
            "anchor ({i}, {j}) out of range"
        )));
    }
    if anchors.len() < x.dim() {
        log::warn!(
            "only {} anchors for dimension {}; the map is under-determined",
            anchors.len(),
            x.dim()
        );
    }
    let (xn, yn) = if cfg.normalize {
        (normalize_rows(x.vectors()), normalize_rows(y.vectors()))
    } else {
        (x.vectors().clone(), y.vectors().clone())
    };
    let solve = |pairs: &[(usize, usize)]| {
        let xs = xn.select(Axis(0), &pairs.iter().map(|p| p.0).collect::<Vec<_>>());
        let ys = yn.select(Axis(0), &pairs.iter().map(|p| p.1).collect::<Vec<_>>());
        procrustes(&xs, &ys)
    };

    let mut w = solve(&anchors.pairs);
    let mut report = MappingReport::default();
    report
        .orthogonality_errors
        .push(MappingMatrix { w: w.clone() }.orthogonality_error());
    for _ in 0..cfg.self_learning_iters {
        let mapped = xn.dot(&w);
        let mut dict: BTreeSet<(usize, usize)> = induce_dictionary(&mapped, &yn, cfg.csls_k)
            .into_iter()
            .collect();
        dict.extend(anchors.pairs.iter().copied());
        let pairs: Vec<(usize, usize)> = dict.into_iter().collect();
        let before = mapping_objective(&xn, &yn, &w, &pairs);
        w = solve(&pairs);
        let after = mapping_objective(&xn, &yn, &w, &pairs);
        report.objectives.push((before, after));
        report.dictionary_sizes.push(pairs.len());
        report
            .orthogonality_errors
            .push(MappingMatrix { w: w.clone() }.orthogonality_error());
    }
    Ok((MappingMatrix { w }, report))
}

/// Precision@1 of nearest-neighbour (cosine) retrieval for `gold` pairs.
pub fn precision_at_1(
    mapped: &Array2<f64>,
    target: &Array2<f64>,
    gold: &HashMap<usize, usize>,
) -> f64 {
    let xs = unit_rows(mapped);
    let ys = unit_rows(target);
    let mut hits = 0;
    for (&i, &j) in gold {
        let sims = ys.dot(&xs.row(i));
        let best = sims
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(k, _)| k);
        if best == Some(j) {
            hits += 1;
        }
    }
    hits as f64 / gold.len().max(1) as f64
}
