use ndarray::{s, Array1, ArrayView1, ArrayView2};

use super::ops::{
    linear, linear_backward, softmax, softmax_in_place, softmax_rows, softmax_rows_backward,
    LinearIds,
};
use super::params::{Grads, Mat, ParamStore};
use crate::error::{Error, Result};

/// Attention readout over `keys` for one query vector: weights are the
/// softmax of the given scores and the context is the weighted sum of rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    pub context: Array1<f64>,
    pub weights: Array1<f64>,
}

/// Dot-product attention of `query` over the rows of `states`.
pub fn attend(query: ArrayView1<f64>, states: ArrayView2<f64>) -> Result<Attention> {
    if query.len() != states.ncols() {
        return Err(Error::DimensionMismatch {
            expected: states.ncols(),
            found: query.len(),
        });
    }
    if states.nrows() == 0 {
        return Err(Error::InvalidArgument(
            "attention over an empty sequence".into(),
        ));
    }
    let scores = states.dot(&query);
    Ok(attend_scores(scores.view(), states))
}

pub fn attend_scores(scores: ArrayView1<f64>, states: ArrayView2<f64>) -> Attention {
    let weights = softmax(scores);
    let context = states.t().dot(&weights);
    Attention { context, weights }
}

#[derive(Debug, Clone, Copy)]
pub struct MhaIds {
    pub q: LinearIds,
    pub k: LinearIds,
    pub v: LinearIds,
    pub o: LinearIds,
}

#[derive(Debug, Clone)]
pub struct MhaCache {
    xq: Mat,
    xkv: Mat,
    q: Mat,
    k: Mat,
    v: Mat,
    probs: Vec<Mat>,
    ctx: Mat,
}

impl MhaCache {
    /// Per-head attention maps, each `(queries × keys)`.
    pub fn probs(&self) -> &[Mat] {
        &self.probs
    }
}

/// Multi-head attention with an optional causal mask. Query row `i` is
/// taken to sit at position `i` of the key sequence when masking.
pub fn mha_forward(
    store: &ParamStore,
    ids: MhaIds,
    xq: &Mat,
    xkv: &Mat,
    heads: usize,
    causal: bool,
) -> (Mat, MhaCache) {
    let q = linear(store, ids.q, xq);
    let k = linear(store, ids.k, xkv);
    let v = linear(store, ids.v, xkv);
    let d = q.ncols();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut ctx = Mat::zeros((xq.nrows(), d));
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let mut sc = q.slice(cols).dot(&k.slice(cols).t()) * scale;
        if causal {
            for i in 0..sc.nrows() {
                for j in (i + 1)..sc.ncols() {
                    sc[[i, j]] = f64::NEG_INFINITY;
                }
            }
        }
        let p = softmax_rows(&sc);
        ctx.slice_mut(cols).assign(&p.dot(&v.slice(cols)));
        probs.push(p);
    }
    let out = linear(store, ids.o, &ctx);
    let cache = MhaCache {
        xq: xq.clone(),
        xkv: xkv.clone(),
        q,
        k,
        v,
        probs,
        ctx,
    };
    (out, cache)
}

/// Returns `(d_xq, d_xkv)`.
pub fn mha_backward(
    store: &ParamStore,
    ids: MhaIds,
    cache: &MhaCache,
    dout: &Mat,
    grads: &mut Grads,
) -> (Mat, Mat) {
    let heads = cache.probs.len();
    let d = cache.q.ncols();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let dctx = linear_backward(store, ids.o, &cache.ctx, dout, grads);
    let mut dq = Mat::zeros(cache.q.raw_dim());
    let mut dk = Mat::zeros(cache.k.raw_dim());
    let mut dv = Mat::zeros(cache.v.raw_dim());
    for h in 0..heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let p = &cache.probs[h];
        let dctx_h = dctx.slice(cols);
        dv.slice_mut(cols).assign(&p.t().dot(&dctx_h));
        let dp = dctx_h.dot(&cache.v.slice(cols).t());
        let ds = softmax_rows_backward(p, &dp) * scale;
        dq.slice_mut(cols).assign(&ds.dot(&cache.k.slice(cols)));
        dk.slice_mut(cols).assign(&ds.t().dot(&cache.q.slice(cols)));
    }
    let dxq = linear_backward(store, ids.q, &cache.xq, &dq, grads);
    let mut dxkv = linear_backward(store, ids.k, &cache.xkv, &dk, grads);
    dxkv += &linear_backward(store, ids.v, &cache.xkv, &dv, grads);
    (dxq, dxkv)
}

/// Single-query multi-head attention against precomputed keys and values
/// (already projected). Used for incremental decoding.
pub fn mha_query(
    store: &ParamStore,
    ids: MhaIds,
    xq: &Mat,
    k: ArrayView2<f64>,
    v: ArrayView2<f64>,
    heads: usize,
) -> Mat {
    let q = linear(store, ids.q, xq);
    let d = q.ncols();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut ctx = Mat::zeros((1, d));
    for h in 0..heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let qh = q.slice(s![0, h * dh..(h + 1) * dh]);
        let mut sc: Array1<f64> = k.slice(cols).dot(&qh) * scale;
        softmax_in_place(sc.as_slice_mut().expect("contiguous"));
        ctx.slice_mut(s![0, h * dh..(h + 1) * dh])
            .assign(&v.slice(cols).t().dot(&sc));
    }
    linear(store, ids.o, &ctx)
}
