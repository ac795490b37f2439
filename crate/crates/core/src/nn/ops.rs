//! Dense building blocks with explicit backward passes. Inputs are row-major
//! `(rows × features)` matrices; backward functions accumulate parameter
//! gradients and return the input gradient.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, ArrayView1, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::{Grads, Mat, ParamId, ParamStore};

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy)]
pub struct LinearIds {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

pub fn linear(store: &ParamStore, ids: LinearIds, x: &Mat) -> Mat {
    let mut y = x.dot(store.value(ids.w));
    if let Some(b) = ids.b {
        y += &store.value(b).row(0);
    }
    y
}

pub fn linear_backward(
    store: &ParamStore,
    ids: LinearIds,
    x: &Mat,
    dy: &Mat,
    grads: &mut Grads,
) -> Mat {
    general_mat_mul(1.0, &x.t(), dy, 1.0, grads.slot(ids.w));
    if let Some(b) = ids.b {
        let mut gb = grads.slot(b).row_mut(0);
        gb += &dy.sum_axis(Axis(0));
    }
    dy.dot(&store.value(ids.w).t())
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNormIds {
    pub gain: ParamId,
    pub bias: ParamId,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache {
    xhat: Mat,
    inv_std: Array1<f64>,
}

pub fn layer_norm(store: &ParamStore, ids: LayerNormIds, x: &Mat) -> (Mat, LayerNormCache) {
    let n = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (i, mut row) in xhat.rows_mut().into_iter().enumerate() {
        let mu = row.sum() / n;
        row -= mu;
        let var = row.dot(&row) / n;
        let s = 1.0 / (var + LN_EPS).sqrt();
        row *= s;
        inv_std[i] = s;
    }
    let g = store.value(ids.gain).row(0);
    let b = store.value(ids.bias).row(0);
    let y = &xhat * &g + b;
    (y, LayerNormCache { xhat, inv_std })
}

pub fn layer_norm_backward(
    store: &ParamStore,
    ids: LayerNormIds,
    cache: &LayerNormCache,
    dy: &Mat,
    grads: &mut Grads,
) -> Mat {
    {
        let mut gg = grads.slot(ids.gain).row_mut(0);
        gg += &(dy * &cache.xhat).sum_axis(Axis(0));
    }
    {
        let mut gb = grads.slot(ids.bias).row_mut(0);
        gb += &dy.sum_axis(Axis(0));
    }
    let g = store.value(ids.gain).row(0);
    let dxhat = dy * &g;
    let n = dy.ncols() as f64;
    let mut dx = Mat::zeros(dy.raw_dim());
    for i in 0..dy.nrows() {
        let dh = dxhat.row(i);
        let xh = cache.xhat.row(i);
        let m1 = dh.sum() / n;
        let m2 = dh.dot(&xh) / n;
        let s = cache.inv_std[i];
        dx.row_mut(i).assign(&((&dh - m1 - &(&xh * m2)) * s));
    }
    dx
}

/// Row-wise softmax.
pub fn softmax_rows(x: &Mat) -> Mat {
    let mut y = x.clone();
    for mut row in y.rows_mut() {
        softmax_in_place(row.as_slice_mut().expect("contiguous row"));
    }
    y
}

pub fn softmax_in_place(v: &mut [f64]) {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for x in v.iter_mut() {
        *x = (*x - m).exp();
        z += *x;
    }
    for x in v.iter_mut() {
        *x /= z;
    }
}

pub fn softmax(v: ArrayView1<f64>) -> Array1<f64> {
    let mut out = v.to_owned();
    softmax_in_place(out.as_slice_mut().expect("contiguous"));
    out
}

/// Backward of row-wise softmax given its output `p`.
pub fn softmax_rows_backward(p: &Mat, dp: &Mat) -> Mat {
    let mut ds = p * dp;
    for (mut row, prow) in ds.rows_mut().into_iter().zip(p.rows()) {
        let s = row.sum();
        row.zip_mut_with(&prow, |d, &pi| *d -= pi * s);
    }
    ds
}

pub fn log_sum_exp(v: ArrayView1<f64>) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn relu(x: &Mat) -> Mat {
    x.mapv(|v| v.max(0.0))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverted dropout. Returns `None` as mask when inactive.
pub fn dropout(x: Mat, p: f64, rng: Option<&mut ChaCha8Rng>) -> (Mat, Option<Mat>) {
    match rng {
        Some(rng) if p > 0.0 => {
            let keep = 1.0 / (1.0 - p);
            let mask = Mat::from_shape_simple_fn(x.raw_dim(), || {
                if rng.random::<f64>() < p {
                    0.0
                } else {
                    keep
                }
            });
            (x * &mask, Some(mask))
        }
        _ => (x, None),
    }
}

pub fn dropout_backward(dy: Mat, mask: &Option<Mat>) -> Mat {
    match mask {
        Some(m) => dy * m,
        None => dy,
    }
}

/// Sinusoidal position encoding for positions `start..start+len`.
pub fn positional_encoding(start: usize, len: usize, d: usize) -> Mat {
    Mat::from_shape_fn((len, d), |(i, j)| {
        let pos = (start + i) as f64;
        let rate = 10000f64.powf((2 * (j / 2)) as f64 / d as f64);
        if j % 2 == 0 {
            (pos / rate).sin()
        } else {
            (pos / rate).cos()
        }
    })
}
