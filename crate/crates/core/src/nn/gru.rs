use ndarray::linalg::general_mat_mul;
use ndarray::{concatenate, s, Array1, ArrayView1, Axis};
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::init;
use super::ops::{dropout, dropout_backward, sigmoid, softmax, LinearIds};
use super::params::{Grads, Mat, ParamId, ParamStore};
use crate::Lang;

pub const INIT_BOUND: f64 = 0.1;

/// One GRU layer. Gate blocks are laid out `[reset | update | candidate]`.
#[derive(Debug, Clone, Copy)]
struct GruIds {
    wx: ParamId,
    bx: ParamId,
    wh: ParamId,
    bh: ParamId,
    hidden: usize,
}

#[derive(Debug, Clone)]
struct CellCache {
    h: Array1<f64>,
    r: Array1<f64>,
    z: Array1<f64>,
    n: Array1<f64>,
    ghn: Array1<f64>,
}

fn add_gru(
    store: &mut ParamStore,
    rng: &mut ChaCha8Rng,
    name: &str,
    input: usize,
    hidden: usize,
) -> GruIds {
    let b = INIT_BOUND;
    GruIds {
        wx: store.add(
            format!("{name}.wx"),
            init::uniform(rng, (input, 3 * hidden), b),
        ),
        bx: store.add(format!("{name}.bx"), init::uniform(rng, (1, 3 * hidden), b)),
        wh: store.add(
            format!("{name}.wh"),
            init::uniform(rng, (hidden, 3 * hidden), b),
        ),
        bh: store.add(format!("{name}.bh"), init::uniform(rng, (1, 3 * hidden), b)),
        hidden,
    }
}

/// `gx` already holds `x·Wx + bx`.
fn cell_forward(
    store: &ParamStore,
    ids: GruIds,
    gx: ArrayView1<f64>,
    h: &Array1<f64>,
) -> (Array1<f64>, CellCache) {
    let n_h = ids.hidden;
    let gh = h.dot(store.value(ids.wh)) + store.value(ids.bh).row(0);
    let r = (&gx.slice(s![..n_h]) + &gh.slice(s![..n_h])).mapv(sigmoid);
    let z = (&gx.slice(s![n_h..2 * n_h]) + &gh.slice(s![n_h..2 * n_h])).mapv(sigmoid);
    let ghn = gh.slice(s![2 * n_h..]).to_owned();
    let n = (&gx.slice(s![2 * n_h..]) + &(&r * &ghn)).mapv(f64::tanh);
    let h_new = &n + &(&z * &(h - &n));
    (
        h_new,
        CellCache {
            h: h.clone(),
            r,
            z,
            n,
            ghn,
        },
    )
}

/// Returns `(d_gx, d_gh, d_h_prev)`.
fn cell_backward(
    store: &ParamStore,
    ids: GruIds,
    c: &CellCache,
    dh_new: &Array1<f64>,
) -> (Array1<f64>, Array1<f64>, Array1<f64>) {
    let n_h = ids.hidden;
    let dn = dh_new * &c.z.mapv(|z| 1.0 - z);
    let dz = dh_new * &(&c.h - &c.n);
    let dn_pre = &dn * &c.n.mapv(|n| 1.0 - n * n);
    let dr = &dn_pre * &c.ghn;
    let dghn = &dn_pre * &c.r;
    let dz_pre = &dz * &c.z.mapv(|z| z * (1.0 - z));
    let dr_pre = &dr * &c.r.mapv(|r| r * (1.0 - r));
    let mut dgx = Array1::zeros(3 * n_h);
    dgx.slice_mut(s![..n_h]).assign(&dr_pre);
    dgx.slice_mut(s![n_h..2 * n_h]).assign(&dz_pre);
    dgx.slice_mut(s![2 * n_h..]).assign(&dn_pre);
    let mut dgh = dgx.clone();
    dgh.slice_mut(s![2 * n_h..]).assign(&dghn);
    let dh_prev = dh_new * &c.z + store.value(ids.wh).dot(&dgh);
    (dgx, dgh, dh_prev)
}

fn accumulate_outer(g: &mut Mat, rows: &Mat, cols: &Mat) {
    general_mat_mul(1.0, &rows.t(), cols, 1.0, g);
}

/// Runs one direction of a GRU layer over all rows of `x`.
fn layer_forward(store: &ParamStore, ids: GruIds, x: &Mat, reverse: bool) -> (Mat, Vec<CellCache>) {
    let t_len = x.nrows();
    let gx = x.dot(store.value(ids.wx)) + store.value(ids.bx).row(0);
    let mut hs = Mat::zeros((t_len, ids.hidden));
    let mut caches = Vec::with_capacity(t_len);
    let mut h = Array1::zeros(ids.hidden);
    for k in 0..t_len {
        let t = if reverse { t_len - 1 - k } else { k };
        let (h_new, c) = cell_forward(store, ids, gx.row(t), &h);
        hs.row_mut(t).assign(&h_new);
        caches.push(c);
        h = h_new;
    }
    (hs, caches)
}

fn layer_backward(
    store: &ParamStore,
    ids: GruIds,
    x: &Mat,
    caches: &[CellCache],
    dhs: &Mat,
    reverse: bool,
    grads: &mut Grads,
) -> Mat {
    let t_len = x.nrows();
    let mut dgx_all = Mat::zeros((t_len, 3 * ids.hidden));
    let mut dgh_all = Mat::zeros((t_len, 3 * ids.hidden));
    let mut h_prev = Mat::zeros((t_len, ids.hidden));
    let mut carry = Array1::zeros(ids.hidden);
    for k in (0..t_len).rev() {
        let t = if reverse { t_len - 1 - k } else { k };
        let c = &caches[k];
        let dh = &dhs.row(t) + &carry;
        let (dgx, dgh, dh_prev) = cell_backward(store, ids, c, &dh);
        dgx_all.row_mut(t).assign(&dgx);
        dgh_all.row_mut(t).assign(&dgh);
        h_prev.row_mut(t).assign(&c.h);
        carry = dh_prev;
    }
    accumulate_outer(grads.slot(ids.wx), x, &dgx_all);
    accumulate_outer(grads.slot(ids.wh), &h_prev, &dgh_all);
    {
        let mut g = grads.slot(ids.bx).row_mut(0);
        g += &dgx_all.sum_axis(Axis(0));
    }
    {
        let mut g = grads.slot(ids.bh).row_mut(0);
        g += &dgh_all.sum_axis(Axis(0));
    }
    dgx_all.dot(&store.value(ids.wx).t())
}

#[derive(Debug, Clone)]
struct Decoder {
    layers: Vec<GruIds>,
    attn: ParamId,
    comb: LinearIds,
    out: LinearIds,
}

/// Bidirectional GRU encoder and two attentional GRU decoders with input
/// feeding and a bilinear ("general") attention score.
#[derive(Debug, Clone)]
pub struct GruModel {
    cfg: ModelConfig,
    store: ParamStore,
    emb: [ParamId; 2],
    enc: Vec<[GruIds; 2]>,
    dec: [Decoder; 2],
}

#[derive(Debug, Clone)]
pub struct EncoderCache {
    tokens: Vec<u32>,
    lang: Lang,
    inputs: Vec<Mat>,
    masks: Vec<Option<Mat>>,
    caches: Vec<[Vec<CellCache>; 2]>,
}

#[derive(Debug, Clone)]
struct StepCache {
    emb_mask: Option<Array1<f64>>,
    inputs: Vec<Array1<f64>>,
    cells: Vec<CellCache>,
    top: Array1<f64>,
    a: Array1<f64>,
    weights: Array1<f64>,
    cat: Array1<f64>,
    out: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct DecoderCache {
    tokens: Vec<u32>,
    lang: Lang,
    steps: Vec<StepCache>,
}

#[derive(Debug, Clone)]
pub struct GruState {
    h: Vec<Array1<f64>>,
    feed: Array1<f64>,
}

fn outer_add(g: &mut Mat, a: &Array1<f64>, b: &Array1<f64>) {
    let a2 = a.view().insert_axis(Axis(1));
    let b2 = b.view().insert_axis(Axis(0));
    general_mat_mul(1.0, &a2, &b2, 1.0, g);
}

impl GruModel {
    pub fn new(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.d_model;
        let de = cfg.d_emb;
        let mut store = ParamStore::default();
        let emb = if cfg.shared_embeddings {
            let id = store.add(
                "emb.shared",
                init::uniform(rng, (cfg.vocab_sizes[0], de), INIT_BOUND),
            );
            [id, id]
        } else {
            Lang::BOTH.map(|l| {
                store.add(
                    format!("emb.{l}"),
                    init::uniform(rng, (cfg.vocab_sizes[l.index()], de), INIT_BOUND),
                )
            })
        };
        let mut enc = Vec::new();
        for i in 0..cfg.layers {
            let input = if i == 0 { de } else { d };
            let fwd = add_gru(&mut store, rng, &format!("enc.{i}.fwd"), input, d / 2);
            let bwd = add_gru(&mut store, rng, &format!("enc.{i}.bwd"), input, d / 2);
            enc.push([fwd, bwd]);
        }
        let dec = Lang::BOTH.map(|l| {
            let layers = (0..cfg.layers)
                .map(|i| {
                    let input = if i == 0 { de + d } else { d };
                    add_gru(&mut store, rng, &format!("dec.{l}.{i}"), input, d)
                })
                .collect();
            let attn = store.add(
                format!("dec.{l}.attn"),
                init::uniform(rng, (d, d), INIT_BOUND),
            );
            let comb = LinearIds {
                w: store.add(
                    format!("dec.{l}.comb.w"),
                    init::uniform(rng, (2 * d, d), INIT_BOUND),
                ),
                b: Some(store.add(
                    format!("dec.{l}.comb.b"),
                    init::uniform(rng, (1, d), INIT_BOUND),
                )),
            };
            let v = cfg.vocab_sizes[l.index()];
            let out = LinearIds {
                w: store.add(format!("out.{l}.w"), init::uniform(rng, (d, v), INIT_BOUND)),
                b: Some(store.add(format!("out.{l}.b"), init::uniform(rng, (1, v), INIT_BOUND))),
            };
            Decoder {
                layers,
                attn,
                comb,
                out,
            }
        });
        if cfg.freeze_embeddings {
            for id in emb {
                store.set_frozen(id, true);
            }
        }
        GruModel {
            cfg: cfg.clone(),
            store,
            emb,
            enc,
            dec,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn embedding_id(&self, lang: Lang) -> ParamId {
        self.emb[lang.index()]
    }

    fn embed(&self, tokens: &[u32], lang: Lang) -> Mat {
        let table = self.store.value(self.emb[lang.index()]);
        let mut x = Mat::zeros((tokens.len(), self.cfg.d_emb));
        for (i, &t) in tokens.iter().enumerate() {
            x.row_mut(i).assign(&table.row(t as usize));
        }
        x
    }

    pub fn encode_train(
        &self,
        tokens: &[u32],
        lang: Lang,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> (Mat, EncoderCache) {
        let p = self.cfg.dropout;
        let mut x = self.embed(tokens, lang);
        let mut inputs = Vec::new();
        let mut masks = Vec::new();
        let mut caches = Vec::new();
        for [fwd, bwd] in &self.enc {
            let (xd, mask) = dropout(x, p, rng.as_deref_mut());
            let (hf, cf) = layer_forward(&self.store, *fwd, &xd, false);
            let (hb, cb) = layer_forward(&self.store, *bwd, &xd, true);
            inputs.push(xd);
            masks.push(mask);
            caches.push([cf, cb]);
            x = concatenate![Axis(1), hf, hb];
        }
        let cache = EncoderCache {
            tokens: tokens.to_vec(),
            lang,
            inputs,
            masks,
            caches,
        };
        (x, cache)
    }

    pub fn encode_backward(&self, cache: &EncoderCache, denc: &Mat, grads: &mut Grads) {
        let half = self.cfg.d_model / 2;
        let mut dx = denc.clone();
        for (i, [fwd, bwd]) in self.enc.iter().enumerate().rev() {
            let x = &cache.inputs[i];
            let dhf = dx.slice(s![.., ..half]).to_owned();
            let dhb = dx.slice(s![.., half..]).to_owned();
            let mut dxi = layer_backward(
                &self.store,
                *fwd,
                x,
                &cache.caches[i][0],
                &dhf,
                false,
                grads,
            );
            dxi += &layer_backward(&self.store, *bwd, x, &cache.caches[i][1], &dhb, true, grads);
            dx = dropout_backward(dxi, &cache.masks[i]);
        }
        let g = grads.slot(self.emb[cache.lang.index()]);
        for (i, &t) in cache.tokens.iter().enumerate() {
            let mut row = g.row_mut(t as usize);
            row += &dx.row(i);
        }
    }

    pub fn start(&self, _enc: &Mat, _lang: Lang) -> GruState {
        GruState {
            h: vec![Array1::zeros(self.cfg.d_model); self.cfg.layers],
            feed: Array1::zeros(self.cfg.d_model),
        }
    }

    fn step_inner(
        &self,
        prev: u32,
        state: &mut GruState,
        enc: &Mat,
        lang: Lang,
        rng: Option<&mut ChaCha8Rng>,
    ) -> (Array1<f64>, StepCache) {
        let dec = &self.dec[lang.index()];
        let table = self.store.value(self.emb[lang.index()]);
        let mut e = table.row(prev as usize).to_owned();
        let mut emb_mask = None;
        if let (Some(rng), true) = (rng, self.cfg.dropout > 0.0) {
            let (ed, m) = dropout(e.insert_axis(Axis(0)), self.cfg.dropout, Some(rng));
            e = ed.index_axis_move(Axis(0), 0);
            emb_mask = m.map(|m| m.index_axis_move(Axis(0), 0));
        }
        let mut x = concatenate![Axis(0), e, state.feed];
        let mut inputs = Vec::with_capacity(self.cfg.layers);
        let mut cells = Vec::with_capacity(self.cfg.layers);
        for (i, &ids) in dec.layers.iter().enumerate() {
            let gx = x.dot(self.store.value(ids.wx)) + self.store.value(ids.bx).row(0);
            let (h, c) = cell_forward(&self.store, ids, gx.view(), &state.h[i]);
            inputs.push(x);
            cells.push(c);
            state.h[i] = h.clone();
            x = h;
        }
        let top = x;
        let a = top.dot(self.store.value(dec.attn));
        let scores = enc.dot(&a);
        let weights = softmax(scores.view());
        let ctx = enc.t().dot(&weights);
        let cat = concatenate![Axis(0), ctx, top];
        let out = (cat.dot(self.store.value(dec.comb.w))
            + self.store.value(dec.comb.b.expect("bias")).row(0))
        .mapv(f64::tanh);
        let logits = out.dot(self.store.value(dec.out.w))
            + self.store.value(dec.out.b.expect("bias")).row(0);
        state.feed = out.clone();
        let cache = StepCache {
            emb_mask,
            inputs,
            cells,
            top,
            a,
            weights,
            cat,
            out,
        };
        (logits, cache)
    }

    pub fn step(&self, prev: u32, state: &mut GruState, enc: &Mat, lang: Lang) -> Array1<f64> {
        self.step_inner(prev, state, enc, lang, None).0
    }

    pub fn decode_train(
        &self,
        enc: &Mat,
        inputs: &[u32],
        lang: Lang,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> (Mat, DecoderCache) {
        let mut state = self.start(enc, lang);
        let v = self.cfg.vocab_sizes[lang.index()];
        let mut logits = Mat::zeros((inputs.len(), v));
        let mut steps = Vec::with_capacity(inputs.len());
        for (t, &tok) in inputs.iter().enumerate() {
            let (l, c) = self.step_inner(tok, &mut state, enc, lang, rng.as_deref_mut());
            logits.row_mut(t).assign(&l);
            steps.push(c);
        }
        let cache = DecoderCache {
            tokens: inputs.to_vec(),
            lang,
            steps,
        };
        (logits, cache)
    }

    pub fn decode_backward(
        &self,
        cache: &DecoderCache,
        enc: &Mat,
        dlogits: &Mat,
        grads: &mut Grads,
    ) -> Mat {
        let dec = &self.dec[cache.lang.index()];
        let d = self.cfg.d_model;
        let de = self.cfg.d_emb;
        let layers = &dec.layers;
        let mut denc = Mat::zeros(enc.raw_dim());
        let mut dh: Vec<Array1<f64>> = vec![Array1::zeros(d); layers.len()];
        let mut dfeed = Array1::<f64>::zeros(d);
        let wout = self.store.value(dec.out.w);
        let wcomb = self.store.value(dec.comb.w);
        let wattn = self.store.value(dec.attn);
        for (t, c) in cache.steps.iter().enumerate().rev() {
            let dl = dlogits.row(t).to_owned();
            outer_add(grads.slot(dec.out.w), &c.out, &dl);
            {
                let mut g = grads.slot(dec.out.b.expect("bias")).row_mut(0);
                g += &dl;
            }
            let dout = wout.dot(&dl) + &dfeed;
            let dpre = &dout * &c.out.mapv(|o| 1.0 - o * o);
            outer_add(grads.slot(dec.comb.w), &c.cat, &dpre);
            {
                let mut g = grads.slot(dec.comb.b.expect("bias")).row_mut(0);
                g += &dpre;
            }
            let dcat = wcomb.dot(&dpre);
            let dctx = dcat.slice(s![..d]).to_owned();
            let mut dtop = dcat.slice(s![d..]).to_owned();
            let dw = enc.dot(&dctx);
            denc += &(c
                .weights
                .view()
                .insert_axis(Axis(1))
                .dot(&dctx.view().insert_axis(Axis(0))));
            let s = c.weights.dot(&dw);
            let dscores = &c.weights * &dw.mapv(|x| x - s);
            let da = enc.t().dot(&dscores);
            denc += &(dscores
                .view()
                .insert_axis(Axis(1))
                .dot(&c.a.view().insert_axis(Axis(0))));
            outer_add(grads.slot(dec.attn), &c.top, &da);
            dtop += &wattn.dot(&da);
            let mut dx = dtop;
            for (i, ids) in layers.iter().enumerate().rev() {
                let dh_new = &dx + &dh[i];
                let (dgx, dgh, dh_prev) = cell_backward(&self.store, *ids, &c.cells[i], &dh_new);
                outer_add(grads.slot(ids.wx), &c.inputs[i], &dgx);
                outer_add(grads.slot(ids.wh), &c.cells[i].h, &dgh);
                {
                    let mut g = grads.slot(ids.bx).row_mut(0);
                    g += &dgx;
                }
                {
                    let mut g = grads.slot(ids.bh).row_mut(0);
                    g += &dgh;
                }
                dh[i] = dh_prev;
                dx = self.store.value(ids.wx).dot(&dgx);
            }
            let mut de_row = dx.slice(s![..de]).to_owned();
            dfeed = dx.slice(s![de..]).to_owned();
            if let Some(m) = &c.emb_mask {
                de_row *= m;
            }
            let mut row = grads
                .slot(self.emb[cache.lang.index()])
                .row_mut(cache.tokens[t] as usize);
            row += &de_row;
        }
        denc
    }
}
