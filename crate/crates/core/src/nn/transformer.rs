use ndarray::Axis;
use rand_chacha::ChaCha8Rng;

use super::attention::{mha_backward, mha_forward, mha_query, MhaCache, MhaIds};
use super::config::ModelConfig;
use super::init;
use super::ops::{
    dropout, dropout_backward, layer_norm, layer_norm_backward, linear, linear_backward,
    positional_encoding, relu, LayerNormCache, LayerNormIds, LinearIds,
};
use super::params::{Grads, Mat, ParamId, ParamStore};
use crate::Lang;

#[derive(Debug, Clone, Copy)]
struct FfnIds {
    w1: LinearIds,
    w2: LinearIds,
}

#[derive(Debug, Clone, Copy)]
struct EncoderLayer {
    ln1: LayerNormIds,
    attn: MhaIds,
    ln2: LayerNormIds,
    ffn: FfnIds,
}

#[derive(Debug, Clone, Copy)]
struct DecoderLayer {
    ln1: LayerNormIds,
    self_attn: MhaIds,
    ln2: LayerNormIds,
    cross: MhaIds,
    ln3: LayerNormIds,
    ffn: FfnIds,
}

/// Pre-norm transformer with a (partially) shared encoder and two decoders
/// whose lower layers alias the same parameters.
#[derive(Debug, Clone)]
pub struct TransformerModel {
    cfg: ModelConfig,
    store: ParamStore,
    emb: [ParamId; 2],
    enc: [Vec<EncoderLayer>; 2],
    enc_norm: LayerNormIds,
    dec: [Vec<DecoderLayer>; 2],
    dec_norm: [LayerNormIds; 2],
    out: [LinearIds; 2],
}

fn add_linear(
    store: &mut ParamStore,
    rng: &mut ChaCha8Rng,
    name: &str,
    fan_in: usize,
    fan_out: usize,
) -> LinearIds {
    LinearIds {
        w: store.add(format!("{name}.w"), init::xavier(rng, (fan_in, fan_out))),
        b: Some(store.add(format!("{name}.b"), init::zeros((1, fan_out)))),
    }
}

fn add_norm(store: &mut ParamStore, name: &str, d: usize) -> LayerNormIds {
    LayerNormIds {
        gain: store.add(format!("{name}.gain"), init::ones((1, d))),
        bias: store.add(format!("{name}.bias"), init::zeros((1, d))),
    }
}

fn add_mha(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, d: usize) -> MhaIds {
    MhaIds {
        q: add_linear(store, rng, &format!("{name}.q"), d, d),
        k: LinearIds {
            w: store.add(format!("{name}.k.w"), init::xavier(rng, (d, d))),
            b: None,
        },
        v: add_linear(store, rng, &format!("{name}.v"), d, d),
        o: add_linear(store, rng, &format!("{name}.o"), d, d),
    }
}

fn add_ffn(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, d: usize, f: usize) -> FfnIds {
    FfnIds {
        w1: add_linear(store, rng, &format!("{name}.ffn1"), d, f),
        w2: add_linear(store, rng, &format!("{name}.ffn2"), f, d),
    }
}

#[derive(Debug, Clone)]
struct FfnCache {
    x: Mat,
    pre: Mat,
    act: Mat,
}

fn ffn_forward(store: &ParamStore, ids: FfnIds, x: &Mat) -> (Mat, FfnCache) {
    let pre = linear(store, ids.w1, x);
    let act = relu(&pre);
    let y = linear(store, ids.w2, &act);
    (
        y,
        FfnCache {
            x: x.clone(),
            pre,
            act,
        },
    )
}

fn ffn_backward(store: &ParamStore, ids: FfnIds, c: &FfnCache, dy: &Mat, grads: &mut Grads) -> Mat {
    let mut dact = linear_backward(store, ids.w2, &c.act, dy, grads);
    dact.zip_mut_with(&c.pre, |d, &p| {
        if p <= 0.0 {
            *d = 0.0
        }
    });
    linear_backward(store, ids.w1, &c.x, &dact, grads)
}

#[derive(Debug, Clone)]
struct EncLayerCache {
    ln1: LayerNormCache,
    attn: MhaCache,
    drop1: Option<Mat>,
    ln2: LayerNormCache,
    ffn: FfnCache,
    drop2: Option<Mat>,
}

#[derive(Debug, Clone)]
struct DecLayerCache {
    ln1: LayerNormCache,
    self_attn: MhaCache,
    drop1: Option<Mat>,
    ln2: LayerNormCache,
    cross: MhaCache,
    drop2: Option<Mat>,
    ln3: LayerNormCache,
    ffn: FfnCache,
    drop3: Option<Mat>,
}

#[derive(Debug, Clone)]
pub struct EncoderCache {
    tokens: Vec<u32>,
    lang: Lang,
    drop_in: Option<Mat>,
    layers: Vec<EncLayerCache>,
    norm: LayerNormCache,
}

#[derive(Debug, Clone)]
pub struct DecoderCache {
    tokens: Vec<u32>,
    lang: Lang,
    drop_in: Option<Mat>,
    layers: Vec<DecLayerCache>,
    norm: LayerNormCache,
    normed: Mat,
}

/// Incremental decoding state: projected self-attention keys/values of every
/// position generated so far, and the cross-attention keys/values.
#[derive(Debug, Clone)]
pub struct TransformerState {
    pos: usize,
    self_k: Vec<Mat>,
    self_v: Vec<Mat>,
    cross_k: Vec<Mat>,
    cross_v: Vec<Mat>,
}

impl TransformerState {
    /// Number of tokens fed so far.
    pub fn len(&self) -> usize {
        self.pos
    }

    pub fn is_empty(&self) -> bool {
        self.pos == 0
    }
}

impl TransformerModel {
    pub fn new(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.d_model;
        let mut store = ParamStore::default();
        let emb_std = 1.0 / (d as f64).sqrt();
        let emb = if cfg.shared_embeddings {
            let id = store.add(
                "emb.shared",
                init::normal(rng, (cfg.vocab_sizes[0], d), emb_std),
            );
            [id, id]
        } else {
            Lang::BOTH.map(|l| {
                store.add(
                    format!("emb.{l}"),
                    init::normal(rng, (cfg.vocab_sizes[l.index()], d), emb_std),
                )
            })
        };
        let private_enc = cfg.layers - cfg.shared_encoder_layers;
        let mut enc: [Vec<EncoderLayer>; 2] = [Vec::new(), Vec::new()];
        for i in 0..cfg.layers {
            let mut make = |store: &mut ParamStore, name: String| EncoderLayer {
                ln1: add_norm(store, &format!("{name}.ln1"), d),
                attn: add_mha(store, rng, &format!("{name}.attn"), d),
                ln2: add_norm(store, &format!("{name}.ln2"), d),
                ffn: add_ffn(store, rng, &name, d, cfg.ffn_dim),
            };
            if i < private_enc {
                for l in Lang::BOTH {
                    let layer = make(&mut store, format!("enc.{l}.{i}"));
                    enc[l.index()].push(layer);
                }
            } else {
                let layer = make(&mut store, format!("enc.{i}"));
                enc[0].push(layer);
                enc[1].push(layer);
            }
        }
        let enc_norm = add_norm(&mut store, "enc.norm", d);
        let mut dec: [Vec<DecoderLayer>; 2] = [Vec::new(), Vec::new()];
        for i in 0..cfg.layers {
            let mut make = |store: &mut ParamStore, name: String| DecoderLayer {
                ln1: add_norm(store, &format!("{name}.ln1"), d),
                self_attn: add_mha(store, rng, &format!("{name}.self"), d),
                ln2: add_norm(store, &format!("{name}.ln2"), d),
                cross: add_mha(store, rng, &format!("{name}.cross"), d),
                ln3: add_norm(store, &format!("{name}.ln3"), d),
                ffn: add_ffn(store, rng, &name, d, cfg.ffn_dim),
            };
            if i < cfg.shared_decoder_layers {
                let layer = make(&mut store, format!("dec.{i}"));
                dec[0].push(layer);
                dec[1].push(layer);
            } else {
                for l in Lang::BOTH {
                    let layer = make(&mut store, format!("dec.{l}.{i}"));
                    dec[l.index()].push(layer);
                }
            }
        }
        let dec_norm = Lang::BOTH.map(|l| add_norm(&mut store, &format!("dec.{l}.norm"), d));
        let out = Lang::BOTH.map(|l| {
            add_linear(
                &mut store,
                rng,
                &format!("out.{l}"),
                d,
                cfg.vocab_sizes[l.index()],
            )
        });
        if cfg.freeze_embeddings {
            for id in emb {
                store.set_frozen(id, true);
            }
        }
        TransformerModel {
            cfg: cfg.clone(),
            store,
            emb,
            enc,
            enc_norm,
            dec,
            dec_norm,
            out,
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

    /// Parameter ids of decoder layer `layer` for `lang`, in a fixed order.
    pub fn decoder_layer_ids(&self, lang: Lang, layer: usize) -> Vec<ParamId> {
        let l = &self.dec[lang.index()][layer];
        let mut ids = Vec::new();
        for n in [l.ln1, l.ln2, l.ln3] {
            ids.extend([n.gain, n.bias]);
        }
        for m in [l.self_attn, l.cross] {
            for lin in [m.q, m.k, m.v, m.o] {
                ids.push(lin.w);
                ids.extend(lin.b);
            }
        }
        for lin in [l.ffn.w1, l.ffn.w2] {
            ids.push(lin.w);
            ids.extend(lin.b);
        }
        ids
    }

    fn embed(&self, tokens: &[u32], lang: Lang, start: usize) -> Mat {
        let d = self.cfg.d_model;
        let table = self.store.value(self.emb[lang.index()]);
        let scale = (d as f64).sqrt();
        let mut x = positional_encoding(start, tokens.len(), d);
        for (i, &t) in tokens.iter().enumerate() {
            x.row_mut(i).scaled_add(scale, &table.row(t as usize));
        }
        x
    }

    fn embed_backward(&self, tokens: &[u32], lang: Lang, dx: &Mat, grads: &mut Grads) {
        let scale = (self.cfg.d_model as f64).sqrt();
        let g = grads.slot(self.emb[lang.index()]);
        for (i, &t) in tokens.iter().enumerate() {
            g.row_mut(t as usize).scaled_add(scale, &dx.row(i));
        }
    }

    pub fn encode_train(
        &self,
        tokens: &[u32],
        lang: Lang,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> (Mat, EncoderCache) {
        let p = self.cfg.dropout;
        let (mut x, drop_in) = dropout(self.embed(tokens, lang, 0), p, rng.as_deref_mut());
        let mut layers = Vec::with_capacity(self.cfg.layers);
        for layer in &self.enc[lang.index()] {
            let (a, ln1) = layer_norm(&self.store, layer.ln1, &x);
            let (att, attn) = mha_forward(&self.store, layer.attn, &a, &a, self.cfg.heads, false);
            let (att, drop1) = dropout(att, p, rng.as_deref_mut());
            x += &att;
            let (b, ln2) = layer_norm(&self.store, layer.ln2, &x);
            let (f, ffn) = ffn_forward(&self.store, layer.ffn, &b);
            let (f, drop2) = dropout(f, p, rng.as_deref_mut());
            x += &f;
            layers.push(EncLayerCache {
                ln1,
                attn,
                drop1,
                ln2,
                ffn,
                drop2,
            });
        }
        let (out, norm) = layer_norm(&self.store, self.enc_norm, &x);
        let cache = EncoderCache {
            tokens: tokens.to_vec(),
            lang,
            drop_in,
            layers,
            norm,
        };
        (out, cache)
    }

    pub fn encode_backward(&self, cache: &EncoderCache, denc: &Mat, grads: &mut Grads) {
        let mut dx = layer_norm_backward(&self.store, self.enc_norm, &cache.norm, denc, grads);
        for (layer, c) in self.enc[cache.lang.index()].iter().zip(&cache.layers).rev() {
            let df = dropout_backward(dx.clone(), &c.drop2);
            let db = ffn_backward(&self.store, layer.ffn, &c.ffn, &df, grads);
            dx += &layer_norm_backward(&self.store, layer.ln2, &c.ln2, &db, grads);
            let datt = dropout_backward(dx.clone(), &c.drop1);
            let (dq, dkv) = mha_backward(&self.store, layer.attn, &c.attn, &datt, grads);
            let da = dq + dkv;
            dx += &layer_norm_backward(&self.store, layer.ln1, &c.ln1, &da, grads);
        }
        let dx = dropout_backward(dx, &cache.drop_in);
        self.embed_backward(&cache.tokens, cache.lang, &dx, grads);
    }

    /// Teacher-forced decoder pass; `inputs` starts with the BOS token.
    pub fn decode_train(
        &self,
        enc: &Mat,
        inputs: &[u32],
        lang: Lang,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> (Mat, DecoderCache) {
        let p = self.cfg.dropout;
        let h = self.cfg.heads;
        let (mut y, drop_in) = dropout(self.embed(inputs, lang, 0), p, rng.as_deref_mut());
        let mut layers = Vec::with_capacity(self.cfg.layers);
        for layer in &self.dec[lang.index()] {
            let (a, ln1) = layer_norm(&self.store, layer.ln1, &y);
            let (att, self_attn) = mha_forward(&self.store, layer.self_attn, &a, &a, h, true);
            let (att, drop1) = dropout(att, p, rng.as_deref_mut());
            y += &att;
            let (b, ln2) = layer_norm(&self.store, layer.ln2, &y);
            let (cr, cross) = mha_forward(&self.store, layer.cross, &b, enc, h, false);
            let (cr, drop2) = dropout(cr, p, rng.as_deref_mut());
            y += &cr;
            let (c, ln3) = layer_norm(&self.store, layer.ln3, &y);
            let (f, ffn) = ffn_forward(&self.store, layer.ffn, &c);
            let (f, drop3) = dropout(f, p, rng.as_deref_mut());
            y += &f;
            layers.push(DecLayerCache {
                ln1,
                self_attn,
                drop1,
                ln2,
                cross,
                drop2,
                ln3,
                ffn,
                drop3,
            });
        }
        let (normed, norm) = layer_norm(&self.store, self.dec_norm[lang.index()], &y);
        let logits = linear(&self.store, self.out[lang.index()], &normed);
        let cache = DecoderCache {
            tokens: inputs.to_vec(),
            lang,
            drop_in,
            layers,
            norm,
            normed,
        };
        (logits, cache)
    }

    /// Returns the gradient with respect to the encoder output.
    pub fn decode_backward(
        &self,
        cache: &DecoderCache,
        dlogits: &Mat,
        enc_shape: (usize, usize),
        grads: &mut Grads,
    ) -> Mat {
        let li = cache.lang.index();
        let dn = linear_backward(&self.store, self.out[li], &cache.normed, dlogits, grads);
        let mut dy = layer_norm_backward(&self.store, self.dec_norm[li], &cache.norm, &dn, grads);
        let mut denc = Mat::zeros(enc_shape);
        for (layer, c) in self.dec[li].iter().zip(&cache.layers).rev() {
            let df = dropout_backward(dy.clone(), &c.drop3);
            let dc = ffn_backward(&self.store, layer.ffn, &c.ffn, &df, grads);
            dy += &layer_norm_backward(&self.store, layer.ln3, &c.ln3, &dc, grads);
            let dcr = dropout_backward(dy.clone(), &c.drop2);
            let (db, de) = mha_backward(&self.store, layer.cross, &c.cross, &dcr, grads);
            denc += &de;
            dy += &layer_norm_backward(&self.store, layer.ln2, &c.ln2, &db, grads);
            let datt = dropout_backward(dy.clone(), &c.drop1);
            let (dq, dkv) = mha_backward(&self.store, layer.self_attn, &c.self_attn, &datt, grads);
            let da = dq + dkv;
            dy += &layer_norm_backward(&self.store, layer.ln1, &c.ln1, &da, grads);
        }
        let dy = dropout_backward(dy, &cache.drop_in);
        self.embed_backward(&cache.tokens, cache.lang, &dy, grads);
        denc
    }

    /// Attention maps of the last teacher-forced pass, for inspection.
    pub fn attention_maps(cache: &DecoderCache) -> Vec<&Mat> {
        cache
            .layers
            .iter()
            .flat_map(|l| l.self_attn.probs().iter().chain(l.cross.probs()))
            .collect()
    }

    pub fn start(&self, enc: &Mat, lang: Lang) -> TransformerState {
        let layers = &self.dec[lang.index()];
        let d = self.cfg.d_model;
        TransformerState {
            pos: 0,
            self_k: vec![Mat::zeros((0, d)); layers.len()],
            self_v: vec![Mat::zeros((0, d)); layers.len()],
            cross_k: layers
                .iter()
                .map(|l| linear(&self.store, l.cross.k, enc))
                .collect(),
            cross_v: layers
                .iter()
                .map(|l| linear(&self.store, l.cross.v, enc))
                .collect(),
        }
    }

    pub fn step(
        &self,
        prev: u32,
        state: &mut TransformerState,
        lang: Lang,
    ) -> ndarray::Array1<f64> {
        let h = self.cfg.heads;
        let mut y = self.embed(&[prev], lang, state.pos);
        for (i, layer) in self.dec[lang.index()].iter().enumerate() {
            let (a, _) = layer_norm(&self.store, layer.ln1, &y);
            let k = linear(&self.store, layer.self_attn.k, &a);
            let v = linear(&self.store, layer.self_attn.v, &a);
            state.self_k[i].push_row(k.row(0)).expect("row width");
            state.self_v[i].push_row(v.row(0)).expect("row width");
            y += &mha_query(
                &self.store,
                layer.self_attn,
                &a,
                state.self_k[i].view(),
                state.self_v[i].view(),
                h,
            );
            let (b, _) = layer_norm(&self.store, layer.ln2, &y);
            y += &mha_query(
                &self.store,
                layer.cross,
                &b,
                state.cross_k[i].view(),
                state.cross_v[i].view(),
                h,
            );
            let (c, _) = layer_norm(&self.store, layer.ln3, &y);
            let (f, _) = ffn_forward(&self.store, layer.ffn, &c);
            y += &f;
        }
        state.pos += 1;
        let (normed, _) = layer_norm(&self.store, self.dec_norm[lang.index()], &y);
        linear(&self.store, self.out[lang.index()], &normed).index_axis_move(Axis(0), 0)
    }
}
