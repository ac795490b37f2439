use ndarray::Array1;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{ModelConfig, Variant};
use super::gru::{GruModel, GruState};
use super::loss::cross_entropy_grad;
use super::params::{Grads, Mat, ParamId, ParamStore};
use super::transformer::{TransformerModel, TransformerState};
use crate::vocab::bos_id;
use crate::{Error, Lang, Result};

/// A shared-encoder / dual-decoder translation model.
#[derive(Debug, Clone)]
pub enum Model {
    Gru(GruModel),
    Transformer(TransformerModel),
}

#[derive(Debug, Clone)]
pub enum DecoderState {
    Gru(GruState),
    Transformer(TransformerState),
}

/// Decoder input for a target sequence: the language's BOS followed by all
/// target tokens but the last.
pub fn decoder_inputs(target: &[u32], lang: Lang) -> Vec<u32> {
    let mut v = Vec::with_capacity(target.len());
    v.push(bos_id(lang));
    if let Some((_, init)) = target.split_last() {
        v.extend_from_slice(init);
    }
    v
}

impl Model {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(match cfg.variant {
            Variant::Gru => Model::Gru(GruModel::new(cfg, &mut rng)),
            Variant::Transformer => Model::Transformer(TransformerModel::new(cfg, &mut rng)),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        match self {
            Model::Gru(m) => m.config(),
            Model::Transformer(m) => m.config(),
        }
    }

    pub fn store(&self) -> &ParamStore {
        match self {
            Model::Gru(m) => m.store(),
            Model::Transformer(m) => m.store(),
        }
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        match self {
            Model::Gru(m) => m.store_mut(),
            Model::Transformer(m) => m.store_mut(),
        }
    }

    pub fn embedding_id(&self, lang: Lang) -> ParamId {
        match self {
            Model::Gru(m) => m.embedding_id(lang),
            Model::Transformer(m) => m.embedding_id(lang),
        }
    }

    pub fn vocab_size(&self, lang: Lang) -> usize {
        self.config().vocab_sizes[lang.index()]
    }

    /// Replace an embedding table (rows = vocabulary, columns = embedding width).
    pub fn set_embeddings(&mut self, lang: Lang, table: &Mat) -> Result<()> {
        let id = self.embedding_id(lang);
        let current = self.store().value(id).dim();
        if table.dim() != current {
            return Err(Error::DimensionMismatch {
                expected: current.0 * current.1,
                found: table.len(),
            });
        }
        self.store_mut().value_mut(id).assign(table);
        Ok(())
    }

    fn check_tokens(&self, tokens: &[u32], lang: Lang) -> Result<()> {
        let max = self.config().max_len;
        if tokens.len() > max {
            return Err(Error::SequenceTooLong {
                len: tokens.len(),
                max,
            });
        }
        let v = self.vocab_size(lang);
        if let Some(&t) = tokens.iter().find(|&&t| t as usize >= v) {
            return Err(Error::InvalidArgument(format!(
                "token id {t} outside {lang} vocabulary of {v}"
            )));
        }
        Ok(())
    }

    /// Encoder states, one row per input token.
    pub fn encode(&self, tokens: &[u32], lang: Lang) -> Result<Mat> {
        self.check_tokens(tokens, lang)?;
        if tokens.is_empty() {
            return Err(Error::InvalidArgument(
                "cannot encode an empty sequence".into(),
            ));
        }
        Ok(match self {
            Model::Gru(m) => m.encode_train(tokens, lang, None).0,
            Model::Transformer(m) => m.encode_train(tokens, lang, None).0,
        })
    }

    pub fn start(&self, enc: &Mat, lang: Lang) -> DecoderState {
        match self {
            Model::Gru(m) => DecoderState::Gru(m.start(enc, lang)),
            Model::Transformer(m) => DecoderState::Transformer(m.start(enc, lang)),
        }
    }

    /// Logits over `lang`'s vocabulary for the next token after `prev`.
    /// The first call after [`Model::start`] should pass `bos_id(lang)`.
    pub fn decode_step(
        &self,
        prev: u32,
        state: &mut DecoderState,
        enc: &Mat,
        lang: Lang,
    ) -> Result<Array1<f64>> {
        self.check_tokens(&[prev], lang)?;
        match (self, state) {
            (Model::Gru(m), DecoderState::Gru(s)) => Ok(m.step(prev, s, enc, lang)),
            (Model::Transformer(m), DecoderState::Transformer(s)) => {
                if s.len() >= self.config().max_len {
                    return Err(Error::SequenceTooLong {
                        len: s.len() + 1,
                        max: self.config().max_len,
                    });
                }
                Ok(m.step(prev, s, lang))
            }
            _ => Err(Error::InvalidArgument(
                "decoder state belongs to another model variant".into(),
            )),
        }
    }

    /// Teacher-forced logits for every target position.
    pub fn forward_logits(
        &self,
        src: &[u32],
        src_lang: Lang,
        target: &[u32],
        tgt_lang: Lang,
    ) -> Result<Mat> {
        let enc = self.encode(src, src_lang)?;
        let inputs = decoder_inputs(target, tgt_lang);
        self.check_tokens(&inputs, tgt_lang)?;
        Ok(match self {
            Model::Gru(m) => m.decode_train(&enc, &inputs, tgt_lang, None).0,
            Model::Transformer(m) => m.decode_train(&enc, &inputs, tgt_lang, None).0,
        })
    }

    /// Forward and backward pass for one (source, target) pair. Adds
    /// `scale · ∂NLL/∂θ` into `grads` and returns the summed NLL.
    pub fn accumulate_gradients(
        &self,
        src: &[u32],
        src_lang: Lang,
        target: &[u32],
        tgt_lang: Lang,
        scale: f64,
        grads: &mut Grads,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<f64> {
        self.check_tokens(src, src_lang)?;
        self.check_tokens(target, tgt_lang)?;
        if src.is_empty() || target.is_empty() {
            return Err(Error::InvalidArgument("empty training sequence".into()));
        }
        let inputs = decoder_inputs(target, tgt_lang);
        match self {
            Model::Gru(m) => {
                let (enc, ec) = m.encode_train(src, src_lang, rng.as_deref_mut());
                let (logits, dc) = m.decode_train(&enc, &inputs, tgt_lang, rng.as_deref_mut());
                let (nll, dlogits) = cross_entropy_grad(&logits, target, scale)?;
                let denc = m.decode_backward(&dc, &enc, &dlogits, grads);
                m.encode_backward(&ec, &denc, grads);
                Ok(nll)
            }
            Model::Transformer(m) => {
                let (enc, ec) = m.encode_train(src, src_lang, rng.as_deref_mut());
                let (logits, dc) = m.decode_train(&enc, &inputs, tgt_lang, rng);
                let (nll, dlogits) = cross_entropy_grad(&logits, target, scale)?;
                let denc = m.decode_backward(&dc, &dlogits, enc.dim(), grads);
                m.encode_backward(&ec, &denc, grads);
                Ok(nll)
            }
        }
    }

    /// Summed NLL of `target` given `src` (no dropout, no gradient).
    pub fn sequence_nll(
        &self,
        src: &[u32],
        src_lang: Lang,
        target: &[u32],
        tgt_lang: Lang,
    ) -> Result<f64> {
        let logits = self.forward_logits(src, src_lang, target, tgt_lang)?;
        Ok(cross_entropy_grad(&logits, target, 0.0)?.0)
    }

    /// Parameter ids of decoder layer `layer` of `lang` (transformer only).
    pub fn decoder_layer_ids(&self, lang: Lang, layer: usize) -> Vec<ParamId> {
        match self {
            Model::Transformer(m) => m.decoder_layer_ids(lang, layer),
            Model::Gru(_) => Vec::new(),
        }
    }
}
