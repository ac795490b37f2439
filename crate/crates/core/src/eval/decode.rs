use ndarray::Array1;

use crate::nn::ops::log_sum_exp;
use crate::nn::{DecoderState, Mat, Model};
use crate::vocab::{bos_id, EOS_ID};
use crate::{Error, Lang, Result};

pub const DEFAULT_LENGTH_PENALTY: f64 = 0.6;

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Generated ids; ends with EOS when the decoder stopped by itself.
    pub tokens: Vec<u32>,
    pub log_prob: f64,
    pub finished: bool,
}

impl Hypothesis {
    /// Tokens without the trailing EOS.
    pub fn content(&self) -> &[u32] {
        match self.tokens.split_last() {
            Some((&EOS_ID, rest)) => rest,
            _ => &self.tokens,
        }
    }

    /// `log_prob / len^alpha`.
    pub fn score(&self, alpha: f64) -> f64 {
        self.log_prob / (self.tokens.len().max(1) as f64).powf(alpha)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeConfig {
    pub beam_size: usize,
    /// Cap on generated tokens, EOS included.
    pub max_len: usize,
    pub length_penalty: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            beam_size: 1,
            max_len: 100,
            length_penalty: DEFAULT_LENGTH_PENALTY,
        }
    }
}

fn log_softmax(logits: &Array1<f64>) -> Array1<f64> {
    let lse = log_sum_exp(logits.view());
    logits.mapv(|x| x - lse)
}

fn argmax(v: &Array1<f64>) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn effective_max_len(model: &Model, max_len: usize) -> usize {
    max_len.min(model.config().max_len)
}

/// Argmax chain of decode steps.
pub fn greedy(model: &Model, enc: &Mat, tgt_lang: Lang, max_len: usize) -> Result<Hypothesis> {
    let max_len = effective_max_len(model, max_len);
    let mut state = model.start(enc, tgt_lang);
    let mut prev = bos_id(tgt_lang);
    let mut hyp = Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        finished: false,
    };
    while hyp.tokens.len() < max_len {
        let lp = log_softmax(&model.decode_step(prev, &mut state, enc, tgt_lang)?);
        let next = argmax(&lp) as u32;
        hyp.tokens.push(next);
        hyp.log_prob += lp[next as usize];
        if next == EOS_ID {
            break;
        }
        prev = next;
    }
    hyp.finished = true;
    Ok(hyp)
}

struct Live {
    hyp: Hypothesis,
    state: DecoderState,
}

/// Beam search with length-normalized final selection. The greedy
/// hypothesis is always a candidate, so the result never scores below it.
pub fn beam_search(
    model: &Model,
    enc: &Mat,
    tgt_lang: Lang,
    cfg: &DecodeConfig,
) -> Result<Hypothesis> {
    if cfg.beam_size == 0 {
        return Err(Error::InvalidArgument(
            "beam size must be at least 1".into(),
        ));
    }
    let greedy_hyp = greedy(model, enc, tgt_lang, cfg.max_len)?;
    if cfg.beam_size == 1 {
        return Ok(greedy_hyp);
    }
    let max_len = effective_max_len(model, cfg.max_len);
    let k = cfg.beam_size;
    let mut live = vec![Live {
        hyp: Hypothesis {
            tokens: Vec::new(),
            log_prob: 0.0,
            finished: false,
        },
        state: model.start(enc, tgt_lang),
    }];
    let mut finished: Vec<Hypothesis> = vec![greedy_hyp];
    while !live.is_empty() {
        let mut candidates: Vec<(usize, u32, f64)> = Vec::new();
        let mut states = Vec::with_capacity(live.len());
        for (i, l) in live.iter_mut().enumerate() {
            let prev = l.hyp.tokens.last().copied().unwrap_or(bos_id(tgt_lang));
            let mut state = l.state.clone();
            let lp = log_softmax(&model.decode_step(prev, &mut state, enc, tgt_lang)?);
            let mut order: Vec<usize> = (0..lp.len()).collect();
            order.sort_by(|&a, &b| lp[b].total_cmp(&lp[a]).then(a.cmp(&b)));
            for &t in order.iter().take(k) {
                candidates.push((i, t as u32, l.hyp.log_prob + lp[t]));
            }
            states.push(state);
        }
        candidates.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.0, a.1).cmp(&(b.0, b.1))));
        let mut next = Vec::with_capacity(k);
        for (i, tok, lp) in candidates.into_iter().take(k) {
            let mut tokens = live[i].hyp.tokens.clone();
            tokens.push(tok);
            let done = tok == EOS_ID || tokens.len() >= max_len;
            let hyp = Hypothesis {
                tokens,
                log_prob: lp,
                finished: done,
            };
            if done {
                finished.push(hyp);
            } else {
                next.push(Live {
                    hyp,
                    state: states[i].clone(),
                });
            }
        }
        live = next;
        if finished.len() > k {
            // Stop once no live hypothesis can still overtake the best finished one.
            let best = finished
                .iter()
                .map(|h| h.score(cfg.length_penalty))
                .fold(f64::NEG_INFINITY, f64::max);
            let bound = live
                .iter()
                .map(|l| l.hyp.log_prob / (max_len as f64).powf(cfg.length_penalty))
                .fold(f64::NEG_INFINITY, f64::max);
            if bound <= best {
                break;
            }
        }
    }
    let best = finished
        .into_iter()
        .reduce(|a, b| {
            if b.score(cfg.length_penalty) > a.score(cfg.length_penalty) {
                b
            } else {
                a
            }
        })
        .expect("greedy hypothesis is always present");
    Ok(best)
}

/// Encode `src` (EOS appended) and decode into `tgt_lang`.
pub fn decode(
    model: &Model,
    src: &[u32],
    src_lang: Lang,
    tgt_lang: Lang,
    cfg: &DecodeConfig,
) -> Result<Hypothesis> {
    let mut ids = src.to_vec();
    ids.push(EOS_ID);
    let enc = model.encode(&ids, src_lang)?;
    beam_search(model, &enc, tgt_lang, cfg)
}
