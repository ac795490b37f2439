use super::decode::{decode, DecodeConfig};
use crate::nn::Model;
use crate::segment::Tokenizer;
use crate::vocab::{Vocab, UNK, UNK_ID};
use crate::{Lang, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Translation {
    pub text: String,
    pub tokens: Vec<String>,
    pub log_prob: f64,
    /// Source tokens missing from the source vocabulary.
    pub source_unk: usize,
    /// `<UNK>` tokens in the output.
    pub output_unk: usize,
}

impl Translation {
    pub fn has_unk(&self) -> bool {
        self.source_unk > 0 || self.output_unk > 0
    }
}

/// Tokenize, decode and detokenize one sentence. `tokenizers` and `vocabs`
/// are indexed by language.
pub fn translate(
    model: &Model,
    tokenizers: [&Tokenizer; 2],
    vocabs: [&Vocab; 2],
    sentence: &str,
    src_lang: Lang,
    tgt_lang: Lang,
    cfg: &DecodeConfig,
) -> Result<Translation> {
    let tokens = tokenizers[src_lang.index()].tokenize(sentence).tokens;
    let mut ids = vocabs[src_lang.index()].encode(&tokens);
    // Leave room for EOS.
    ids.truncate(model.config().max_len.saturating_sub(1));
    let source_unk = ids.iter().filter(|&&i| i == UNK_ID).count();
    let hyp = decode(model, &ids, src_lang, tgt_lang, cfg)?;
    let out = vocabs[tgt_lang.index()].decode(hyp.content());
    let output_unk = out.iter().filter(|t| *t == UNK).count();
    Ok(Translation {
        text: tokenizers[tgt_lang.index()].detokenize_lossy(&out),
        tokens: out,
        log_prob: hyp.log_prob,
        source_unk,
        output_unk,
    })
}
