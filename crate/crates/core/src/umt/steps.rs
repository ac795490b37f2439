use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::noise::{add_noise, NoiseConfig};
use crate::eval::decode::{decode, DecodeConfig};
use crate::hash::ContentHasher;
use crate::nn::{Grads, Model, Optimizer};
use crate::vocab::EOS_ID;
use crate::{Error, Lang, Result};

/// Seed material for one training step; every random draw of the step is
/// derived from it, so a resumed run repeats the same draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepContext {
    pub step: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy)]
#[repr(u64)]
pub(crate) enum Stream {
    Batch = 1,
    Noise = 2,
    Dropout = 3,
}

/// SplitMix64 finalizer over the combined inputs.
pub(crate) fn derive_seed(seed: u64, step: usize, index: usize, stream: Stream) -> u64 {
    let mut z = seed
        ^ (step as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (index as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
        ^ (stream as u64).wrapping_mul(0x1656_67B1_9E37_79F9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl StepContext {
    pub(crate) fn rng(&self, index: usize, stream: Stream) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(derive_seed(self.seed, self.step, index, stream))
    }
}

/// A supervised example: source ids and language, target ids and language,
/// both without EOS.
pub type Example<'a> = (&'a [u32], Lang, &'a [u32], Lang);

fn batch_hash(examples: &[Example<'_>]) -> String {
    let mut h = ContentHasher::new();
    for (s, sl, t, tl) in examples {
        let bytes: Vec<u8> = s.iter().flat_map(|x| x.to_le_bytes()).collect();
        h.part(sl.as_str(), &bytes);
        let bytes: Vec<u8> = t.iter().flat_map(|x| x.to_le_bytes()).collect();
        h.part(tl.as_str(), &bytes);
    }
    h.finish()[..16].to_string()
}

fn with_eos(ids: &[u32]) -> Vec<u32> {
    let mut v = Vec::with_capacity(ids.len() + 1);
    v.extend_from_slice(ids);
    v.push(EOS_ID);
    v
}

/// Gradients of the token-mean NLL over `examples`, without updating.
pub fn batch_gradients(
    model: &Model,
    examples: &[Example<'_>],
    ctx: StepContext,
) -> Result<(f64, Grads)> {
    let tokens: usize = examples.iter().map(|e| e.2.len() + 1).sum();
    let mut grads = Grads::new(model.store());
    if tokens == 0 {
        return Ok((0.0, grads));
    }
    let scale = 1.0 / tokens as f64;
    let mut nll = 0.0;
    for (i, (src, sl, tgt, tl)) in examples.iter().enumerate() {
        let mut rng = ctx.rng(i, Stream::Dropout);
        let rng = (model.config().dropout > 0.0).then_some(&mut rng);
        nll += model.accumulate_gradients(
            &with_eos(src),
            *sl,
            &with_eos(tgt),
            *tl,
            scale,
            &mut grads,
            rng,
        )?;
    }
    let loss = nll * scale;
    if !loss.is_finite() || !grads.all_finite() {
        return Err(Error::NonFinite {
            step: ctx.step,
            batch_hash: batch_hash(examples),
        });
    }
    Ok((loss, grads))
}

/// One optimizer step on the token-mean NLL of `examples`.
pub fn supervised_step(
    model: &mut Model,
    opt: &mut Optimizer,
    examples: &[Example<'_>],
    ctx: StepContext,
) -> Result<f64> {
    let (loss, grads) = batch_gradients(model, examples, ctx)?;
    opt.step(model.store_mut(), &grads);
    if !model.store().all_finite() {
        return Err(Error::NonFinite {
            step: ctx.step,
            batch_hash: batch_hash(examples),
        });
    }
    Ok(loss)
}

/// Denoising autoencoding: reconstruct each sentence from a corrupted copy
/// through `lang`'s decoder.
pub fn dae_step(
    model: &mut Model,
    opt: &mut Optimizer,
    batch: &[&[u32]],
    lang: Lang,
    noise: &NoiseConfig,
    ctx: StepContext,
) -> Result<f64> {
    let noisy: Vec<Vec<u32>> = batch
        .iter()
        .enumerate()
        .map(|(i, x)| {
            add_noise(
                x,
                &noise.with_seed(derive_seed(ctx.seed, ctx.step, i, Stream::Noise)),
            )
        })
        .collect();
    let examples: Vec<Example<'_>> = noisy
        .iter()
        .zip(batch)
        .map(|(n, x)| (n.as_slice(), lang, *x, lang))
        .collect();
    supervised_step(model, opt, &examples, ctx)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BtOutcome {
    /// Token-mean loss over the trained pairs; 0 when all were skipped.
    pub loss: f64,
    pub trained: usize,
    /// Sentences whose synthetic translation came out empty.
    pub skipped: usize,
}

/// On-the-fly back-translation with a caller-supplied generator: each
/// sentence of `src_lang` is translated by `generate` (no gradient), then
/// the model learns to map the synthetic text back to the original.
pub fn backtranslation_step_with<G>(
    model: &mut Model,
    opt: &mut Optimizer,
    batch: &[&[u32]],
    src_lang: Lang,
    ctx: StepContext,
    mut generate: G,
) -> Result<BtOutcome>
where
    G: FnMut(&Model, &[u32]) -> Result<Vec<u32>>,
{
    let mut synthetic = Vec::with_capacity(batch.len());
    for x in batch {
        synthetic.push(generate(model, x)?);
    }
    let other = src_lang.other();
    let examples: Vec<Example<'_>> = synthetic
        .iter()
        .zip(batch)
        .filter(|(s, _)| !s.is_empty())
        .map(|(s, x)| (s.as_slice(), other, *x, src_lang))
        .collect();
    let skipped = batch.len() - examples.len();
    if examples.is_empty() {
        return Ok(BtOutcome {
            loss: 0.0,
            trained: 0,
            skipped,
        });
    }
    let loss = supervised_step(model, opt, &examples, ctx)?;
    Ok(BtOutcome {
        loss,
        trained: examples.len(),
        skipped,
    })
}

/// Back-translation length cap for a sentence of `len` tokens.
pub fn bt_max_len(len: usize, model_max: usize) -> usize {
    (len + len / 2 + 5).min(model_max.saturating_sub(1)).max(1)
}

/// [`backtranslation_step_with`] using the model's own decoder.
pub fn backtranslation_step(
    model: &mut Model,
    opt: &mut Optimizer,
    batch: &[&[u32]],
    src_lang: Lang,
    beam_size: usize,
    ctx: StepContext,
) -> Result<BtOutcome> {
    let model_max = model.config().max_len;
    backtranslation_step_with(model, opt, batch, src_lang, ctx, |m, x| {
        let cfg = DecodeConfig {
            beam_size,
            max_len: bt_max_len(x.len(), model_max),
            ..Default::default()
        };
        Ok(decode(m, x, src_lang, src_lang.other(), &cfg)?
            .content()
            .to_vec())
    })
}
