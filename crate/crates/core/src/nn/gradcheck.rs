//! Central finite-difference verification of the analytic gradients.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::Model;
use super::params::Grads;
use crate::{Lang, Result};

/// One training pair: `(source, source language, target, target language)`.
pub type Pair = (Vec<u32>, Lang, Vec<u32>, Lang);

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    /// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)` over the checked entries.
    pub rel_error: f64,
    pub analytic_norm: f64,
    pub checked: usize,
}

fn total_loss(
    model: &Model,
    pairs: &[Pair],
    dropout_seed: Option<u64>,
    grads: &mut Grads,
) -> Result<f64> {
    let mut loss = 0.0;
    for (i, (src, sl, tgt, tl)) in pairs.iter().enumerate() {
        let mut rng = dropout_seed.map(|s| ChaCha8Rng::seed_from_u64(s.wrapping_add(i as u64)));
        loss += model.accumulate_gradients(src, *sl, tgt, *tl, 1.0, grads, rng.as_mut())?;
    }
    Ok(loss)
}

/// Compares analytic and numeric gradients of the summed NLL over `pairs`
/// for every parameter tensor. At most `max_entries` entries per tensor are
/// perturbed (evenly strided), `None` checks all of them.
pub fn check_gradients(
    model: &mut Model,
    pairs: &[Pair],
    eps: f64,
    max_entries: Option<usize>,
    dropout_seed: Option<u64>,
) -> Result<Vec<ParamCheck>> {
    let mut analytic = Grads::new(model.store());
    total_loss(model, pairs, dropout_seed, &mut analytic)?;
    let ids: Vec<_> = model.store().ids().collect();
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let len = model.store().value(id).len();
        let stride = match max_entries {
            Some(m) if m > 0 && len > m => len.div_ceil(m),
            _ => 1,
        };
        let mut diff2 = 0.0;
        let mut a2 = 0.0;
        let mut n2 = 0.0;
        let mut checked = 0;
        for k in (0..len).step_by(stride) {
            let orig = model.store().value(id).as_slice().expect("contiguous")[k];
            let eval = |v: f64, model: &mut Model| -> Result<f64> {
                model
                    .store_mut()
                    .value_mut(id)
                    .as_slice_mut()
                    .expect("contiguous")[k] = v;
                let mut scratch = Grads::new(model.store());
                total_loss(model, pairs, dropout_seed, &mut scratch)
            };
            let plus = eval(orig + eps, model)?;
            let minus = eval(orig - eps, model)?;
            model
                .store_mut()
                .value_mut(id)
                .as_slice_mut()
                .expect("contiguous")[k] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic
                .get(id)
                .map_or(0.0, |g| g.as_slice().expect("contiguous")[k]);
            diff2 += (a - numeric).powi(2);
            a2 += a * a;
            n2 += numeric * numeric;
            checked += 1;
        }
        let denom = a2.sqrt().max(n2.sqrt());
        let rel_error = if denom == 0.0 {
            0.0
        } else {
            diff2.sqrt() / denom
        };
        out.push(ParamCheck {
            name: model.store().param(id).name.clone(),
            rel_error,
            analytic_norm: a2.sqrt(),
            checked,
        });
    }
    Ok(out)
}
