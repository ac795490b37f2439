use canto_umt::nn::gradcheck::{check_gradients, Pair};
use canto_umt::nn::{
    attend, DecoderState, Grads, Model, ModelConfig, Optimizer, OptimizerConfig, OptimizerKind,
    Variant,
};
use canto_umt::vocab::{bos_id, EOS_ID};
use canto_umt::Lang;
use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pairs() -> Vec<Pair> {
    vec![
        (
            vec![5, 6, 7, EOS_ID],
            Lang::L1,
            vec![8, 5, EOS_ID],
            Lang::L1,
        ),
        (
            vec![9, 10, EOS_ID],
            Lang::L2,
            vec![6, 11, 7, EOS_ID],
            Lang::L1,
        ),
        (
            vec![6, 8, 5, 9, EOS_ID],
            Lang::L1,
            vec![10, EOS_ID],
            Lang::L2,
        ),
        (
            vec![11, EOS_ID],
            Lang::L2,
            vec![9, 9, 12, 5, EOS_ID],
            Lang::L2,
        ),
    ]
}

fn tiny(variant: Variant) -> ModelConfig {
    let mut c = ModelConfig::tiny(variant, [13, 14], 8);
    c.freeze_embeddings = false;
    c
}

/// Moves every parameter away from its (small) initial value so that all
/// gradients are well above finite-difference noise.
fn perturb(model: &mut Model, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<_> = model.store().ids().collect();
    for id in ids {
        model
            .store_mut()
            .value_mut(id)
            .mapv_inplace(|x| x + rng.random_range(-0.5..0.5));
    }
}

fn assert_gradients(cfg: &ModelConfig, dropout_seed: Option<u64>) {
    assert_gradients_eps(cfg, dropout_seed, 1e-5)
}

fn assert_gradients_eps(cfg: &ModelConfig, dropout_seed: Option<u64>, eps: f64) {
    let mut model = Model::new(cfg, 3).unwrap();
    perturb(&mut model, 17);
    let report = check_gradients(&mut model, &pairs(), eps, Some(40), dropout_seed).unwrap();
    for c in &report {
        assert!(c.analytic_norm > 0.0, "{} received no gradient", c.name);
        assert!(
            c.rel_error < 1e-4,
            "{}: relative error {}",
            c.name,
            c.rel_error
        );
    }
}

#[test]
fn transformer_gradients_match_finite_differences() {
    assert_gradients(&tiny(Variant::Transformer), None);
}

#[test]
fn gru_gradients_match_finite_differences() {
    assert_gradients(&tiny(Variant::Gru), None);
}

#[test]
fn gradients_hold_with_fixed_dropout_masks() {
    let mut c = tiny(Variant::Transformer);
    c.dropout = 0.2;
    // Dropout scaling pushes more ReLU inputs near zero; a smaller step
    // keeps the central difference off the kinks.
    assert_gradients_eps(&c, Some(11), 1e-6);
    let mut g = tiny(Variant::Gru);
    g.dropout = 0.2;
    assert_gradients_eps(&g, Some(11), 1e-6);
}

#[test]
fn transformer_with_private_encoder_layer_checks_out() {
    let mut c = tiny(Variant::Transformer);
    c.shared_encoder_layers = 3;
    c.layers = 4;
    assert_gradients(&c, None);
}

#[test]
fn encoder_output_shape() {
    for v in [Variant::Gru, Variant::Transformer] {
        let model = Model::new(&tiny(v), 1).unwrap();
        assert_eq!(model.encode(&[7], Lang::L1).unwrap().dim(), (1, 8));
        assert_eq!(model.encode(&[7, 8, 9], Lang::L2).unwrap().dim(), (3, 8));
    }
}

#[test]
fn encoder_is_language_agnostic() {
    for v in [Variant::Gru, Variant::Transformer] {
        let mut cfg = tiny(v);
        cfg.vocab_sizes = [13, 13];
        let mut model = Model::new(&cfg, 1).unwrap();
        let table = model.store().value(model.embedding_id(Lang::L1)).clone();
        model.set_embeddings(Lang::L2, &table).unwrap();
        let a = model.encode(&[5, 6, 7], Lang::L1).unwrap();
        let b = model.encode(&[5, 6, 7], Lang::L2).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn too_long_input_is_rejected() {
    let mut cfg = tiny(Variant::Transformer);
    cfg.max_len = 3;
    let model = Model::new(&cfg, 1).unwrap();
    assert!(model.encode(&[5, 6, 7, 8], Lang::L1).is_err());
}

fn step_logits(model: &Model, src: &[u32], tgt: &[u32], lang: Lang) -> Vec<Array1<f64>> {
    let enc = model.encode(src, Lang::L1).unwrap();
    let mut state = model.start(&enc, lang);
    let mut prev = bos_id(lang);
    let mut out = Vec::new();
    for &t in tgt {
        out.push(model.decode_step(prev, &mut state, &enc, lang).unwrap());
        prev = t;
    }
    out
}

#[test]
fn incremental_decoding_matches_teacher_forcing() {
    for v in [Variant::Gru, Variant::Transformer] {
        let model = Model::new(&tiny(v), 5).unwrap();
        let src = [5, 6, 7, EOS_ID];
        let tgt = [9, 8, 10, EOS_ID];
        let full = model
            .forward_logits(&src, Lang::L1, &tgt, Lang::L2)
            .unwrap();
        let steps = step_logits(&model, &src, &tgt, Lang::L2);
        for (t, row) in steps.iter().enumerate() {
            assert_eq!(row.len(), 14);
            for (a, b) in row.iter().zip(full.row(t)) {
                assert!((a - b).abs() < 1e-10, "{v} step {t}");
            }
        }
    }
}

#[test]
fn masked_self_attention_ignores_future_tokens() {
    let model = Model::new(&tiny(Variant::Transformer), 5).unwrap();
    let src = [5, 6, EOS_ID];
    let a = model
        .forward_logits(&src, Lang::L1, &[9, 8, 10, 11, EOS_ID], Lang::L1)
        .unwrap();
    let b = model
        .forward_logits(&src, Lang::L1, &[9, 8, 12, 5, EOS_ID], Lang::L1)
        .unwrap();
    // Position t sees decoder inputs 0..=t, i.e. targets before t.
    for t in 0..3 {
        assert_eq!(a.row(t), b.row(t));
    }
    assert_ne!(a.row(3), b.row(3));
}

#[test]
fn language_selects_decoder_and_bos() {
    for v in [Variant::Gru, Variant::Transformer] {
        let mut cfg = tiny(v);
        cfg.vocab_sizes = [13, 13];
        let model = Model::new(&cfg, 2).unwrap();
        let enc = model.encode(&[5, 6], Lang::L1).unwrap();
        let mut s1 = model.start(&enc, Lang::L1);
        let mut s2 = model.start(&enc, Lang::L2);
        let l1 = model
            .decode_step(bos_id(Lang::L1), &mut s1, &enc, Lang::L1)
            .unwrap();
        let l2 = model
            .decode_step(bos_id(Lang::L2), &mut s2, &enc, Lang::L2)
            .unwrap();
        assert_ne!(l1, l2);
    }
}

#[test]
fn decoding_is_deterministic() {
    let model = Model::new(&tiny(Variant::Transformer), 9).unwrap();
    let a = step_logits(&model, &[5, 6, EOS_ID], &[7, 8], Lang::L2);
    let b = step_logits(&model, &[5, 6, EOS_ID], &[7, 8], Lang::L2);
    assert_eq!(a, b);
}

#[test]
fn mismatched_state_is_rejected() {
    let gru = Model::new(&tiny(Variant::Gru), 1).unwrap();
    let tr = Model::new(&tiny(Variant::Transformer), 1).unwrap();
    let enc = tr.encode(&[5], Lang::L1).unwrap();
    let mut state: DecoderState = tr.start(&enc, Lang::L1);
    assert!(gru
        .decode_step(bos_id(Lang::L1), &mut state, &enc, Lang::L1)
        .is_err());
}

#[test]
fn attention_weights_are_normalized() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..100 {
        let n = rng.random_range(1..10);
        let states = ndarray::Array2::from_shape_fn((n, 6), |_| rng.random_range(-3.0..3.0));
        let q = Array1::from_shape_fn(6, |_| rng.random_range(-3.0..3.0));
        let a = attend(q.view(), states.view()).unwrap();
        assert!(a.weights.iter().all(|&w| w >= 0.0));
        assert!((a.weights.sum() - 1.0).abs() < 1e-6);
        let expect = states.t().dot(&a.weights);
        for (x, y) in a.context.iter().zip(&expect) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

fn train_steps(model: &mut Model, opt: &mut Optimizer, steps: usize) -> Vec<f64> {
    let mut losses = Vec::new();
    for s in 0..steps {
        let (src, sl, tgt, tl) = &pairs()[s % 4];
        let mut g = Grads::new(model.store());
        let mut rng = ChaCha8Rng::seed_from_u64(s as u64);
        losses.push(
            model
                .accumulate_gradients(src, *sl, tgt, *tl, 1.0, &mut g, Some(&mut rng))
                .unwrap(),
        );
        opt.step(model.store_mut(), &g);
    }
    losses
}

#[test]
fn shared_decoder_layers_stay_identical() {
    let mut cfg = tiny(Variant::Transformer);
    cfg.dropout = 0.1;
    let mut model = Model::new(&cfg, 1).unwrap();
    let mut opt = Optimizer::new(OptimizerConfig::default(), model.store());
    train_steps(&mut model, &mut opt, 20);
    for layer in 0..4 {
        let a = model.decoder_layer_ids(Lang::L1, layer);
        let b = model.decoder_layer_ids(Lang::L2, layer);
        let same = a
            .iter()
            .zip(&b)
            .all(|(x, y)| model.store().value(*x) == model.store().value(*y));
        assert_eq!(same, layer < 3, "layer {layer}");
    }
}

#[test]
fn frozen_embeddings_never_change() {
    let cfg = ModelConfig::tiny(Variant::Gru, [13, 14], 8);
    assert!(cfg.freeze_embeddings);
    let mut model = Model::new(&cfg, 1).unwrap();
    let before = [Lang::L1, Lang::L2].map(|l| model.store().value(model.embedding_id(l)).clone());
    let mut opt = Optimizer::new(
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            ..Default::default()
        },
        model.store(),
    );
    train_steps(&mut model, &mut opt, 10);
    for l in [Lang::L1, Lang::L2] {
        assert_eq!(
            model.store().value(model.embedding_id(l)),
            &before[l.index()]
        );
    }
}

#[test]
fn training_is_deterministic() {
    let run = || {
        let mut cfg = tiny(Variant::Transformer);
        cfg.dropout = 0.1;
        let mut model = Model::new(&cfg, 8).unwrap();
        let mut opt = Optimizer::new(OptimizerConfig::default(), model.store());
        train_steps(&mut model, &mut opt, 15)
    };
    assert_eq!(run(), run());
}
