mod common;

use std::collections::HashMap;

use canto_umt::embed::{
    apply_mapping, build_anchor_dict, compose_pivot_private, cosine, learn_mapping, normalize_rows,
    precision_at_1, train_skipgram, EmbeddingMatrix, MappingConfig, SkipGramConfig, PIVOT_HALF_DIM,
};
use ndarray::Array2;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn procrustes_recovers_a_rotation() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = common::gaussian(200, 16, &mut rng);
    let r = common::random_orthogonal(16, &mut rng);
    let (a, b) = (
        common::named_matrix(x.clone()),
        common::named_matrix(x.dot(&r)),
    );
    let dict = build_anchor_dict(&a, &b).unwrap();
    assert_eq!(dict.len(), 200);
    let (w, _) = learn_mapping(&a, &b, &dict, &MappingConfig::default()).unwrap();
    assert!(common::frobenius(&w.w, &r) < 1e-4);
    assert!(w.orthogonality_error() < 1e-5);

    let (w, _) = learn_mapping(&a, &a, &dict, &MappingConfig::default()).unwrap();
    assert!(common::frobenius(&w.w, &Array2::eye(16)) < 1e-6);
}

#[test]
fn self_learning_objective_never_increases() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = common::gaussian(120, 8, &mut rng);
    let r = common::random_orthogonal(8, &mut rng);
    let y = x.dot(&r) + common::gaussian(120, 8, &mut rng) * 0.3;
    let a = common::named_matrix(x);
    // only the first 20 tokens share a surface form
    let mut tokens: Vec<String> = a.tokens().to_vec();
    for t in tokens.iter_mut().skip(20) {
        t.insert(0, 'b');
    }
    let b = EmbeddingMatrix::new(tokens, vec![1; 120], y).unwrap();
    let dict = build_anchor_dict(&a, &b).unwrap();
    assert_eq!(dict.len(), 20);
    let cfg = MappingConfig {
        self_learning_iters: 5,
        ..Default::default()
    };
    let (_, report) = learn_mapping(&a, &b, &dict, &cfg).unwrap();
    for (before, after) in &report.objectives {
        assert!(after <= &(before + 1e-9), "{before} -> {after}");
    }
    assert!(report.orthogonality_errors.iter().all(|e| *e < 1e-5));
}

/// Sentences from a sparse random successor graph over `n` symbols.
fn markov_corpus(n: usize, lines: usize, graph_seed: u64, sample_seed: u64) -> Vec<Vec<usize>> {
    let mut g = ChaCha8Rng::seed_from_u64(graph_seed);
    let next: Vec<Vec<usize>> = (0..n)
        .map(|_| (0..3).map(|_| g.random_range(0..n)).collect())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
    (0..lines)
        .map(|_| {
            let mut s = vec![rng.random_range(0..n)];
            for _ in 0..9 {
                s.push(*next[*s.last().unwrap()].choose(&mut rng).unwrap());
            }
            s
        })
        .collect()
}

fn spell(corpus: &[Vec<usize>], name: impl Fn(usize) -> String) -> Vec<Vec<String>> {
    corpus
        .iter()
        .map(|s| s.iter().map(|&t| name(t)).collect())
        .collect()
}

#[test]
fn mapping_translates_a_relabeled_clone() {
    let n = 150;
    let anchors = 60;
    let a_name = |t: usize| format!("t{t}");
    let b_name = |t: usize| {
        if t < anchors {
            format!("t{t}")
        } else {
            format!("u{t}")
        }
    };
    let cfg = |seed| SkipGramConfig {
        dim: 24,
        window: 2,
        epochs: 5,
        seed,
        ..Default::default()
    };
    let (a, _) = train_skipgram(&spell(&markov_corpus(n, 6000, 1, 10), a_name), &cfg(1)).unwrap();
    let (b, _) = train_skipgram(&spell(&markov_corpus(n, 6000, 1, 20), b_name), &cfg(2)).unwrap();
    let dict = build_anchor_dict(&a, &b).unwrap();
    assert!(dict.len() >= 50);
    let map_cfg = MappingConfig {
        self_learning_iters: 3,
        ..Default::default()
    };
    let (w, _) = learn_mapping(&a, &b, &dict, &map_cfg).unwrap();
    let mapped = apply_mapping(&normalize_rows(a.vectors()), &w);
    let target = normalize_rows(b.vectors());
    let gold: HashMap<usize, usize> = (anchors..n)
        .filter_map(|t| Some((a.index_of(&a_name(t))?, b.index_of(&b_name(t))?)))
        .collect();
    let p = precision_at_1(&mapped, &target, &gold);
    assert!(p >= 0.9, "precision@1 {p}");
}

#[test]
fn co_occurring_tokens_end_up_closer() {
    let mut losses_fell = 0;
    for seed in 1..=5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let filler = ["x1", "x2", "x3", "x4", "y1", "y2", "y3", "y4"];
        let corpus: Vec<Vec<String>> = (0..1000)
            .map(|i| {
                let pool = if i % 2 == 0 {
                    &filler[..4]
                } else {
                    &filler[4..]
                };
                let mut s: Vec<String> = (0..4)
                    .map(|_| pool.choose(&mut rng).unwrap().to_string())
                    .collect();
                if i % 2 == 0 {
                    s.insert(2, "A".into());
                    s.insert(3, "B".into());
                } else {
                    s.insert(2, "C".into());
                }
                s
            })
            .collect();
        let cfg = SkipGramConfig {
            dim: 16,
            window: 2,
            epochs: 5,
            seed,
            ..Default::default()
        };
        let (m, report) = train_skipgram(&corpus, &cfg).unwrap();
        assert_eq!(m.vectors().dim(), (m.len(), 16));
        let (a, b, c) = (
            m.get("A").unwrap(),
            m.get("B").unwrap(),
            m.get("C").unwrap(),
        );
        assert!(cosine(a, b) > cosine(a, c), "seed {seed}");
        if report.epoch_losses[4] < report.epoch_losses[0] {
            losses_fell += 1;
        }
    }
    assert_eq!(losses_fell, 5);
}

#[test]
fn pivot_halves_capture_what_the_languages_share() {
    let a_name = |t: usize| {
        if t < 40 {
            format!("s{t}")
        } else {
            format!("a{t}")
        }
    };
    let b_name = |t: usize| {
        if t < 40 {
            format!("s{t}")
        } else {
            format!("b{t}")
        }
    };
    let ca = spell(&markov_corpus(80, 800, 5, 1), a_name);
    let cb = spell(&markov_corpus(80, 800, 5, 2), b_name);
    let cfg = |seed| SkipGramConfig {
        dim: PIVOT_HALF_DIM,
        window: 2,
        epochs: 2,
        seed,
        ..Default::default()
    };
    let joint: Vec<Vec<String>> = ca.iter().chain(&cb).cloned().collect();
    let (shared, _) = train_skipgram(&joint, &cfg(1)).unwrap();
    let (pa, _) = train_skipgram(&ca, &cfg(2)).unwrap();
    let (pb, _) = train_skipgram(&cb, &cfg(3)).unwrap();
    let pp = compose_pivot_private(&shared, &pa, &pb).unwrap();
    assert_eq!(pp.l1.dim(), 2 * PIVOT_HALF_DIM);
    let (mut full, mut private, mut n) = (0.0, 0.0, 0.0);
    for t in 0..40 {
        let tok = format!("s{t}");
        let (Some(x), Some(y)) = (pp.l1.get(&tok), pp.l2.get(&tok)) else {
            continue;
        };
        full += cosine(x, y);
        private += cosine(pa.get(&tok).unwrap(), pb.get(&tok).unwrap());
        n += 1.0;
    }
    assert!(n > 30.0);
    assert!(full / n >= private / n, "{} vs {}", full / n, private / n);
}
