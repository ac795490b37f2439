//! Oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;

use canto_umt::bpe::WordCounts;
use canto_umt::corpus::pipeline::process_str;
use canto_umt::corpus::LanguageLabel;
use canto_umt::embed::EmbeddingMatrix;
use canto_umt::synth::dialect_corpus;
use nalgebra::DMatrix;
use ndarray::Array2;
use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const PIPELINE_FIXTURE: &str = include_str!("../fixtures/pipeline_200.tsv");

/// `(expected label, line)`; labels are cantonese, mandarin, ambiguous,
/// foreign or noise.
pub fn pipeline_fixture() -> Vec<(&'static str, &'static str)> {
    PIPELINE_FIXTURE
        .lines()
        .map(|l| l.split_once('\t').expect("label<TAB>text"))
        .collect()
}

/// Routes every fixture line on its own and returns the disagreements.
pub fn pipeline_disagreements() -> Vec<String> {
    let mut bad = Vec::new();
    for (n, (want, line)) in pipeline_fixture().into_iter().enumerate() {
        let out = process_str("fixture", line);
        let got = match (out.sentences.as_slice(), &out.stats) {
            ([s], _) => match s.label {
                Some(LanguageLabel::Cantonese) => "cantonese",
                Some(LanguageLabel::Mandarin) => "mandarin",
                Some(LanguageLabel::Ambiguous) => "ambiguous",
                _ => "unlabeled",
            },
            ([], st) if st.dropped_foreign == 1 && st.dropped_empty == 0 => "foreign",
            ([], st) if st.dropped_empty >= 1 && st.dropped_foreign == 0 => "noise",
            _ => "split",
        };
        if got != want {
            bad.push(format!("line {}: want {want}, got {got}: {line}", n + 1));
        }
    }
    bad
}

/// Brute-force BPE: recount every adjacent pair each iteration, take the
/// most frequent, lexicographically smallest on ties.
pub fn bpe_oracle(words: &BTreeMap<String, u64>, num_merges: usize) -> Vec<(String, String)> {
    let mut segs: Vec<(Vec<String>, u64)> = words
        .iter()
        .filter(|(w, &c)| !w.is_empty() && c > 0)
        .map(|(w, &c)| {
            let mut s: Vec<String> = w.chars().map(String::from).collect();
            let last = s.pop().unwrap();
            s.push(last + "</w>");
            (s, c)
        })
        .collect();
    let mut merges = Vec::new();
    while merges.len() < num_merges {
        let mut counts: BTreeMap<(String, String), u64> = BTreeMap::new();
        for (s, c) in &segs {
            for w in s.windows(2) {
                *counts.entry((w[0].clone(), w[1].clone())).or_default() += c;
            }
        }
        let mut best: Option<(&(String, String), u64)> = None;
        for (p, &c) in &counts {
            if best.is_none_or(|(_, b)| c > b) {
                best = Some((p, c));
            }
        }
        let Some(((l, r), _)) = best else { break };
        let (l, r) = (l.clone(), r.clone());
        for (s, _) in &mut segs {
            let mut out = Vec::with_capacity(s.len());
            let mut i = 0;
            while i < s.len() {
                if i + 1 < s.len() && s[i] == l && s[i + 1] == r {
                    out.push(format!("{l}{r}"));
                    i += 2;
                } else {
                    out.push(s[i].clone());
                    i += 1;
                }
            }
            *s = out;
        }
        merges.push((l, r));
    }
    merges
}

/// A toy corpus of at most 100 distinct words over a small alphabet, so
/// that ties and overlapping pairs are common.
pub fn random_word_counts(rng: &mut ChaCha8Rng) -> WordCounts {
    const ALPHABET: [&str; 7] = ["低", "碳", "生", "活", "a", "b", "咗"];
    let alphabet = &ALPHABET[..rng.random_range(2..=ALPHABET.len())];
    let distinct = rng.random_range(1..=100);
    let mut words = BTreeMap::new();
    for _ in 0..distinct {
        let len = rng.random_range(1..=7);
        let w: String = (0..len).map(|_| *alphabet.choose(rng).unwrap()).collect();
        *words.entry(w).or_insert(0) += rng.random_range(1..=20u64);
    }
    WordCounts(words)
}

pub fn random_orthogonal(d: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let m = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let q = m.qr().q();
    Array2::from_shape_fn((d, d), |(i, j)| q[(i, j)])
}

pub fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
}

/// Embedding matrix over tokens `w0..w{n-1}`.
pub fn named_matrix(vectors: Array2<f64>) -> EmbeddingMatrix {
    let n = vectors.nrows();
    let tokens = (0..n).map(|i| format!("w{i}")).collect();
    EmbeddingMatrix::new(tokens, vec![1; n], vectors).unwrap()
}

pub fn frobenius(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    (a - b).mapv(|x| x * x).sum().sqrt()
}

/// Raw dumps mixing both varieties, plus aligned test files.
pub fn experiment_fixture(dir: &Path) {
    let c = dialect_corpus(300, 20, 5).unwrap();
    let mut raw = String::new();
    for (a, b) in c.l1_train.iter().zip(&c.l2_train) {
        raw.push_str(&format!("{a}\n{b}\n"));
    }
    raw.push_str("Hello world\n#tag 😀\n");
    std::fs::write(dir.join("raw.txt"), raw).unwrap();
    std::fs::write(dir.join("test.l1"), c.test_l1.join("\n") + "\n").unwrap();
    std::fs::write(dir.join("test.l2"), c.test_l2.join("\n") + "\n").unwrap();
}

pub const EXPERIMENT_CONFIG: &str = "\
pipeline.input = raw.txt
embedding.epochs = 1
embedding.window = 2
model.d_model = 16
model.heads = 2
model.ffn_dim = 32
model.layers = 2
model.shared_decoder_layers = 1
model.shared_encoder_layers = 2
model.dropout = 0.1
model.max_len = 40
train.steps = 12
train.batch_size = 4
train.checkpoint_every = 6
train.optimizer = adam
train.lr = 0.002
eval.test_l1 = test.l1
eval.test_l2 = test.l2
";
