//! Synthetic dialect pair for end-to-end checks.
//!
//! L1 sentences come from a small Mandarin template grammar. L2 is derived
//! by a fixed 30-character substitution that swaps common Mandarin function
//! characters for their Cantonese counterparts (的→嘅, 是→係, 了→咗, ...).
//! Only the substitution separates the two sides, so a model that learns it
//! translates perfectly while copying the input scores the identity baseline.

use std::collections::HashSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::embed::{train_skipgram, vocab_table, SkipGramConfig};
use crate::eval::{
    char_bleu, convert_charset, translate, BleuReport, ConversionTable, DecodeConfig,
};
use crate::nn::{Model, ModelConfig, OptimizerConfig, OptimizerKind, Variant};
use crate::segment::Tokenizer;
use crate::umt::{StepRecord, Trainer, TrainingSchedule};
use crate::vocab::Vocab;
use crate::{Error, Lang, Result};

/// Source→target pairs of the dialect substitution.
pub const DIALECT_PAIRS: [(char, char); 30] = [
    ('的', '嘅'),
    ('是', '係'),
    ('了', '咗'),
    ('們', '哋'),
    ('不', '唔'),
    ('這', '呢'),
    ('他', '佢'),
    ('看', '睇'),
    ('在', '喺'),
    ('說', '講'),
    ('沒', '冇'),
    ('那', '嗰'),
    ('些', '啲'),
    ('給', '畀'),
    ('吃', '食'),
    ('什', '乜'),
    ('麼', '嘢'),
    ('睡', '瞓'),
    ('站', '企'),
    ('美', '靚'),
    ('找', '搵'),
    ('玩', '耍'),
    ('拿', '攞'),
    ('嗎', '咩'),
    ('吧', '啦'),
    ('很', '好'),
    ('誰', '邊'),
    ('怎', '點'),
    ('喝', '飲'),
    ('累', '攰'),
];

pub fn dialect_table() -> ConversionTable {
    ConversionTable::new(DIALECT_PAIRS).expect("dialect table is one-to-one")
}

/// L1 to L2.
pub fn to_dialect(text: &str) -> String {
    convert_charset(text, &dialect_table())
}

const SUBJECTS: &[&str] = &[
    "我",
    "你",
    "他",
    "她",
    "我們",
    "你們",
    "他們",
    "她們",
    "老師",
    "學生們",
    "媽媽",
    "爸爸",
    "哥哥",
    "妹妹",
    "朋友們",
    "這個人",
    "那個人",
    "這些孩子",
    "那些同學",
    "小明",
    "阿強",
];
const TIMES: &[&str] = &[
    "今天", "明天", "昨天", "現在", "晚上", "早上", "週末", "剛才",
];
const PLACES: &[&str] = &[
    "家裡",
    "學校",
    "公司",
    "公園",
    "餐廳",
    "樓上",
    "外面",
    "香港",
    "北京",
    "圖書館",
];
const ADJS: &[&str] = &[
    "美", "累", "高", "忙", "快樂", "漂亮", "便宜", "貴", "大", "小", "安靜", "熱", "冷",
];
const FOODS: &[&str] = &["飯", "麵", "蘋果", "雞蛋", "蛋糕", "水果", "麵包", "青菜"];
const DRINKS: &[&str] = &["水", "茶", "咖啡", "牛奶", "果汁", "湯"];
const THINGS: &[&str] = &[
    "書", "電影", "手機", "衣服", "電話", "車", "錢", "鑰匙", "雨傘", "照片", "報紙", "電視",
];
const ANIMALS: &[&str] = &["貓", "狗", "鳥", "魚"];

fn pick<'a>(rng: &mut ChaCha8Rng, xs: &[&'a str]) -> &'a str {
    xs.choose(rng).expect("non-empty word list")
}

fn maybe<'a>(rng: &mut ChaCha8Rng, p: f64, s: &'a str) -> &'a str {
    if rng.random_bool(p) {
        s
    } else {
        ""
    }
}

/// One random L1 sentence.
pub fn l1_sentence(rng: &mut ChaCha8Rng) -> String {
    let subj = pick(rng, SUBJECTS);
    let time = pick(rng, TIMES);
    let time = maybe(rng, 0.3, time);
    let neg = maybe(rng, 0.25, "不");
    let s = match rng.random_range(0..14) {
        0 => format!(
            "{subj}{time}{neg}吃{}{}",
            pick(rng, FOODS),
            pick(rng, &["", "了", "吧", "嗎"])
        ),
        1 => format!("{subj}{time}{neg}喝{}", pick(rng, DRINKS)),
        2 => format!("{subj}{time}在{}看{}", pick(rng, PLACES), pick(rng, THINGS)),
        3 => format!("{subj}說{}很{}", pick(rng, SUBJECTS), pick(rng, ADJS)),
        4 => format!("這是{}的{}", pick(rng, SUBJECTS), pick(rng, THINGS)),
        5 => format!("那些{}是{}的", pick(rng, THINGS), pick(rng, SUBJECTS)),
        6 => format!(
            "{subj}{time}給了{}一些{}",
            pick(rng, SUBJECTS),
            pick(rng, FOODS)
        ),
        7 => format!("{subj}沒有{}", pick(rng, THINGS)),
        8 => format!("誰拿了{}的{}", pick(rng, SUBJECTS), pick(rng, THINGS)),
        9 => format!("{subj}在找什麼"),
        10 => format!("{subj}很累，想睡覺"),
        11 => format!("{subj}{time}站在{}", pick(rng, PLACES)),
        12 => format!("{subj}怎麼{neg}玩{}", pick(rng, &["手機", "遊戲", "電腦"])),
        _ => format!("{}的{}很{}", subj, pick(rng, ANIMALS), pick(rng, ADJS)),
    };
    format!("{s}{}", pick(rng, &["。", "！", "", "？"]))
}

/// A non-parallel training pair plus aligned held-out test pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DialectCorpus {
    pub l1_train: Vec<String>,
    /// The dialect form of `l1_train`, shuffled so the sides are not aligned.
    pub l2_train: Vec<String>,
    pub test_l1: Vec<String>,
    pub test_l2: Vec<String>,
}

/// Draws `n_train + n_test` distinct sentences; the test sentences never
/// occur in training.
pub fn dialect_corpus(n_train: usize, n_test: usize, seed: u64) -> Result<DialectCorpus> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let want = n_train + n_test;
    let mut seen = HashSet::new();
    let mut all = Vec::with_capacity(want);
    let mut tries = 0;
    while all.len() < want {
        tries += 1;
        if tries > 50 * want + 1000 {
            return Err(Error::InsufficientData {
                requested: want,
                available: all.len(),
            });
        }
        let s = l1_sentence(&mut rng);
        if seen.insert(s.clone()) {
            all.push(s);
        }
    }
    let test_l1 = all.split_off(n_train);
    let mut l2_train: Vec<String> = all.iter().map(|s| to_dialect(s)).collect();
    l2_train.shuffle(&mut rng);
    let test_l2 = test_l1.iter().map(|s| to_dialect(s)).collect();
    Ok(DialectCorpus {
        l1_train: all,
        l2_train,
        test_l1,
        test_l2,
    })
}

/// Settings of the synthetic end-to-end run.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub d_model: usize,
    pub layers: usize,
    pub schedule: TrainingSchedule,
    /// Initialize the shared embedding table from skip-gram vectors trained
    /// on both corpora together.
    pub pretrain_embeddings: bool,
    /// One embedding table for both languages instead of one per language.
    pub shared_embeddings: bool,
    pub seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            n_train: 5000,
            n_test: 200,
            d_model: 32,
            layers: 2,
            schedule: TrainingSchedule {
                steps: 20_000,
                batch_size: 16,
                optimizer: OptimizerConfig {
                    kind: OptimizerKind::Adam,
                    lr: 1e-3,
                    ..Default::default()
                },
                checkpoint_every: 0,
                ..Default::default()
            },
            pretrain_embeddings: true,
            shared_embeddings: false,
            seed: 1,
        }
    }
}

/// Character BLEU per direction, indexed by source language.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkReport {
    /// Copying the source unchanged.
    pub identity: [BleuReport; 2],
    pub model: [BleuReport; 2],
    pub final_losses: Vec<f64>,
    pub bt_skipped: u64,
}

impl BenchmarkReport {
    pub fn identity_mean(&self) -> f64 {
        (self.identity[0].bleu + self.identity[1].bleu) / 2.0
    }

    pub fn model_mean(&self) -> f64 {
        (self.model[0].bleu + self.model[1].bleu) / 2.0
    }
}

/// Builds the dialect pair, trains a character-level transformer on the two
/// non-parallel training sides and scores it on the held-out pairs.
/// `progress` sees every step record.
pub fn run_benchmark(
    cfg: &BenchmarkConfig,
    mut progress: impl FnMut(&StepRecord),
) -> Result<BenchmarkReport> {
    let data = dialect_corpus(cfg.n_train, cfg.n_test, cfg.seed)?;
    let tok = Tokenizer::Char;
    let l1: Vec<Vec<String>> = data
        .l1_train
        .iter()
        .map(|s| tok.tokenize(s).tokens)
        .collect();
    let l2: Vec<Vec<String>> = data
        .l2_train
        .iter()
        .map(|s| tok.tokenize(s).tokens)
        .collect();
    let vocab = Vocab::build(l1.iter().chain(&l2).flatten(), 1);

    let mut mc = ModelConfig::tiny(Variant::Transformer, [vocab.len(); 2], cfg.d_model);
    mc.layers = cfg.layers;
    mc.shared_decoder_layers = cfg.layers.saturating_sub(1);
    mc.shared_encoder_layers = cfg.layers;
    mc.shared_embeddings = cfg.shared_embeddings;
    mc.freeze_embeddings = false;
    let mut model = Model::new(&mc, cfg.seed)?;
    if cfg.pretrain_embeddings {
        let joint: Vec<Vec<String>> = l1.iter().chain(&l2).cloned().collect();
        let sg = SkipGramConfig {
            dim: cfg.d_model,
            window: 3,
            epochs: 3,
            seed: cfg.seed,
            ..Default::default()
        };
        let (emb, _) = train_skipgram(&joint, &sg)?;
        let table = vocab_table(&emb, &vocab, cfg.seed);
        model.set_embeddings(Lang::L1, &table)?;
        if !cfg.shared_embeddings {
            model.set_embeddings(Lang::L2, &table)?;
        }
    }

    let corpora = [&l1, &l2].map(|c| c.iter().map(|s| vocab.encode(s)).collect());
    let mut schedule = cfg.schedule.clone();
    schedule.seed = cfg.seed;
    let h = vocab.content_hash();
    let mut trainer = Trainer::new(model, schedule, corpora, [h.clone(), h])?;
    let mut final_losses = Vec::new();
    while !trainer.is_done() {
        let rec = trainer.run_step()?;
        progress(&rec);
        final_losses.push(rec.loss);
    }
    let keep = final_losses.len().saturating_sub(100);
    final_losses.drain(..keep);
    let bt_skipped = trainer.bt_skipped();
    let model = trainer.into_model();

    let tests = [&data.test_l1, &data.test_l2];
    let greedy = DecodeConfig::default();
    let score = |src: Lang, hyps: &[String]| char_bleu(hyps, tests[src.other().index()]);
    let mut identity = Vec::new();
    let mut scored = Vec::new();
    for src in Lang::BOTH {
        identity.push(score(src, tests[src.index()])?);
        let hyps = tests[src.index()]
            .iter()
            .map(|s| {
                Ok(translate(
                    &model,
                    [&tok, &tok],
                    [&vocab, &vocab],
                    s,
                    src,
                    src.other(),
                    &greedy,
                )?
                .text)
            })
            .collect::<Result<Vec<_>>>()?;
        scored.push(score(src, &hyps)?);
    }
    let pair = |v: Vec<BleuReport>| -> [BleuReport; 2] { v.try_into().expect("two directions") };
    Ok(BenchmarkReport {
        identity: pair(identity),
        model: pair(scored),
        final_losses,
        bt_skipped,
    })
}
