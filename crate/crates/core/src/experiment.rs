//! Experiment configs and the cached stage runner.
//!
//! A config is a flat `key = value` file. `run_experiment` executes
//! pipeline → tokenize → bpe → embeddings → train → eval inside one output
//! directory. Each stage lives in its own subdirectory with a `stage.kv`
//! record holding the stage key (a hash over its settings and the hashes of
//! everything it reads) and the hashes of the files it wrote. A stage whose
//! key and outputs still match is skipped. `manifest.kv` is written last.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use crate::bpe::{self, BpeMode, MergeTable, WordCounts};
use crate::corpus::{self, LanguageLabel};
use crate::embed::{
    apply_mapping, build_anchor_dict, compose_pivot_private_for, learn_mapping, normalize_rows,
    read_embeddings, train_skipgram, vocab_table, write_embeddings, EmbeddingMatrix, MappingConfig,
    SkipGramConfig, PIVOT_HALF_DIM,
};
use crate::eval::{
    baseline_evaluate, char_bleu_with, translate, BleuOptions, ConversionTable, DecodeConfig,
};
use crate::hash::{file_sha256, sha256_hex, ContentHasher};
use crate::kv::{FieldReader, KvFile};
use crate::nn::{Model, ModelConfig, Variant};
use crate::segment::{Lexicon, Scheme, TokenizedSentence, Tokenizer};
use crate::umt::{load_model, train, Trainer, TrainingSchedule};
use crate::vocab::{Vocab, NUM_RESERVED};
use crate::{ConfigIssue, Error, Lang, Result};

pub const ENV_PREFIX: &str = "CANTO_UMT_";
pub const MANIFEST_FILE: &str = "manifest.kv";
pub const LOCK_FILE: &str = ".lock";
const STAGE_RECORD: &str = "stage.kv";

/// How initial embeddings are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingRoute {
    /// Random initialization.
    None,
    /// Separate skip-gram spaces aligned by an orthogonal map on identical tokens.
    Mapping,
    /// One skip-gram space trained on both corpora together.
    Concat,
    /// Shared half from the joint corpus, private half per language.
    PivotPrivate,
}

impl EmbeddingRoute {
    pub fn as_str(self) -> &'static str {
        match self {
            EmbeddingRoute::None => "none",
            EmbeddingRoute::Mapping => "mapping",
            EmbeddingRoute::Concat => "concat",
            EmbeddingRoute::PivotPrivate => "pivot-private",
        }
    }
}

impl std::fmt::Display for EmbeddingRoute {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for EmbeddingRoute {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            EmbeddingRoute::None,
            EmbeddingRoute::Mapping,
            EmbeddingRoute::Concat,
            EmbeddingRoute::PivotPrivate,
        ]
        .into_iter()
        .find(|r| r.as_str() == s)
        .ok_or_else(|| {
            Error::InvalidArgument(format!(
                "unknown embedding route `{s}` (none|mapping|concat|pivot-private)"
            ))
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Glob over raw text dumps.
    pub input: String,
    pub l1_label: LanguageLabel,
    pub l2_label: LanguageLabel,
    /// Downsample each side to this many sentences, preserving lengths.
    pub balance_target: Option<usize>,
    pub scheme: Scheme,
    pub lexicon: Option<PathBuf>,
    pub min_count: u64,
    pub bpe_merges: usize,
    pub bpe_mode: BpeMode,
    pub route: EmbeddingRoute,
    /// Skip-gram settings; width and seed are filled in from the model and
    /// the global seed.
    pub skipgram: SkipGramConfig,
    pub self_learning: usize,
    /// Vocabulary sizes are placeholders until the vocabularies exist.
    pub model: ModelConfig,
    pub schedule: TrainingSchedule,
    pub test_l1: Option<PathBuf>,
    pub test_l2: Option<PathBuf>,
    pub decode: DecodeConfig,
    pub strip_punct: bool,
    pub conversion_table: Option<PathBuf>,
}

fn placeholder_vocab() -> [usize; 2] {
    [NUM_RESERVED + 1; 2]
}

impl ExperimentConfig {
    /// Every key a config file may contain.
    pub fn known_keys() -> Vec<String> {
        let empty = KvFile::default();
        let mut r = FieldReader::new(&empty);
        Self::read(&mut r, Path::new("."));
        r.used()
            .filter(|k| *k != "train.seed")
            .map(str::to_string)
            .collect()
    }

    fn read(r: &mut FieldReader<'_>, base: &Path) -> Self {
        let path = |r: &mut FieldReader<'_>, k: &str| -> Option<PathBuf> {
            r.raw(k).map(|v| base.join(v))
        };
        let seed = r.parse_or("seed", 1u64);
        let input = r
            .raw("pipeline.input")
            .map(|v| base.join(v).to_string_lossy().into_owned());
        let model = ModelConfig::read_kv(r, "model.", placeholder_vocab());
        let default_route = match model.variant {
            Variant::Gru => EmbeddingRoute::Mapping,
            Variant::Transformer => EmbeddingRoute::Concat,
        };
        let sg = SkipGramConfig::default();
        let skipgram = SkipGramConfig {
            dim: model.embedding_dim(),
            window: r.parse_or("embedding.window", sg.window),
            negatives: r.parse_or("embedding.negatives", sg.negatives),
            epochs: r.parse_or("embedding.epochs", sg.epochs),
            lr: r.parse_or("embedding.lr", sg.lr),
            min_count: 1,
            seed,
        };
        let mut schedule = TrainingSchedule::read_kv(r, "train.");
        schedule.seed = seed;
        let dd = DecodeConfig::default();
        let cfg = ExperimentConfig {
            seed,
            input: input.unwrap_or_default(),
            l1_label: r.parse_or("pipeline.l1_label", LanguageLabel::Mandarin),
            l2_label: r.parse_or("pipeline.l2_label", LanguageLabel::Cantonese),
            balance_target: r.opt("pipeline.balance_target"),
            scheme: r.parse_or("tokenize.scheme", Scheme::Char),
            lexicon: path(r, "tokenize.lexicon"),
            min_count: r.parse_or("tokenize.min_count", 1u64),
            bpe_merges: r.parse_or("bpe.num_merges", bpe::DEFAULT_NUM_MERGES),
            bpe_mode: r.parse_or("bpe.mode", BpeMode::Joint),
            route: r.parse_or("embedding.route", default_route),
            skipgram,
            self_learning: r.parse_or("embedding.self_learning", 0usize),
            model,
            schedule,
            test_l1: path(r, "eval.test_l1"),
            test_l2: path(r, "eval.test_l2"),
            decode: DecodeConfig {
                beam_size: r.parse_or("eval.beam_size", dd.beam_size),
                max_len: r.parse_or("eval.max_len", dd.max_len),
                length_penalty: r.parse_or("eval.length_penalty", dd.length_penalty),
            },
            strip_punct: r.parse_or("eval.strip_punct", false),
            conversion_table: path(r, "eval.table"),
        };
        // The training seed is the global one.
        r.raw("train.seed");
        cfg
    }

    /// Parses and checks a config. Relative paths resolve against `base`.
    /// Returns the config and any warnings.
    pub fn from_kv(kv: &KvFile, base: &Path) -> Result<(Self, Vec<String>)> {
        let mut r = FieldReader::new(kv);
        let cfg = Self::read(&mut r, base);
        if kv.get("train.seed").is_some() {
            r.issue("train.seed", "set the global `seed` instead");
        }
        for issue in cfg.issues() {
            r.issue(&issue.key, issue.reason);
        }
        r.finish()?;
        Ok((cfg.clone(), cfg.warnings()))
    }

    /// Reads `path`, applies `CANTO_UMT_*` overrides from `env`, validates.
    pub fn load(path: &Path, env: &BTreeMap<String, String>) -> Result<(Self, Vec<String>)> {
        let mut kv = KvFile::load(path)?;
        apply_env_overrides(&mut kv, env);
        let base = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        Self::from_kv(&kv, base)
    }

    fn issues(&self) -> Vec<ConfigIssue> {
        let mut out = Vec::new();
        let mut bad = |k: &str, r: String| {
            out.push(ConfigIssue {
                key: k.into(),
                reason: r,
            })
        };
        if self.input.is_empty() {
            bad("pipeline.input", "required".into());
        } else {
            match corpus::pipeline::expand_inputs(&self.input) {
                Ok(paths) if paths.iter().all(|p| p.is_file()) => {}
                Ok(paths) => bad(
                    "pipeline.input",
                    format!(
                        "no such file: {}",
                        paths.iter().find(|p| !p.is_file()).unwrap().display()
                    ),
                ),
                Err(e) => bad("pipeline.input", e.to_string()),
            }
        }
        let output_labels = [
            LanguageLabel::Mandarin,
            LanguageLabel::Cantonese,
            LanguageLabel::Ambiguous,
        ];
        for (k, l) in [
            ("pipeline.l1_label", self.l1_label),
            ("pipeline.l2_label", self.l2_label),
        ] {
            if !output_labels.contains(&l) {
                bad(k, format!("`{l}` sentences are not kept by the pipeline"));
            }
        }
        if self.l1_label == self.l2_label {
            bad(
                "pipeline.l2_label",
                "must differ from pipeline.l1_label".into(),
            );
        }
        if self.balance_target == Some(0) {
            bad("pipeline.balance_target", "must be at least 1".into());
        }
        for (k, p) in [
            ("tokenize.lexicon", &self.lexicon),
            ("eval.test_l1", &self.test_l1),
            ("eval.test_l2", &self.test_l2),
            ("eval.table", &self.conversion_table),
        ] {
            if let Some(p) = p {
                if !p.is_file() {
                    bad(k, format!("no such file: {}", p.display()));
                }
            }
        }
        if self.test_l1.is_some() != self.test_l2.is_some() {
            bad(
                "eval.test_l2",
                "eval.test_l1 and eval.test_l2 go together".into(),
            );
        }
        if self.min_count == 0 {
            bad("tokenize.min_count", "must be at least 1".into());
        }
        for (k, v) in [
            ("embedding.window", self.skipgram.window),
            ("embedding.negatives", self.skipgram.negatives),
            ("embedding.epochs", self.skipgram.epochs),
        ] {
            if v == 0 {
                bad(k, "must be at least 1".into());
            }
        }
        if !(self.skipgram.lr > 0.0) {
            bad("embedding.lr", "must be positive".into());
        }
        if self.route == EmbeddingRoute::PivotPrivate
            && self.model.embedding_dim() != 2 * PIVOT_HALF_DIM
        {
            bad(
                "embedding.route",
                format!(
                    "pivot-private needs {}-dim embeddings, model has {}",
                    2 * PIVOT_HALF_DIM,
                    self.model.embedding_dim()
                ),
            );
        }
        if self.decode.beam_size == 0 {
            bad("eval.beam_size", "must be at least 1".into());
        }
        if self.decode.max_len == 0 {
            bad("eval.max_len", "must be at least 1".into());
        }
        if !(self.decode.length_penalty >= 0.0) {
            bad("eval.length_penalty", "must be non-negative".into());
        }
        for issue in self.model.issues() {
            if !issue.key.starts_with("vocab_") {
                bad(&format!("model.{}", issue.key), issue.reason);
            }
        }
        out
    }

    /// Pairings that deviate from the usual setup: mapped embeddings for the
    /// recurrent model, joint or pivot-private ones for the transformer.
    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        match (self.model.variant, self.route) {
            (Variant::Gru, EmbeddingRoute::Concat | EmbeddingRoute::PivotPrivate) => {
                w.push(format!("embedding.route = {} with the gru model; mapping is the usual pairing", self.route))
            }
            (Variant::Transformer, EmbeddingRoute::Mapping) => {
                w.push("embedding.route = mapping with the transformer; concat or pivot-private is the usual pairing".into())
            }
            _ => {}
        }
        if self.route == EmbeddingRoute::None && self.model.freeze_embeddings {
            w.push("frozen embeddings with route none stay at their random initialization".into());
        }
        if self.scheme != Scheme::Char && self.lexicon.is_none() {
            w.push("no tokenize.lexicon: word segmentation falls back to single characters".into());
        }
        w
    }

    /// Canonical, complete key/value form (defaults filled in).
    pub fn to_kv(&self) -> KvFile {
        let mut kv = KvFile::default();
        let p = |p: &Option<PathBuf>| p.as_ref().map(|p| p.to_string_lossy().into_owned());
        kv.set("seed", self.seed.to_string());
        kv.set("pipeline.input", self.input.clone());
        kv.set("pipeline.l1_label", self.l1_label.as_str());
        kv.set("pipeline.l2_label", self.l2_label.as_str());
        if let Some(t) = self.balance_target {
            kv.set("pipeline.balance_target", t.to_string());
        }
        kv.set("tokenize.scheme", self.scheme.to_string());
        if let Some(l) = p(&self.lexicon) {
            kv.set("tokenize.lexicon", l);
        }
        kv.set("tokenize.min_count", self.min_count.to_string());
        kv.set("bpe.num_merges", self.bpe_merges.to_string());
        kv.set("bpe.mode", self.bpe_mode.to_string());
        kv.set("embedding.route", self.route.as_str());
        kv.set("embedding.window", self.skipgram.window.to_string());
        kv.set("embedding.negatives", self.skipgram.negatives.to_string());
        kv.set("embedding.epochs", self.skipgram.epochs.to_string());
        kv.set("embedding.lr", format!("{:?}", self.skipgram.lr));
        kv.set("embedding.self_learning", self.self_learning.to_string());
        for (k, v) in self.model.to_kv().iter() {
            if !k.starts_with("vocab_") {
                kv.set(format!("model.{k}"), v);
            }
        }
        self.schedule.write_kv(&mut kv, "train.");
        kv.remove("train.seed");
        if let Some(t) = p(&self.test_l1) {
            kv.set("eval.test_l1", t);
        }
        if let Some(t) = p(&self.test_l2) {
            kv.set("eval.test_l2", t);
        }
        kv.set("eval.beam_size", self.decode.beam_size.to_string());
        kv.set("eval.max_len", self.decode.max_len.to_string());
        kv.set(
            "eval.length_penalty",
            format!("{:?}", self.decode.length_penalty),
        );
        kv.set("eval.strip_punct", self.strip_punct.to_string());
        if let Some(t) = p(&self.conversion_table) {
            kv.set("eval.table", t);
        }
        kv
    }

    pub fn content_hash(&self) -> String {
        sha256_hex(self.to_kv().to_text().as_bytes())
    }

    /// Keys of `to_kv` starting with any of `prefixes`, as one text block.
    fn section(&self, prefixes: &[&str]) -> String {
        self.to_kv()
            .iter()
            .filter(|(k, _)| prefixes.iter().any(|p| k.starts_with(p)))
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}

/// Env var name for a config key: `train.batch_size` → `CANTO_UMT_TRAIN_BATCH_SIZE`.
pub fn env_name(key: &str) -> String {
    format!(
        "{ENV_PREFIX}{}",
        key.replace(['.', '-'], "_").to_uppercase()
    )
}

/// Overrides config keys from `CANTO_UMT_*` variables in `env`. Variables
/// that name no config key are ignored.
pub fn apply_env_overrides(kv: &mut KvFile, env: &BTreeMap<String, String>) {
    for key in ExperimentConfig::known_keys() {
        if let Some(v) = env.get(&env_name(&key)) {
            log::info!("{key} overridden from the environment");
            kv.set(key, v.trim());
        }
    }
}

/// The `CANTO_UMT_*` variables of the current process.
pub fn process_env() -> BTreeMap<String, String> {
    std::env::vars()
        .filter(|(k, _)| k.starts_with(ENV_PREFIX))
        .collect()
}

/// Checks a config file without running anything.
pub fn validate_config(path: &Path) -> Result<(ExperimentConfig, Vec<String>)> {
    ExperimentConfig::load(path, &process_env())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageStatus {
    Ran,
    Cached,
    Skipped,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub manifest: KvFile,
    pub stages: Vec<(&'static str, StageStatus)>,
}

impl RunReport {
    pub fn status(&self, stage: &str) -> Option<StageStatus> {
        self.stages.iter().find(|s| s.0 == stage).map(|s| s.1)
    }
}

/// Exclusive hold on an output directory, released on drop.
struct DirLock(PathBuf);

impl DirLock {
    fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(LOCK_FILE);
        match std::fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(_) => Ok(DirLock(path)),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(Error::Locked(dir.to_path_buf()))
            }
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.0);
    }
}

fn now_secs() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Files of a stage directory (except its record), with their hashes.
fn hash_outputs(dir: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name == STAGE_RECORD || !entry.path().is_file() {
            continue;
        }
        out.insert(name, file_sha256(&entry.path())?);
    }
    Ok(out)
}

struct Runner<'a> {
    out: &'a Path,
    manifest: KvFile,
    stages: Vec<(&'static str, StageStatus)>,
}

impl Runner<'_> {
    /// Runs `body` in `<out>/<name>` unless a matching record is present.
    /// Returns the stage's output hashes.
    fn stage(
        &mut self,
        name: &'static str,
        inputs: &str,
        body: impl FnOnce(&Path) -> Result<()>,
    ) -> Result<BTreeMap<String, String>> {
        let dir = self.out.join(name);
        let mut h = ContentHasher::new();
        h.part("stage", name.as_bytes())
            .part("version", env!("CARGO_PKG_VERSION").as_bytes())
            .part("inputs", inputs.as_bytes());
        let key = h.finish();
        let wrap = |e: Error| Error::Stage {
            stage: name,
            source: Box::new(e),
        };
        let record_path = dir.join(STAGE_RECORD);
        let cached = KvFile::load(&record_path)
            .ok()
            .filter(|rec| rec.get("key") == Some(key.as_str()));
        let outputs = match cached {
            Some(rec) => {
                let recorded: BTreeMap<String, String> = rec
                    .iter()
                    .filter_map(|(k, v)| {
                        k.strip_prefix("out.")
                            .map(|k| (k.to_string(), v.to_string()))
                    })
                    .collect();
                let current = hash_outputs(&dir).map_err(wrap)?;
                (current == recorded).then_some(recorded)
            }
            None => None,
        };
        let outputs = match outputs {
            Some(o) => {
                log::info!("stage {name}: cached");
                self.stages.push((name, StageStatus::Cached));
                o
            }
            None => {
                log::info!("stage {name}: running");
                if dir.exists() {
                    std::fs::remove_dir_all(&dir).map_err(|e| wrap(Error::io(&dir, e)))?;
                }
                std::fs::create_dir_all(&dir).map_err(|e| wrap(Error::io(&dir, e)))?;
                body(&dir).map_err(wrap)?;
                let o = hash_outputs(&dir).map_err(wrap)?;
                let mut rec = KvFile::default();
                rec.set("key", key.clone());
                for (f, h) in &o {
                    rec.set(format!("out.{f}"), h.clone());
                }
                std::fs::write(&record_path, rec.to_text())
                    .map_err(|e| wrap(Error::io(&record_path, e)))?;
                self.stages.push((name, StageStatus::Ran));
                o
            }
        };
        self.manifest.set(format!("stage.{name}.key"), key);
        for (f, h) in &outputs {
            self.manifest.set(format!("output.{name}/{f}"), h.clone());
        }
        Ok(outputs)
    }
}

fn hashes_text(label: &str, hashes: &BTreeMap<String, String>) -> String {
    hashes
        .iter()
        .map(|(f, h)| format!("{label}/{f} = {h}\n"))
        .collect()
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::to_string).collect())
}

fn read_tokenized(path: &Path, scheme: Scheme) -> Result<Vec<Vec<String>>> {
    Ok(read_lines(path)?
        .iter()
        .map(|l| TokenizedSentence::from_line(l, scheme).tokens)
        .collect())
}

fn write_tokenized(path: &Path, corpus: &[Vec<String>]) -> Result<()> {
    let lines: Vec<String> = corpus.iter().map(|t| t.join(" ")).collect();
    corpus::pipeline::write_lines(path, lines.iter().map(String::as_str))
}

fn lexicon(cfg: &ExperimentConfig) -> Result<Lexicon> {
    match &cfg.lexicon {
        Some(p) => Lexicon::load(p),
        None => Ok(Lexicon::default()),
    }
}

fn vocabs(cfg: &ExperimentConfig, l1: &[Vec<String>], l2: &[Vec<String>]) -> [Vocab; 2] {
    if cfg.model.shared_embeddings {
        let v = Vocab::build(l1.iter().chain(l2).flatten(), cfg.min_count);
        [v.clone(), v]
    } else {
        [
            Vocab::build(l1.iter().flatten(), cfg.min_count),
            Vocab::build(l2.iter().flatten(), cfg.min_count),
        ]
    }
}

fn stage_pipeline(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    let inputs = corpus::pipeline::expand_inputs(&cfg.input)?;
    let out = corpus::pipeline::process_files(&inputs)?;
    std::fs::write(dir.join("stats.txt"), out.stats.to_report()).map_err(|e| Error::io(dir, e))?;
    for (lang, label) in [(Lang::L1, cfg.l1_label), (Lang::L2, cfg.l2_label)] {
        let mut side: Vec<corpus::Sentence> = out.with_label(label).cloned().collect();
        if let Some(t) = cfg.balance_target {
            side = corpus::downsample_balanced(&side, t, cfg.seed ^ lang.index() as u64)?;
        }
        if side.is_empty() {
            return Err(Error::InsufficientData {
                requested: 1,
                available: 0,
            });
        }
        let path = dir.join(format!("{}.txt", lang.as_str().to_lowercase()));
        corpus::pipeline::write_lines(&path, side.iter().map(|s| s.text.as_str()))?;
    }
    Ok(())
}

fn stage_tokenize(cfg: &ExperimentConfig, src: &Path, dir: &Path) -> Result<()> {
    let tok = match cfg.scheme {
        Scheme::Char => Tokenizer::Char,
        Scheme::Word | Scheme::Bpe => Tokenizer::Word(lexicon(cfg)?),
    };
    for l in ["l1", "l2"] {
        let lines = read_lines(&src.join(format!("{l}.txt")))?;
        let corpus: Vec<Vec<String>> = lines.iter().map(|s| tok.tokenize(s).tokens).collect();
        write_tokenized(&dir.join(format!("{l}.tok")), &corpus)?;
    }
    Ok(())
}

fn merge_files(mode: BpeMode) -> Vec<&'static str> {
    match mode {
        BpeMode::Joint => vec!["merges.txt"],
        BpeMode::Separate => vec!["merges.l1.txt", "merges.l2.txt"],
    }
}

fn stage_bpe(cfg: &ExperimentConfig, src: &Path, dir: &Path) -> Result<()> {
    let words = [
        read_tokenized(&src.join("l1.tok"), Scheme::Word)?,
        read_tokenized(&src.join("l2.tok"), Scheme::Word)?,
    ];
    let counts: Vec<WordCounts> = words
        .iter()
        .map(|c| WordCounts::from_sentences(c.iter()))
        .collect();
    let tables = bpe::learn_bpe(&counts, cfg.bpe_merges, cfg.bpe_mode);
    for (t, f) in tables.iter().zip(merge_files(cfg.bpe_mode)) {
        t.save(&dir.join(f))?;
    }
    for (i, l) in ["l1", "l2"].iter().enumerate() {
        let table = &tables[i.min(tables.len() - 1)];
        let out: Vec<Vec<String>> = words[i].iter().map(|s| table.apply(s)).collect();
        write_tokenized(&dir.join(format!("{l}.tok")), &out)?;
    }
    Ok(())
}

fn stage_embeddings(cfg: &ExperimentConfig, src: &Path, dir: &Path) -> Result<()> {
    let l1 = read_tokenized(&src.join("l1.tok"), cfg.scheme)?;
    let l2 = read_tokenized(&src.join("l2.tok"), cfg.scheme)?;
    let vocabs = vocabs(cfg, &l1, &l2);
    vocabs[0].save(&dir.join("vocab.l1"))?;
    vocabs[1].save(&dir.join("vocab.l2"))?;
    let sg = |dim: usize, salt: u64| SkipGramConfig {
        dim,
        seed: cfg.seed.wrapping_add(salt),
        ..cfg.skipgram.clone()
    };
    let joint = || -> Vec<Vec<String>> { l1.iter().chain(&l2).cloned().collect() };

    let spaces: [EmbeddingMatrix; 2] = match cfg.route {
        EmbeddingRoute::None => return Ok(()),
        EmbeddingRoute::Concat => {
            let (m, _) = train_skipgram(&joint(), &sg(cfg.model.embedding_dim(), 0))?;
            [m.clone(), m]
        }
        EmbeddingRoute::Mapping => {
            let (x, _) = train_skipgram(&l1, &sg(cfg.model.embedding_dim(), 1))?;
            let (y, _) = train_skipgram(&l2, &sg(cfg.model.embedding_dim(), 2))?;
            let anchors = build_anchor_dict(&x, &y)?;
            let mc = MappingConfig {
                self_learning_iters: cfg.self_learning,
                ..Default::default()
            };
            let (w, _) = learn_mapping(&x, &y, &anchors, &mc)?;
            let mapped = x.with_vectors(apply_mapping(&normalize_rows(x.vectors()), &w))?;
            let target = y.with_vectors(normalize_rows(y.vectors()))?;
            [mapped, target]
        }
        EmbeddingRoute::PivotPrivate => {
            let (shared, _) = train_skipgram(&joint(), &sg(PIVOT_HALF_DIM, 0))?;
            let (p1, _) = train_skipgram(&l1, &sg(PIVOT_HALF_DIM, 1))?;
            let (p2, _) = train_skipgram(&l2, &sg(PIVOT_HALF_DIM, 2))?;
            let words = |v: &Vocab| v.learned().map(|(_, t)| t.to_string()).collect::<Vec<_>>();
            let pp = compose_pivot_private_for(
                &shared,
                &p1,
                &p2,
                &words(&vocabs[0]),
                &words(&vocabs[1]),
            )?;
            log::info!(
                "pivot-private: missing shared {:?}, missing private {:?}",
                pp.missing_shared,
                pp.missing_private
            );
            [pp.l1, pp.l2]
        }
    };
    let tables: [Vec<(String, Vec<f64>)>; 2] = [0, 1].map(|i| {
        let t = vocab_table(&spaces[i], &vocabs[i], cfg.seed.wrapping_add(10 + i as u64));
        (0..vocabs[i].len())
            .map(|id| (vocabs[i].token(id as u32).to_string(), t.row(id).to_vec()))
            .collect()
    });
    for (i, l) in ["l1", "l2"].iter().enumerate() {
        let rows = &tables[i];
        let d = rows[0].1.len();
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.1.iter().copied()).collect();
        let m = EmbeddingMatrix::new(
            rows.iter().map(|r| r.0.clone()).collect(),
            vec![0; rows.len()],
            ndarray::Array2::from_shape_vec((rows.len(), d), flat).expect("rectangular"),
        )?;
        write_embeddings(&dir.join(format!("emb.{l}.txt")), &m)?;
    }
    Ok(())
}

fn stage_train(cfg: &ExperimentConfig, tokens: &Path, emb: &Path, dir: &Path) -> Result<()> {
    let v = [
        Vocab::load(&emb.join("vocab.l1"))?,
        Vocab::load(&emb.join("vocab.l2"))?,
    ];
    let mut mc = cfg.model.clone();
    mc.vocab_sizes = [v[0].len(), v[1].len()];
    mc.validate()?;
    let mut model = Model::new(&mc, cfg.seed)?;
    for lang in Lang::BOTH {
        let path = emb.join(format!("emb.{}.txt", lang.as_str().to_lowercase()));
        if path.exists() && !(mc.shared_embeddings && lang == Lang::L2) {
            model.set_embeddings(lang, read_embeddings(&path)?.vectors())?;
        }
    }
    let mut corpora: [Vec<Vec<u32>>; 2] = Default::default();
    for lang in Lang::BOTH {
        let l = lang.as_str().to_lowercase();
        let corpus = read_tokenized(&tokens.join(format!("{l}.tok")), cfg.scheme)?;
        let ids: Vec<Vec<u32>> = corpus.iter().map(|s| v[lang.index()].encode(s)).collect();
        let total = ids.len();
        corpora[lang.index()] = ids
            .into_iter()
            .filter(|s| !s.is_empty() && s.len() < mc.max_len)
            .collect();
        let dropped = total - corpora[lang.index()].len();
        if dropped > 0 {
            log::info!(
                "{lang}: {dropped} of {total} sentences empty or longer than max_len - 1, skipped"
            );
        }
    }
    let mut trainer = Trainer::new(
        model,
        cfg.schedule.clone(),
        corpora,
        [v[0].content_hash(), v[1].content_hash()],
    )?;
    let mut extra = KvFile::default();
    extra.set("data.scheme", cfg.scheme.to_string());
    for l in ["l1", "l2"] {
        extra.set(
            format!("data.vocab_{l}"),
            format!("../embeddings/vocab.{l}"),
        );
    }
    if let Some(lex) = &cfg.lexicon {
        extra.set("data.lexicon", lex.to_string_lossy());
    }
    if cfg.scheme == Scheme::Bpe {
        let files = merge_files(cfg.bpe_mode);
        extra.set("data.merges_l1", format!("../bpe/{}", files[0]));
        extra.set(
            "data.merges_l2",
            format!("../bpe/{}", files[files.len() - 1]),
        );
    }
    trainer.set_extra(extra);
    train(&mut trainer, dir)?;
    Ok(())
}

fn tokenizers(cfg: &ExperimentConfig, bpe_dir: &Path) -> Result<[Tokenizer; 2]> {
    Ok(match cfg.scheme {
        Scheme::Char => [Tokenizer::Char, Tokenizer::Char],
        Scheme::Word => {
            let lex = lexicon(cfg)?;
            [Tokenizer::Word(lex.clone()), Tokenizer::Word(lex)]
        }
        Scheme::Bpe => {
            let lex = lexicon(cfg)?;
            let files = merge_files(cfg.bpe_mode);
            let t1 = MergeTable::load(&bpe_dir.join(files[0]))?;
            let t2 = MergeTable::load(&bpe_dir.join(files[files.len() - 1]))?;
            [Tokenizer::Bpe(lex.clone(), t1), Tokenizer::Bpe(lex, t2)]
        }
    })
}

fn direction(src: Lang) -> String {
    format!("{}-{}", src, src.other())
}

fn stage_eval(
    cfg: &ExperimentConfig,
    train_dir: &Path,
    emb: &Path,
    bpe_dir: &Path,
    dir: &Path,
) -> Result<()> {
    let (Some(t1), Some(t2)) = (&cfg.test_l1, &cfg.test_l2) else {
        return Ok(());
    };
    let tests = [read_lines(t1)?, read_lines(t2)?];
    if tests[0].len() != tests[1].len() {
        return Err(Error::LengthMismatch {
            left: tests[0].len(),
            right: tests[1].len(),
        });
    }
    let (model, _) = load_model(&train_dir.join(crate::umt::trainer::LATEST_CHECKPOINT))?;
    let v = [
        Vocab::load(&emb.join("vocab.l1"))?,
        Vocab::load(&emb.join("vocab.l2"))?,
    ];
    let toks = tokenizers(cfg, bpe_dir)?;
    let table = match &cfg.conversion_table {
        Some(p) => ConversionTable::load(p)?,
        None => ConversionTable::bundled(),
    };
    let opts = BleuOptions {
        strip_punct: cfg.strip_punct,
    };
    for src in Lang::BOTH {
        let mut hyps = Vec::new();
        let mut unk = 0;
        for s in &tests[src.index()] {
            let t = translate(
                &model,
                [&toks[0], &toks[1]],
                [&v[0], &v[1]],
                s,
                src,
                src.other(),
                &cfg.decode,
            )?;
            unk += t.has_unk() as usize;
            hyps.push(t.text);
        }
        let d = direction(src);
        corpus::pipeline::write_lines(
            &dir.join(format!("hyp.{d}.txt")),
            hyps.iter().map(String::as_str),
        )?;
        let refs = &tests[src.other().index()];
        let report = char_bleu_with(&hyps, refs, opts)?;
        let mut text = report.to_tsv();
        text.push_str(&format!("unk_sentences\t{unk}\n"));
        std::fs::write(dir.join(format!("bleu.{d}.tsv")), text).map_err(|e| Error::io(dir, e))?;
        let base = baseline_evaluate(&tests[src.index()], refs, &table, opts)?;
        std::fs::write(dir.join(format!("baseline.{d}.tsv")), base.to_tsv())
            .map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

fn tsv_value(path: &Path, key: &str) -> Option<String> {
    let text = std::fs::read_to_string(path).ok()?;
    text.lines()
        .find_map(|l| l.strip_prefix(key)?.strip_prefix('\t').map(str::to_string))
}

/// Runs every stage into `out_dir`, reusing stages whose inputs are
/// unchanged, and writes `manifest.kv` last.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunReport> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let _lock = DirLock::acquire(out_dir)?;
    let started = now_secs();
    let mut r = Runner {
        out: out_dir,
        manifest: KvFile::default(),
        stages: Vec::new(),
    };

    let mut inputs = cfg.section(&["seed", "pipeline."]);
    for p in corpus::pipeline::expand_inputs(&cfg.input)? {
        inputs.push_str(&format!("input {} = {}\n", p.display(), file_sha256(&p)?));
    }
    let pipe = r.stage("pipeline", &inputs, |d| stage_pipeline(cfg, d))?;

    let mut inputs = hashes_text("pipeline", &pipe) + &cfg.section(&["tokenize.scheme"]);
    if let Some(l) = &cfg.lexicon {
        inputs.push_str(&format!("lexicon = {}\n", file_sha256(l)?));
    }
    let pipe_dir = out_dir.join("pipeline");
    let tok = r.stage("tokenize", &inputs, |d| stage_tokenize(cfg, &pipe_dir, d))?;
    let tok_dir = out_dir.join("tokenize");

    let (final_tokens, final_dir) = if cfg.scheme == Scheme::Bpe {
        let inputs = hashes_text("tokenize", &tok) + &cfg.section(&["bpe."]);
        let b = r.stage("bpe", &inputs, |d| stage_bpe(cfg, &tok_dir, d))?;
        (b, out_dir.join("bpe"))
    } else {
        r.stages.push(("bpe", StageStatus::Skipped));
        (tok, tok_dir.clone())
    };
    let token_hashes: BTreeMap<String, String> = final_tokens
        .into_iter()
        .filter(|(f, _)| f.ends_with(".tok"))
        .collect();

    let inputs = hashes_text("tokens", &token_hashes)
        + &cfg.section(&[
            "seed",
            "tokenize.",
            "embedding.",
            "model.d_model",
            "model.d_emb",
            "model.variant",
            "model.shared_embeddings",
        ]);
    let emb = r.stage("embeddings", &inputs, |d| {
        stage_embeddings(cfg, &final_dir, d)
    })?;
    let emb_dir = out_dir.join("embeddings");

    let inputs = hashes_text("tokens", &token_hashes)
        + &hashes_text("embeddings", &emb)
        + &cfg.section(&["seed", "tokenize.scheme", "model.", "train."]);
    let trained = r.stage("train", &inputs, |d| {
        stage_train(cfg, &final_dir, &emb_dir, d)
    })?;
    let train_dir = out_dir.join("train");

    if cfg.test_l1.is_some() {
        let mut inputs = String::new();
        if let Some(h) = trained.get(crate::umt::trainer::LATEST_CHECKPOINT) {
            inputs.push_str(&format!("model = {h}\n"));
        }
        inputs += &hashes_text("embeddings", &emb);
        inputs += &cfg.section(&[
            "eval.beam_size",
            "eval.max_len",
            "eval.length_penalty",
            "eval.strip_punct",
            "tokenize.",
            "bpe.",
        ]);
        for p in [&cfg.test_l1, &cfg.test_l2, &cfg.conversion_table]
            .into_iter()
            .flatten()
        {
            inputs.push_str(&format!("file {} = {}\n", p.display(), file_sha256(p)?));
        }
        if cfg.scheme == Scheme::Bpe {
            inputs.push_str(&format!("bpe dir = {}\n", out_dir.join("bpe").display()));
            for f in merge_files(cfg.bpe_mode) {
                inputs.push_str(&format!(
                    "{f} = {}\n",
                    file_sha256(&out_dir.join("bpe").join(f))?
                ));
            }
        }
        let bpe_dir = out_dir.join("bpe");
        r.stage("eval", &inputs, |d| {
            stage_eval(cfg, &train_dir, &emb_dir, &bpe_dir, d)
        })?;
        for src in Lang::BOTH {
            let d = direction(src);
            for (what, file) in [
                ("bleu", format!("bleu.{d}.tsv")),
                ("baseline", format!("baseline.{d}.tsv")),
            ] {
                if let Some(v) = tsv_value(&out_dir.join("eval").join(file), "bleu") {
                    r.manifest.set(format!("metric.{what}.{d}"), v);
                }
            }
        }
    } else {
        r.stages.push(("eval", StageStatus::Skipped));
    }

    let mut manifest = r.manifest;
    manifest.set("config_hash", cfg.content_hash());
    manifest.set("seed", cfg.seed.to_string());
    manifest.set("tool_version", env!("CARGO_PKG_VERSION"));
    manifest.set("started_at", started.to_string());
    manifest.set("finished_at", now_secs().to_string());
    for (k, v) in cfg.to_kv().iter() {
        manifest.set(format!("config.{k}"), v);
    }
    let path = out_dir.join(MANIFEST_FILE);
    let tmp = out_dir.join(format!("{MANIFEST_FILE}.tmp"));
    std::fs::write(&tmp, manifest.to_text()).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
    Ok(RunReport {
        manifest,
        stages: r.stages,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_kv(dir: &Path) -> KvFile {
        std::fs::write(dir.join("raw.txt"), "他是我的朋友\n佢係我嘅朋友\n").unwrap();
        KvFile::parse("pipeline.input = raw.txt\n").unwrap()
    }

    #[test]
    fn minimal_config_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        let (cfg, warnings) = ExperimentConfig::from_kv(&base_kv(dir.path()), dir.path()).unwrap();
        assert_eq!(cfg.route, EmbeddingRoute::Concat);
        assert_eq!(cfg.scheme, Scheme::Char);
        assert!(warnings.is_empty(), "{warnings:?}");
        let again = ExperimentConfig::from_kv(&cfg.to_kv(), Path::new("/"))
            .unwrap()
            .0;
        assert_eq!(again, cfg);
    }

    fn issues(kv: &KvFile, dir: &Path) -> Vec<ConfigIssue> {
        match ExperimentConfig::from_kv(kv, dir) {
            Err(Error::InvalidConfig(i)) => i,
            other => panic!("expected invalid config, got {other:?}"),
        }
    }

    #[test]
    fn unknown_key_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let mut kv = base_kv(dir.path());
        kv.set("train.stepz", "5");
        let i = issues(&kv, dir.path());
        assert_eq!(i.len(), 1);
        assert_eq!(i[0].key, "train.stepz");
        assert!(i[0].reason.contains("unknown"));
    }

    #[test]
    fn range_and_path_errors_carry_their_key() {
        let dir = tempfile::tempdir().unwrap();
        let mut kv = base_kv(dir.path());
        kv.set("eval.beam_size", "0");
        kv.set("eval.test_l1", "missing.txt");
        kv.set("eval.test_l2", "missing2.txt");
        kv.set("model.dropout", "1.5");
        kv.set("train.batch_size", "x");
        let keys: Vec<String> = issues(&kv, dir.path()).into_iter().map(|i| i.key).collect();
        for k in [
            "eval.beam_size",
            "eval.test_l1",
            "eval.test_l2",
            "model.dropout",
            "train.batch_size",
        ] {
            assert!(keys.iter().any(|x| x == k), "{k} missing from {keys:?}");
        }
    }

    #[test]
    fn missing_input_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let kv = KvFile::parse("pipeline.input = nothing-here.txt\n").unwrap();
        assert_eq!(issues(&kv, dir.path())[0].key, "pipeline.input");
        assert_eq!(
            issues(&KvFile::default(), dir.path())[0].key,
            "pipeline.input"
        );
    }

    #[test]
    fn route_variant_pairing_warns() {
        let dir = tempfile::tempdir().unwrap();
        let mut kv = base_kv(dir.path());
        kv.set("model.variant", "gru");
        kv.set("embedding.route", "concat");
        let (_, w) = ExperimentConfig::from_kv(&kv, dir.path()).unwrap();
        assert_eq!(w.len(), 1);
        kv.set("embedding.route", "pivot-private");
        kv.set("model.d_emb", "64");
        assert_eq!(issues(&kv, dir.path())[0].key, "embedding.route");
    }

    #[test]
    fn env_overrides_known_keys() {
        let dir = tempfile::tempdir().unwrap();
        let mut kv = base_kv(dir.path());
        let env: BTreeMap<String, String> = [
            ("CANTO_UMT_TRAIN_BATCH_SIZE".to_string(), "7".to_string()),
            ("CANTO_UMT_EVAL_BEAM_SIZE".to_string(), "3".to_string()),
            ("CANTO_UMT_NOT_A_KEY".to_string(), "1".to_string()),
        ]
        .into();
        apply_env_overrides(&mut kv, &env);
        let (cfg, _) = ExperimentConfig::from_kv(&kv, dir.path()).unwrap();
        assert_eq!(cfg.schedule.batch_size, 7);
        assert_eq!(cfg.decode.beam_size, 3);
        assert_eq!(env_name("model.d_model"), "CANTO_UMT_MODEL_D_MODEL");
    }

    #[test]
    fn training_seed_follows_the_global_seed() {
        let dir = tempfile::tempdir().unwrap();
        let mut kv = base_kv(dir.path());
        kv.set("seed", "42");
        let (cfg, _) = ExperimentConfig::from_kv(&kv, dir.path()).unwrap();
        assert_eq!((cfg.schedule.seed, cfg.skipgram.seed), (42, 42));
        kv.set("train.seed", "3");
        assert_eq!(issues(&kv, dir.path())[0].key, "train.seed");
    }

    #[test]
    fn lock_is_exclusive() {
        let dir = tempfile::tempdir().unwrap();
        let held = DirLock::acquire(dir.path()).unwrap();
        assert!(matches!(
            DirLock::acquire(dir.path()),
            Err(Error::Locked(_))
        ));
        drop(held);
        assert!(DirLock::acquire(dir.path()).is_ok());
    }
}
