use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;

use super::noise::NoiseConfig;
use super::schedule::{Task, TrainingSchedule};
use super::steps::{backtranslation_step, dae_step, StepContext, Stream};
use crate::hash::ContentHasher;
use crate::kv::{FieldReader, KvFile};
use crate::nn::{Checkpoint, Model, ModelConfig, Optimizer};
use crate::{Error, Lang, Result};

pub const METRICS_FILE: &str = "metrics.tsv";
pub const LATEST_CHECKPOINT: &str = "latest.ckpt";

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// One-based: the number of updates done after this step.
    pub step: usize,
    pub task: Task,
    pub lang: Lang,
    pub loss: f64,
}

impl std::fmt::Display for StepRecord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}\t{}\t{}\t{}",
            self.step, self.task, self.lang, self.loss
        )
    }
}

impl std::str::FromStr for StepRecord {
    type Err = Error;

    fn from_str(line: &str) -> Result<Self> {
        let bad = || Error::format("metrics line", line.to_string());
        let mut cols = line.split('\t');
        let mut next = || cols.next().ok_or_else(bad);
        Ok(StepRecord {
            step: next()?.parse().map_err(|_| bad())?,
            task: next()?.parse()?,
            lang: next()?.parse()?,
            loss: next()?.parse().map_err(|_| bad())?,
        })
    }
}

/// Hash of a tokenized corpus (ids per sentence).
pub fn corpus_hash(corpus: &[Vec<u32>]) -> String {
    let mut h = ContentHasher::new();
    for s in corpus {
        let bytes: Vec<u8> = s.iter().flat_map(|x| x.to_le_bytes()).collect();
        h.part("s", &bytes);
    }
    h.finish()
}

/// Owns the model and optimizer and runs the interleaved schedule.
#[derive(Debug, Clone)]
pub struct Trainer {
    model: Model,
    optimizer: Optimizer,
    schedule: TrainingSchedule,
    corpora: [Vec<Vec<u32>>; 2],
    vocab_hashes: [String; 2],
    extra: KvFile,
    step: usize,
    bt_skipped: u64,
}

impl Trainer {
    /// `corpora` hold token ids without EOS, indexed by language.
    pub fn new(
        model: Model,
        schedule: TrainingSchedule,
        corpora: [Vec<Vec<u32>>; 2],
        vocab_hashes: [String; 2],
    ) -> Result<Self> {
        NoiseConfig {
            p_drop: schedule.p_drop,
            shuffle_k: schedule.shuffle_k,
            seed: 0,
        }
        .validate()?;
        if schedule.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "batch size must be at least 1".into(),
            ));
        }
        let max = model.config().max_len;
        for lang in Lang::BOTH {
            let corpus = &corpora[lang.index()];
            if corpus.iter().all(|s| s.is_empty()) {
                return Err(Error::InsufficientData {
                    requested: 1,
                    available: 0,
                });
            }
            if let Some(s) = corpus.iter().find(|s| s.len() + 1 > max) {
                return Err(Error::SequenceTooLong {
                    len: s.len() + 1,
                    max,
                });
            }
            let v = model.vocab_size(lang);
            if corpus.iter().flatten().any(|&t| t as usize >= v) {
                return Err(Error::InvalidArgument(format!(
                    "{lang} corpus has ids outside its vocabulary"
                )));
            }
        }
        let corpora = corpora.map(|c| c.into_iter().filter(|s| !s.is_empty()).collect());
        let optimizer = Optimizer::new(schedule.optimizer.clone(), model.store());
        Ok(Trainer {
            model,
            optimizer,
            schedule,
            corpora,
            vocab_hashes,
            extra: KvFile::default(),
            step: 0,
            bt_skipped: 0,
        })
    }

    /// Extra manifest entries (corpus paths and the like) carried into checkpoints.
    pub fn set_extra(&mut self, extra: KvFile) {
        self.extra = extra;
    }

    pub fn extra(&self) -> &KvFile {
        &self.extra
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    pub fn schedule(&self) -> &TrainingSchedule {
        &self.schedule
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn bt_skipped(&self) -> u64 {
        self.bt_skipped
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.schedule.steps
    }

    fn sample_batch(&self, lang: Lang, ctx: StepContext) -> Vec<&[u32]> {
        let corpus = &self.corpora[lang.index()];
        let mut rng = ctx.rng(lang.index(), Stream::Batch);
        (0..self.schedule.batch_size)
            .map(|_| corpus[rng.random_range(0..corpus.len())].as_slice())
            .collect()
    }

    /// Runs the next scheduled step.
    pub fn run_step(&mut self) -> Result<StepRecord> {
        let (task, lang) = self.schedule.task_at(self.step);
        let ctx = StepContext {
            step: self.step,
            seed: self.schedule.seed,
        };
        let batch: Vec<Vec<u32>> = self
            .sample_batch(lang, ctx)
            .into_iter()
            .map(<[u32]>::to_vec)
            .collect();
        let batch: Vec<&[u32]> = batch.iter().map(Vec::as_slice).collect();
        let loss = match task {
            Task::Dae => {
                let noise = NoiseConfig {
                    p_drop: self.schedule.p_drop,
                    shuffle_k: self.schedule.shuffle_k,
                    seed: 0,
                };
                dae_step(
                    &mut self.model,
                    &mut self.optimizer,
                    &batch,
                    lang,
                    &noise,
                    ctx,
                )?
            }
            Task::Bt => {
                let out = backtranslation_step(
                    &mut self.model,
                    &mut self.optimizer,
                    &batch,
                    lang,
                    self.schedule.bt_beam,
                    ctx,
                )?;
                self.bt_skipped += out.skipped as u64;
                out.loss
            }
        };
        self.step += 1;
        Ok(StepRecord {
            step: self.step,
            task,
            lang,
            loss,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut manifest = self.extra.clone();
        let cfg = self.model.config();
        for (k, v) in cfg.to_kv().iter() {
            manifest.set(format!("model.{k}"), v);
        }
        manifest.set("config_hash", cfg.content_hash());
        self.schedule.write_kv(&mut manifest, "schedule.");
        for lang in Lang::BOTH {
            manifest.set(
                format!("vocab_hash.{lang}"),
                self.vocab_hashes[lang.index()].clone(),
            );
            manifest.set(
                format!("corpus_hash.{lang}"),
                corpus_hash(&self.corpora[lang.index()]),
            );
        }
        manifest.set("step", self.step.to_string());
        manifest.set("optimizer_steps", self.optimizer.steps().to_string());
        manifest.set("bt_skipped", self.bt_skipped.to_string());
        manifest.set("tool_version", env!("CARGO_PKG_VERSION"));
        let mut tensors: Vec<_> = self
            .model
            .store()
            .iter()
            .map(|(_, p)| (p.name.clone(), p.value.clone()))
            .collect();
        tensors.extend(self.optimizer.state_tensors(self.model.store()));
        Checkpoint { manifest, tensors }
    }

    /// Rebuilds a trainer from a checkpoint. The corpora and vocabulary
    /// hashes must match the ones recorded at save time.
    pub fn resume(
        ckpt: &Checkpoint,
        corpora: [Vec<Vec<u32>>; 2],
        vocab_hashes: [String; 2],
    ) -> Result<Self> {
        let m = &ckpt.manifest;
        let (cfg, schedule, extra) = split_manifest(m)?;
        let recorded = get(m, "config_hash")?;
        if recorded != cfg.content_hash() {
            return Err(Error::HashMismatch {
                what: "model config".into(),
                expected: recorded.into(),
                found: cfg.content_hash(),
            });
        }
        for lang in Lang::BOTH {
            let expected = get(m, &format!("vocab_hash.{lang}"))?;
            if expected != vocab_hashes[lang.index()] {
                return Err(Error::HashMismatch {
                    what: format!("{lang} vocabulary"),
                    expected: expected.into(),
                    found: vocab_hashes[lang.index()].clone(),
                });
            }
        }
        let model = restore_model(ckpt, &cfg)?;
        let mut t = Trainer::new(model, schedule, corpora, vocab_hashes)?;
        for lang in Lang::BOTH {
            let expected = get(m, &format!("corpus_hash.{lang}"))?;
            let found = corpus_hash(&t.corpora[lang.index()]);
            if expected != found {
                return Err(Error::HashMismatch {
                    what: format!("{lang} corpus"),
                    expected: expected.into(),
                    found,
                });
            }
        }
        let parse = |k: &str| -> Result<u64> {
            get(m, k)?
                .parse()
                .map_err(|_| Error::format("checkpoint", format!("bad {k}")))
        };
        t.step = parse("step")? as usize;
        t.bt_skipped = parse("bt_skipped")?;
        t.optimizer = Optimizer::restore(
            t.schedule.optimizer.clone(),
            t.model.store(),
            parse("optimizer_steps")?,
            |n| ckpt.tensor(n).cloned(),
        )?;
        t.extra = extra;
        Ok(t)
    }
}

fn get<'a>(m: &'a KvFile, key: &str) -> Result<&'a str> {
    m.get(key)
        .ok_or_else(|| Error::format("checkpoint", format!("manifest lacks `{key}`")))
}

const BOOKKEEPING: [&str; 5] = [
    "config_hash",
    "step",
    "optimizer_steps",
    "bt_skipped",
    "tool_version",
];

/// Splits a trainer manifest into model config, schedule and the caller's
/// extra entries.
pub fn split_manifest(m: &KvFile) -> Result<(ModelConfig, TrainingSchedule, KvFile)> {
    let mut model_kv = KvFile::default();
    let mut sched_kv = KvFile::default();
    let mut extra = KvFile::default();
    for (k, v) in m.iter() {
        if let Some(k) = k.strip_prefix("model.") {
            model_kv.set(k, v);
        } else if let Some(k) = k.strip_prefix("schedule.") {
            sched_kv.set(k, v);
        } else if !BOOKKEEPING.contains(&k)
            && !k.starts_with("vocab_hash.")
            && !k.starts_with("corpus_hash.")
        {
            extra.set(k, v);
        }
    }
    let cfg = ModelConfig::from_kv(&model_kv)?;
    let mut r = FieldReader::new(&sched_kv);
    let schedule = TrainingSchedule::read_kv(&mut r, "");
    r.finish()?;
    Ok((cfg, schedule, extra))
}

/// Model with every parameter taken from the checkpoint.
pub fn restore_model(ckpt: &Checkpoint, cfg: &ModelConfig) -> Result<Model> {
    let mut model = Model::new(cfg, 0)?;
    let ids: Vec<_> = model.store().ids().collect();
    for id in ids {
        let name = model.store().param(id).name.clone();
        let t = ckpt
            .tensor(&name)
            .ok_or_else(|| Error::format("checkpoint", format!("missing tensor {name}")))?;
        let slot = model.store_mut().value_mut(id);
        if slot.dim() != t.dim() {
            return Err(Error::format("checkpoint", format!("shape of {name}")));
        }
        slot.assign(t);
    }
    Ok(model)
}

/// Loads a model from a trainer checkpoint file.
pub fn load_model(path: &Path) -> Result<(Model, Checkpoint)> {
    let ckpt = Checkpoint::load(path)?;
    let (cfg, _, _) = split_manifest(&ckpt.manifest)?;
    let recorded = get(&ckpt.manifest, "config_hash")?;
    if recorded != cfg.content_hash() {
        return Err(Error::HashMismatch {
            what: "model config".into(),
            expected: recorded.into(),
            found: cfg.content_hash(),
        });
    }
    Ok((restore_model(&ckpt, &cfg)?, ckpt))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub records: Vec<StepRecord>,
    pub checkpoints: Vec<PathBuf>,
}

fn checkpoint_name(step: usize) -> String {
    format!("checkpoint-{step:08}.ckpt")
}

fn save(trainer: &Trainer, out_dir: &Path, written: &mut Vec<PathBuf>) -> Result<()> {
    let ckpt = trainer.checkpoint();
    let path = out_dir.join(checkpoint_name(trainer.step()));
    ckpt.save(&path)?;
    ckpt.save(&out_dir.join(LATEST_CHECKPOINT))?;
    written.push(path);
    Ok(())
}

/// Runs the remaining steps, appending to `metrics.tsv` and writing
/// checkpoints into `out_dir`. A fresh run writes the step-0 checkpoint
/// first; a resumed run truncates the log to the resumed step.
pub fn train(trainer: &mut Trainer, out_dir: &Path) -> Result<TrainSummary> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let metrics = out_dir.join(METRICS_FILE);
    let existing = match std::fs::read_to_string(&metrics) {
        Ok(text) if trainer.step() > 0 => text
            .lines()
            .take(trainer.step())
            .map(|l| format!("{l}\n"))
            .collect(),
        _ => String::new(),
    };
    std::fs::write(&metrics, existing).map_err(|e| Error::io(&metrics, e))?;
    let mut log = std::fs::OpenOptions::new()
        .append(true)
        .open(&metrics)
        .map_err(|e| Error::io(&metrics, e))?;
    let mut checkpoints = Vec::new();
    if trainer.step() == 0 {
        save(trainer, out_dir, &mut checkpoints)?;
    }
    let every = trainer.schedule().checkpoint_every;
    let mut records = Vec::new();
    while !trainer.is_done() {
        let rec = trainer.run_step()?;
        writeln!(log, "{rec}").map_err(|e| Error::io(&metrics, e))?;
        log::debug!("{rec}");
        records.push(rec);
        if every > 0 && trainer.step().is_multiple_of(every) && !trainer.is_done() {
            save(trainer, out_dir, &mut checkpoints)?;
        }
    }
    if checkpoints
        .last()
        .map(|p| p.ends_with(checkpoint_name(trainer.step())))
        != Some(true)
    {
        save(trainer, out_dir, &mut checkpoints)?;
    }
    Ok(TrainSummary {
        records,
        checkpoints,
    })
}

/// Reads a metrics log back.
pub fn read_metrics(path: &Path) -> Result<Vec<StepRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.is_empty())
        .map(str::parse)
        .collect()
}
