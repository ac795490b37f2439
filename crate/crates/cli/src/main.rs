use std::io::{BufRead, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use canto_umt::bpe::{self, BpeMode, MergeTable, WordCounts};
use canto_umt::corpus::pipeline::expand_inputs;
use canto_umt::corpus::{run_pipeline, PipelineConfig};
use canto_umt::embed::{
    apply_mapping, build_anchor_dict, compose_pivot_private, learn_mapping, normalize_rows,
    read_embeddings, train_skipgram, write_embeddings, MappingConfig, SkipGramConfig,
};
use canto_umt::eval::{
    baseline_evaluate, char_bleu_with, translate, BleuOptions, ConversionTable, DecodeConfig,
};
use canto_umt::experiment::{self, process_env, run_experiment, ExperimentConfig, StageStatus};
use canto_umt::kv::KvFile;
use canto_umt::nn::{Checkpoint, Model};
use canto_umt::segment::{Lexicon, Scheme, TokenizedSentence, Tokenizer};
use canto_umt::umt::trainer::split_manifest;
use canto_umt::umt::{load_model, train, Trainer};
use canto_umt::vocab::Vocab;
use canto_umt::{Error, Lang, Result};
use clap::{Args, Parser, Subcommand};

/// Unsupervised Mandarin-Cantonese translation workbench.
#[derive(Parser)]
#[command(name = "canto-umt", version)]
struct Cli {
    /// Config file (flat `key = value`).
    #[arg(long, global = true, env = "CANTO_UMT_CONFIG")]
    config: Option<PathBuf>,
    /// Seed overriding the config.
    #[arg(long, global = true, env = "CANTO_UMT_SEED")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, env = "CANTO_UMT_OUT_DIR")]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Corpus cleaning and routing.
    #[command(subcommand)]
    Pipeline(PipelineCmd),
    /// Tokenize one sentence per line (stdin to stdout by default).
    Tokenize(TokenizeArgs),
    /// Learn or apply subword merges.
    #[command(subcommand)]
    Bpe(BpeCmd),
    /// Train, map and compose embeddings.
    #[command(subcommand)]
    Embed(EmbedCmd),
    /// Unsupervised training.
    #[command(subcommand)]
    Umt(UmtCmd),
    /// Translate one sentence per line with a checkpoint.
    Translate(TranslateArgs),
    /// Scoring.
    #[command(subcommand)]
    Eval(EvalCmd),
    /// Whole experiments from one config.
    #[command(subcommand)]
    Experiment(ExperimentCmd),
}

#[derive(Subcommand)]
enum PipelineCmd {
    Run {
        /// Glob over raw text files.
        #[arg(long = "in")]
        input: String,
    },
}

#[derive(Args)]
struct TokenizeArgs {
    #[arg(long, default_value = "char")]
    scheme: Scheme,
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// BPE merges (scheme bpe only).
    #[arg(long)]
    merges: Option<PathBuf>,
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum BpeCmd {
    Learn {
        /// Word-tokenized corpora, one per language.
        #[arg(long = "in", required = true, num_args = 1..=2)]
        inputs: Vec<PathBuf>,
        /// One path in joint mode, one per input in separate mode.
        #[arg(long, required = true, num_args = 1..=2)]
        merges_out: Vec<PathBuf>,
        #[arg(long, default_value_t = bpe::DEFAULT_NUM_MERGES)]
        num_merges: usize,
        #[arg(long, default_value = "joint")]
        mode: BpeMode,
    },
    Apply {
        #[arg(long)]
        merges: PathBuf,
        #[arg(long = "in")]
        input: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SkipGramArgs {
    #[arg(long, default_value_t = 512)]
    dim: usize,
    #[arg(long, default_value_t = 5)]
    window: usize,
    #[arg(long, default_value_t = 5)]
    negatives: usize,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    #[arg(long, default_value_t = 0.025)]
    lr: f64,
    #[arg(long, default_value_t = 1)]
    min_count: u64,
}

#[derive(Subcommand)]
enum EmbedCmd {
    /// Skip-gram over tokenized corpora (several files are concatenated).
    Train {
        #[arg(long = "in", required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        sg: SkipGramArgs,
    },
    /// Rotate the source space onto the target space.
    Map {
        #[arg(long)]
        src: PathBuf,
        #[arg(long)]
        tgt: PathBuf,
        /// Anchor selection; only `identical` is supported.
        #[arg(long, default_value = "identical")]
        anchors: String,
        #[arg(long, default_value_t = 0)]
        self_learning: usize,
        /// Mapped source embeddings.
        #[arg(long)]
        out: PathBuf,
        /// Normalized target embeddings, in the same space.
        #[arg(long)]
        tgt_out: Option<PathBuf>,
        #[arg(long)]
        anchors_out: Option<PathBuf>,
    },
    PivotPrivate {
        #[arg(long)]
        shared: PathBuf,
        #[arg(long)]
        private_l1: PathBuf,
        #[arg(long)]
        private_l2: PathBuf,
        #[arg(long)]
        out_l1: PathBuf,
        #[arg(long)]
        out_l2: PathBuf,
    },
}

#[derive(Subcommand)]
enum UmtCmd {
    /// Train from tokenized corpora; model.* and train.* keys come from --config.
    Train {
        #[arg(long)]
        l1: PathBuf,
        #[arg(long)]
        l2: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Continue a run from one of its checkpoints.
    Resume {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct TranslateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    src_lang: Lang,
    #[arg(long, default_value_t = 1)]
    beam: usize,
    #[arg(long, default_value_t = 100)]
    max_len: usize,
    #[arg(long, default_value_t = 0.6)]
    length_penalty: f64,
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum EvalCmd {
    Bleu {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        strip_punct: bool,
    },
    Baseline {
        #[arg(long)]
        src: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Two-column conversion table; the bundled one by default.
        #[arg(long)]
        table: Option<PathBuf>,
        #[arg(long)]
        strip_punct: bool,
    },
}

#[derive(Subcommand)]
enum ExperimentCmd {
    Run,
    Validate,
}

fn read_text(input: Option<&Path>) -> Result<String> {
    match input {
        Some(p) => std::fs::read_to_string(p).map_err(|e| io_err(p, e)),
        None => {
            let mut s = String::new();
            std::io::stdin()
                .read_to_string(&mut s)
                .map_err(|e| io_err(Path::new("<stdin>"), e))?;
            Ok(s)
        }
    }
}

fn io_err(p: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: p.to_path_buf(),
        source: e,
    }
}

fn write_out(out: Option<&Path>, lines: &[String]) -> Result<()> {
    let mut text = String::new();
    for l in lines {
        text.push_str(l);
        text.push('\n');
    }
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| io_err(p, e)),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| io_err(Path::new("<stdout>"), e)),
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let f = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    std::io::BufReader::new(f)
        .lines()
        .map(|l| l.map_err(|e| io_err(path, e)))
        .collect()
}

fn read_tokens(path: &Path) -> Result<Vec<Vec<String>>> {
    Ok(read_lines(path)?
        .iter()
        .map(|l| TokenizedSentence::from_line(l, Scheme::Word).tokens)
        .collect())
}

fn require<'a>(v: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    v.as_deref()
        .ok_or_else(|| Error::InvalidArgument(format!("{flag} is required")))
}

fn tokenizer(scheme: Scheme, lexicon: Option<&Path>, merges: Option<&Path>) -> Result<Tokenizer> {
    let lex = || {
        lexicon
            .map(Lexicon::load)
            .transpose()
            .map(Option::unwrap_or_default)
    };
    Ok(match scheme {
        Scheme::Char => Tokenizer::Char,
        Scheme::Word => Tokenizer::Word(lex()?),
        Scheme::Bpe => {
            let m = merges.ok_or_else(|| {
                Error::InvalidArgument("--merges is required for scheme bpe".into())
            })?;
            Tokenizer::Bpe(lex()?, MergeTable::load(m)?)
        }
    })
}

fn cmd_pipeline(cli: &Cli, input: &str) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => PipelineConfig::from_kv(&KvFile::load(p)?)?,
        None => PipelineConfig::default(),
    };
    let out = require(&cli.out_dir, "--out-dir")?;
    let stats = run_pipeline(&cfg, &expand_inputs(input)?, out, cli.seed.unwrap_or(1))?;
    print!("{}", stats.to_report());
    Ok(())
}

fn cmd_tokenize(a: &TokenizeArgs) -> Result<()> {
    let tok = tokenizer(a.scheme, a.lexicon.as_deref(), a.merges.as_deref())?;
    let text = read_text(a.input.as_deref())?;
    let lines: Vec<String> = text.lines().map(|l| tok.tokenize(l).to_line()).collect();
    write_out(a.out.as_deref(), &lines)
}

fn cmd_bpe(cmd: &BpeCmd) -> Result<()> {
    match cmd {
        BpeCmd::Learn {
            inputs,
            merges_out,
            num_merges,
            mode,
        } => {
            let want = if *mode == BpeMode::Joint {
                1
            } else {
                inputs.len()
            };
            if merges_out.len() != want {
                return Err(Error::InvalidArgument(format!(
                    "{mode} mode writes {want} merge file(s)"
                )));
            }
            let counts = inputs
                .iter()
                .map(|p| Ok(WordCounts::from_sentences(read_tokens(p)?.iter())))
                .collect::<Result<Vec<_>>>()?;
            for (table, path) in bpe::learn_bpe(&counts, *num_merges, *mode)
                .iter()
                .zip(merges_out)
            {
                table.save(path)?;
                log::info!("{}: {} merges", path.display(), table.len());
            }
            Ok(())
        }
        BpeCmd::Apply { merges, input, out } => {
            let table = MergeTable::load(merges)?;
            let text = read_text(input.as_deref())?;
            let lines: Vec<String> = text
                .lines()
                .map(|l| {
                    table
                        .apply(&TokenizedSentence::from_line(l, Scheme::Word).tokens)
                        .join(" ")
                })
                .collect();
            write_out(out.as_deref(), &lines)
        }
    }
}

fn cmd_embed(cli: &Cli, cmd: &EmbedCmd) -> Result<()> {
    match cmd {
        EmbedCmd::Train { inputs, out, sg } => {
            let mut corpus = Vec::new();
            for p in inputs {
                corpus.extend(read_tokens(p)?);
            }
            let cfg = SkipGramConfig {
                dim: sg.dim,
                window: sg.window,
                negatives: sg.negatives,
                epochs: sg.epochs,
                lr: sg.lr,
                min_count: sg.min_count,
                seed: cli.seed.unwrap_or(1),
            };
            let (m, report) = train_skipgram(&corpus, &cfg)?;
            for (i, l) in report.epoch_losses.iter().enumerate() {
                log::info!("epoch {}: loss {l:.4}", i + 1);
            }
            write_embeddings(out, &m)
        }
        EmbedCmd::Map {
            src,
            tgt,
            anchors,
            self_learning,
            out,
            tgt_out,
            anchors_out,
        } => {
            if anchors != "identical" {
                return Err(Error::InvalidArgument(format!(
                    "unsupported anchors `{anchors}` (identical)"
                )));
            }
            let x = read_embeddings(src)?;
            let y = read_embeddings(tgt)?;
            let dict = build_anchor_dict(&x, &y)?;
            let cfg = MappingConfig {
                self_learning_iters: *self_learning,
                ..Default::default()
            };
            let (w, report) = learn_mapping(&x, &y, &dict, &cfg)?;
            log::info!(
                "{} anchors, orthogonality error {:.2e}",
                dict.len(),
                w.orthogonality_error()
            );
            for (i, (before, after)) in report.objectives.iter().enumerate() {
                log::info!(
                    "self-learning {}: objective {before:.4} -> {after:.4}",
                    i + 1
                );
            }
            write_embeddings(
                out,
                &x.with_vectors(apply_mapping(&normalize_rows(x.vectors()), &w))?,
            )?;
            if let Some(p) = tgt_out {
                write_embeddings(p, &y.with_vectors(normalize_rows(y.vectors()))?)?;
            }
            if let Some(p) = anchors_out {
                std::fs::write(p, dict.to_text(&x, &y)).map_err(|e| io_err(p, e))?;
            }
            Ok(())
        }
        EmbedCmd::PivotPrivate {
            shared,
            private_l1,
            private_l2,
            out_l1,
            out_l2,
        } => {
            let pp = compose_pivot_private(
                &read_embeddings(shared)?,
                &read_embeddings(private_l1)?,
                &read_embeddings(private_l2)?,
            )?;
            log::info!(
                "missing shared rows {:?}, missing private rows {:?}",
                pp.missing_shared,
                pp.missing_private
            );
            write_embeddings(out_l1, &pp.l1)?;
            write_embeddings(out_l2, &pp.l2)
        }
    }
}

fn absolute(p: &Path) -> Result<PathBuf> {
    std::fs::canonicalize(p).map_err(|e| io_err(p, e))
}

/// Resolves a manifest path against the checkpoint's directory.
fn manifest_path(ckpt: &Checkpoint, ckpt_path: &Path, key: &str) -> Option<PathBuf> {
    let v = ckpt.manifest.get(key)?;
    let dir = ckpt_path.parent().unwrap_or(Path::new("."));
    Some(dir.join(v))
}

fn load_corpora(l1: &Path, l2: &Path, v: &[Vocab; 2]) -> Result<[Vec<Vec<u32>>; 2]> {
    Ok([
        read_tokens(l1)?.iter().map(|s| v[0].encode(s)).collect(),
        read_tokens(l2)?.iter().map(|s| v[1].encode(s)).collect(),
    ])
}

fn cmd_umt(cli: &Cli, cmd: &UmtCmd) -> Result<()> {
    match cmd {
        UmtCmd::Train { l1, l2, out } => {
            let out = out
                .as_deref()
                .or(cli.out_dir.as_deref())
                .ok_or_else(|| Error::InvalidArgument("--out is required".into()))?;
            let mut kv = match &cli.config {
                Some(p) => KvFile::load(p)?,
                None => KvFile::default(),
            };
            if let Some(s) = cli.seed {
                kv.set("schedule.seed", s.to_string());
            }
            let corpora = [read_tokens(l1)?, read_tokens(l2)?];
            let v = [
                Vocab::build(corpora[0].iter().flatten(), 1),
                Vocab::build(corpora[1].iter().flatten(), 1),
            ];
            // config keys: model.* for the architecture, train.* for the schedule
            let mut manifest = KvFile::default();
            for (k, val) in kv.iter() {
                if let Some(k) = k.strip_prefix("train.") {
                    manifest.set(format!("schedule.{k}"), val);
                } else if k.starts_with("model.") || k.starts_with("schedule.") {
                    manifest.set(k, val);
                } else {
                    return Err(Error::InvalidConfig(vec![canto_umt::ConfigIssue {
                        key: k.to_string(),
                        reason: "unknown key (expected model.* or train.*)".into(),
                    }]));
                }
            }
            manifest.set("model.vocab_l1", v[0].len().to_string());
            manifest.set("model.vocab_l2", v[1].len().to_string());
            let (mc, schedule, _) = split_manifest(&manifest)?;
            std::fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
            v[0].save(&out.join("vocab.l1"))?;
            v[1].save(&out.join("vocab.l2"))?;
            let ids = load_corpora(l1, l2, &v)?;
            let model = Model::new(&mc, schedule.seed)?;
            let mut trainer = Trainer::new(
                model,
                schedule,
                ids,
                [v[0].content_hash(), v[1].content_hash()],
            )?;
            let mut extra = KvFile::default();
            extra.set("data.corpus_l1", absolute(l1)?.to_string_lossy());
            extra.set("data.corpus_l2", absolute(l2)?.to_string_lossy());
            extra.set("data.vocab_l1", "vocab.l1");
            extra.set("data.vocab_l2", "vocab.l2");
            extra.set("data.scheme", "word");
            trainer.set_extra(extra);
            let summary = train(&mut trainer, out)?;
            report_training(&summary.records, trainer.bt_skipped());
            Ok(())
        }
        UmtCmd::Resume { checkpoint, out } => {
            let ckpt = Checkpoint::load(checkpoint)?;
            let get = |k: &str| {
                manifest_path(&ckpt, checkpoint, k).ok_or_else(|| Error::Format {
                    what: "checkpoint",
                    detail: format!("manifest lacks `{k}`"),
                })
            };
            let v = [
                Vocab::load(&get("data.vocab_l1")?)?,
                Vocab::load(&get("data.vocab_l2")?)?,
            ];
            let ids = load_corpora(&get("data.corpus_l1")?, &get("data.corpus_l2")?, &v)?;
            let mut trainer =
                Trainer::resume(&ckpt, ids, [v[0].content_hash(), v[1].content_hash()])?;
            let dir = match out.as_deref().or(cli.out_dir.as_deref()) {
                Some(d) => d.to_path_buf(),
                None => checkpoint.parent().unwrap_or(Path::new(".")).to_path_buf(),
            };
            log::info!("resuming at step {} into {}", trainer.step(), dir.display());
            let summary = train(&mut trainer, &dir)?;
            report_training(&summary.records, trainer.bt_skipped());
            Ok(())
        }
    }
}

fn report_training(records: &[canto_umt::umt::StepRecord], skipped: u64) {
    if let Some(last) = records.last() {
        println!(
            "steps\t{}\nlast_loss\t{}\nbt_skipped\t{skipped}",
            last.step, last.loss
        );
    }
}

fn cmd_translate(a: &TranslateArgs) -> Result<()> {
    let (model, ckpt) = load_model(&a.model)?;
    let path = |k: &str| manifest_path(&ckpt, &a.model, k);
    let missing = |k: &str| Error::Format {
        what: "checkpoint",
        detail: format!("manifest lacks `{k}`"),
    };
    let v = [
        Vocab::load(&path("data.vocab_l1").ok_or_else(|| missing("data.vocab_l1"))?)?,
        Vocab::load(&path("data.vocab_l2").ok_or_else(|| missing("data.vocab_l2"))?)?,
    ];
    let scheme: Scheme = ckpt.manifest.get("data.scheme").unwrap_or("char").parse()?;
    let lexicon = ckpt.manifest.get("data.lexicon").map(PathBuf::from);
    let toks = [
        tokenizer(
            scheme,
            lexicon.as_deref(),
            path("data.merges_l1").as_deref(),
        )?,
        tokenizer(
            scheme,
            lexicon.as_deref(),
            path("data.merges_l2").as_deref(),
        )?,
    ];
    let cfg = DecodeConfig {
        beam_size: a.beam,
        max_len: a.max_len,
        length_penalty: a.length_penalty,
    };
    let text = read_text(a.input.as_deref())?;
    let mut lines = Vec::new();
    for (n, s) in text.lines().enumerate() {
        let t = translate(
            &model,
            [&toks[0], &toks[1]],
            [&v[0], &v[1]],
            s,
            a.src_lang,
            a.src_lang.other(),
            &cfg,
        )?;
        if t.has_unk() {
            log::warn!(
                "line {}: {} unknown source tokens, {} <UNK> in output",
                n + 1,
                t.source_unk,
                t.output_unk
            );
        }
        lines.push(t.text);
    }
    write_out(a.out.as_deref(), &lines)
}

fn cmd_eval(cmd: &EvalCmd) -> Result<()> {
    let report = match cmd {
        EvalCmd::Bleu {
            hyp,
            reference,
            strip_punct,
        } => char_bleu_with(
            &read_lines(hyp)?,
            &read_lines(reference)?,
            BleuOptions {
                strip_punct: *strip_punct,
            },
        )?,
        EvalCmd::Baseline {
            src,
            reference,
            table,
            strip_punct,
        } => {
            let table = match table {
                Some(p) => ConversionTable::load(p)?,
                None => ConversionTable::bundled(),
            };
            baseline_evaluate(
                &read_lines(src)?,
                &read_lines(reference)?,
                &table,
                BleuOptions {
                    strip_punct: *strip_punct,
                },
            )?
        }
    };
    print!("{}", report.to_tsv());
    Ok(())
}

fn load_experiment(cli: &Cli) -> Result<(ExperimentConfig, Vec<String>)> {
    let path = require(&cli.config, "--config")?;
    let mut kv = KvFile::load(path)?;
    experiment::apply_env_overrides(&mut kv, &process_env());
    if let Some(s) = cli.seed {
        kv.set("seed", s.to_string());
    }
    let base = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let (cfg, warnings) = ExperimentConfig::from_kv(&kv, base)?;
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok((cfg, warnings))
}

fn cmd_experiment(cli: &Cli, cmd: &ExperimentCmd) -> Result<()> {
    let (cfg, _) = load_experiment(cli)?;
    match cmd {
        ExperimentCmd::Validate => {
            println!("ok\t{}", cfg.content_hash());
            Ok(())
        }
        ExperimentCmd::Run => {
            let out = require(&cli.out_dir, "--out-dir")?;
            let report = run_experiment(&cfg, out)?;
            for (stage, status) in &report.stages {
                let s = match status {
                    StageStatus::Ran => "ran",
                    StageStatus::Cached => "cached",
                    StageStatus::Skipped => "skipped",
                };
                println!("stage\t{stage}\t{s}");
            }
            for (k, v) in report
                .manifest
                .iter()
                .filter(|(k, _)| k.starts_with("metric."))
            {
                println!("{k}\t{v}");
            }
            Ok(())
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Pipeline(PipelineCmd::Run { input }) => cmd_pipeline(cli, input),
        Command::Tokenize(a) => cmd_tokenize(a),
        Command::Bpe(c) => cmd_bpe(c),
        Command::Embed(c) => cmd_embed(cli, c),
        Command::Umt(c) => cmd_umt(cli, c),
        Command::Translate(a) => cmd_translate(a),
        Command::Eval(c) => cmd_eval(c),
        Command::Experiment(c) => cmd_experiment(cli, c),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }
}
