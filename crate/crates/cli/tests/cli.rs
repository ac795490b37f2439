use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use canto_umt::synth::dialect_corpus;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_canto-umt"));
    c.env("RUST_LOG", "warn");
    for k in ["CANTO_UMT_CONFIG", "CANTO_UMT_SEED", "CANTO_UMT_OUT_DIR"] {
        c.env_remove(k);
    }
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn")
}

fn run_stdin(args: &[&str], input: &str) -> Output {
    let mut child = bin()
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(input.as_bytes())
        .unwrap();
    child.wait_with_output().unwrap()
}

fn ok(o: &Output) -> String {
    assert!(
        o.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn tokenize_char_from_stdin() {
    let out = ok(&run_stdin(&["tokenize", "--scheme", "char"], "佢哋喺度\n"));
    assert_eq!(out, "佢 哋 喺 度\n");
}

#[test]
fn bleu_of_identical_files_is_100() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("a.txt");
    std::fs::write(&f, "我哋去食飯\n你好嗎\n").unwrap();
    let out = ok(&run(&["eval", "bleu", "--hyp", p(&f), "--ref", p(&f)]));
    assert!(out.starts_with("bleu\t100.000000\n"), "{out}");
}

#[test]
fn missing_file_exits_with_io_code() {
    let o = run(&[
        "eval",
        "bleu",
        "--hyp",
        "/nonexistent/h",
        "--ref",
        "/nonexistent/r",
    ]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn bad_config_key_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.cfg");
    std::fs::write(&cfg, "pipeline.input = raw.txt\nnot.a.key = 1\n").unwrap();
    let o = run(&["experiment", "validate", "--config", p(&cfg)]);
    assert_eq!(
        o.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
}

#[test]
fn pipeline_writes_routed_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw.txt");
    std::fs::write(&raw, "佢哋喺度食緊飯\n他們在吃飯\nhello world\n").unwrap();
    let out = dir.path().join("out");
    let report = ok(&run(&[
        "pipeline",
        "run",
        "--in",
        p(&raw),
        "--out-dir",
        p(&out),
        "--seed",
        "3",
    ]));
    assert!(!report.is_empty());
    assert!(out.join("stats.txt").exists());
}

#[test]
fn bpe_learn_then_apply() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c.tok");
    std::fs::write(&corpus, "低 低 低 低 低\n最低 最低\n新 新 新 寬 寬\n").unwrap();
    let merges = dir.path().join("m.txt");
    ok(&run(&[
        "bpe",
        "learn",
        "--in",
        p(&corpus),
        "--merges-out",
        p(&merges),
        "--num-merges",
        "3",
    ]));
    assert!(std::fs::read_to_string(&merges).unwrap().lines().count() >= 1);
    let out = ok(&run_stdin(
        &["bpe", "apply", "--merges", p(&merges)],
        "最低\n",
    ));
    assert_eq!(out.lines().count(), 1);
}

#[test]
fn train_translate_resume_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dialect_corpus(60, 5, 2).unwrap();
    let tokenize = |lines: &[String]| -> String {
        lines
            .iter()
            .map(|s| s.chars().map(String::from).collect::<Vec<_>>().join(" ") + "\n")
            .collect()
    };
    let l1 = dir.path().join("l1.tok");
    let l2 = dir.path().join("l2.tok");
    std::fs::write(&l1, tokenize(&data.l1_train)).unwrap();
    std::fs::write(&l2, tokenize(&data.l2_train)).unwrap();
    let cfg = dir.path().join("umt.cfg");
    std::fs::write(
        &cfg,
        "model.variant = transformer\nmodel.d_model = 8\nmodel.heads = 2\nmodel.ffn_dim = 16\n\
         model.d_emb = 8\nmodel.layers = 2\nmodel.shared_decoder_layers = 1\nmodel.shared_encoder_layers = 2\nmodel.max_len = 40\n\
         train.steps = 6\ntrain.batch_size = 2\ntrain.checkpoint_every = 3\n",
    )
    .unwrap();
    let out = dir.path().join("run");
    let summary = ok(&run(&[
        "umt",
        "train",
        "--config",
        p(&cfg),
        "--l1",
        p(&l1),
        "--l2",
        p(&l2),
        "--out",
        p(&out),
        "--seed",
        "4",
    ]));
    assert!(summary.contains("steps\t6"), "{summary}");
    let metrics = std::fs::read_to_string(out.join("metrics.tsv")).unwrap();
    assert_eq!(metrics.lines().count(), 6);

    let ckpt = out.join("latest.ckpt");
    let hyp = ok(&run_stdin(
        &[
            "translate",
            "--model",
            p(&ckpt),
            "--src-lang",
            "l1",
            "--max-len",
            "10",
        ],
        &format!("{}\n{}\n", data.test_l1[0], data.test_l1[1]),
    ));
    assert_eq!(hyp.lines().count(), 2);

    // resuming from the midpoint rewrites the tail of the log identically
    let mid = out.join("checkpoint-00000003.ckpt");
    ok(&run(&["umt", "resume", "--checkpoint", p(&mid)]));
    assert_eq!(
        std::fs::read_to_string(out.join("metrics.tsv")).unwrap(),
        metrics
    );

    // a corpus edit after training is caught on resume
    std::fs::write(&l2, tokenize(&data.l2_train[1..])).unwrap();
    let o = run(&["umt", "resume", "--checkpoint", p(&mid)]);
    assert_eq!(
        o.status.code(),
        Some(6),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
}
