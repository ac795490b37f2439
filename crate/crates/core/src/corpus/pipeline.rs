//! File-level driver for the corpus filters.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::classify::{classify_text, foreign_filter_text};
use super::noise::strip_noise_text;
use super::{cut_text, length_bucket, FilterDecision, LanguageLabel, Sentence, BUCKET_WIDTH};
use crate::kv::{FieldReader, KvFile};
use crate::{Error, Result};

/// Labels that get an output file. Foreign sentences are dropped.
pub const OUTPUT_LABELS: [LanguageLabel; 3] = [
    LanguageLabel::Cantonese,
    LanguageLabel::Mandarin,
    LanguageLabel::Ambiguous,
];

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PipelineConfig {
    /// When set, also write `<label>.balanced.txt`: the label's sentences
    /// downsampled to `balance_target` with the run seed.
    pub balance_label: Option<LanguageLabel>,
    pub balance_target: Option<usize>,
}

impl PipelineConfig {
    pub fn from_kv(kv: &KvFile) -> Result<Self> {
        let mut r = FieldReader::new(kv);
        let cfg = PipelineConfig {
            balance_label: r.opt("balance_label"),
            balance_target: r.opt("balance_target"),
        };
        if cfg.balance_label.is_some() != cfg.balance_target.is_some() {
            r.issue(
                "balance_target",
                "balance_label and balance_target go together",
            );
        }
        r.finish()?;
        Ok(cfg)
    }
}

/// Stage counters. Every field is a sum, so merging is associative and
/// commutative.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PipelineStats {
    pub input_lines: u64,
    pub invalid_utf8_lines: u64,
    pub cut: u64,
    pub noise_stripped: u64,
    pub dropped_empty: u64,
    pub dropped_foreign: u64,
    pub retained: u64,
    pub per_label: BTreeMap<LanguageLabel, u64>,
    /// bucket lower bound (characters) → retained sentence count
    pub length_histogram: BTreeMap<usize, u64>,
}

impl PipelineStats {
    pub fn merge(&mut self, other: &PipelineStats) {
        self.input_lines += other.input_lines;
        self.invalid_utf8_lines += other.invalid_utf8_lines;
        self.cut += other.cut;
        self.noise_stripped += other.noise_stripped;
        self.dropped_empty += other.dropped_empty;
        self.dropped_foreign += other.dropped_foreign;
        self.retained += other.retained;
        for (k, v) in &other.per_label {
            *self.per_label.entry(*k).or_default() += v;
        }
        for (k, v) in &other.length_histogram {
            *self.length_histogram.entry(*k).or_default() += v;
        }
    }

    pub fn label_count(&self, label: LanguageLabel) -> u64 {
        self.per_label.get(&label).copied().unwrap_or(0)
    }

    /// `key: value` lines followed by a `bucket_low<TAB>count` table.
    pub fn to_report(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "input_lines: {}", self.input_lines);
        let _ = writeln!(s, "invalid_utf8_lines: {}", self.invalid_utf8_lines);
        let _ = writeln!(s, "cut: {}", self.cut);
        let _ = writeln!(s, "noise_stripped: {}", self.noise_stripped);
        let _ = writeln!(s, "dropped_empty: {}", self.dropped_empty);
        let _ = writeln!(s, "dropped_foreign: {}", self.dropped_foreign);
        let _ = writeln!(s, "retained: {}", self.retained);
        for label in OUTPUT_LABELS {
            let _ = writeln!(s, "{}: {}", label, self.label_count(label));
        }
        s.push_str("\nbucket_low\tcount\n");
        for (low, count) in &self.length_histogram {
            let _ = writeln!(s, "{low}\t{count}");
        }
        s
    }
}

#[derive(Debug, Clone, Default)]
pub struct PipelineOutput {
    /// Retained sentences in input order, labeled.
    pub sentences: Vec<Sentence>,
    pub stats: PipelineStats,
}

impl PipelineOutput {
    pub fn with_label(&self, label: LanguageLabel) -> impl Iterator<Item = &Sentence> {
        self.sentences
            .iter()
            .filter(move |s| s.label == Some(label))
    }
}

/// Run cut → strip → foreign filter → classify over one text line.
fn process_line(source_id: &str, line: &str, out: &mut PipelineOutput) {
    for piece in cut_text(line) {
        out.stats.cut += 1;
        let stripped = strip_noise_text(&piece);
        if stripped.is_empty() {
            out.stats.dropped_empty += 1;
            continue;
        }
        // Removing noise can expose a `.` before whitespace; re-cutting keeps
        // the pipeline idempotent on its own output.
        for text in cut_text(&stripped) {
            out.stats.noise_stripped += 1;
            if foreign_filter_text(&text) == FilterDecision::Drop {
                out.stats.dropped_foreign += 1;
                continue;
            }
            let label = classify_text(&text);
            out.stats.retained += 1;
            *out.stats.per_label.entry(label).or_default() += 1;
            let low = length_bucket(text.chars().count()) * BUCKET_WIDTH;
            *out.stats.length_histogram.entry(low).or_default() += 1;
            out.sentences.push(Sentence {
                text,
                source_id: source_id.to_string(),
                label: Some(label),
            });
        }
    }
}

/// Process raw bytes of one input file. Lines that are not valid UTF-8 are
/// dropped and counted.
pub fn process_bytes(name: &str, bytes: &[u8], out: &mut PipelineOutput) {
    if bytes.is_empty() {
        return;
    }
    let body = bytes.strip_suffix(b"\n").unwrap_or(bytes);
    for (n, line) in body.split(|&b| b == b'\n').enumerate() {
        out.stats.input_lines += 1;
        match std::str::from_utf8(line) {
            Ok(text) => process_line(&format!("{name}:{}", n + 1), text, out),
            Err(_) => out.stats.invalid_utf8_lines += 1,
        }
    }
}

pub fn process_str(name: &str, text: &str) -> PipelineOutput {
    let mut out = PipelineOutput::default();
    process_bytes(name, text.as_bytes(), &mut out);
    out
}

/// Expand a glob pattern into a sorted path list. A pattern with no glob
/// metacharacters is returned as-is.
pub fn expand_inputs(pattern: &str) -> Result<Vec<PathBuf>> {
    let paths = glob::glob(pattern)
        .map_err(|e| Error::InvalidArgument(format!("bad glob `{pattern}`: {e}")))?;
    let mut out = Vec::new();
    for p in paths {
        out.push(p.map_err(|e| Error::io(e.path().to_path_buf(), e.into()))?);
    }
    if out.is_empty() && !pattern.contains(['*', '?', '[']) {
        out.push(PathBuf::from(pattern));
    }
    out.sort();
    Ok(out)
}

pub fn process_files(inputs: &[PathBuf]) -> Result<PipelineOutput> {
    let mut out = PipelineOutput::default();
    for path in inputs {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        process_bytes(&path.display().to_string(), &bytes, &mut out);
    }
    Ok(out)
}

pub fn write_lines<'a>(path: &Path, lines: impl IntoIterator<Item = &'a str>) -> Result<()> {
    let mut s = String::new();
    for l in lines {
        s.push_str(l);
        s.push('\n');
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Read inputs, filter, and write `<label>.txt` per output label plus
/// `stats.txt` into `out_dir`.
pub fn run_pipeline(
    config: &PipelineConfig,
    inputs: &[PathBuf],
    out_dir: &Path,
    seed: u64,
) -> Result<PipelineStats> {
    let out = process_files(inputs)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    for label in OUTPUT_LABELS {
        let path = out_dir.join(format!("{label}.txt"));
        write_lines(&path, out.with_label(label).map(|s| s.text.as_str()))?;
    }
    if let (Some(label), Some(target)) = (config.balance_label, config.balance_target) {
        let subset: Vec<Sentence> = out.with_label(label).cloned().collect();
        let sampled = super::downsample_balanced(&subset, target, seed)?;
        let path = out_dir.join(format!("{label}.balanced.txt"));
        write_lines(&path, sampled.iter().map(|s| s.text.as_str()))?;
    }
    let stats_path = out_dir.join("stats.txt");
    std::fs::write(&stats_path, out.stats.to_report()).map_err(|e| Error::io(&stats_path, e))?;
    Ok(out.stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_line_fixture() {
        let text = "我哋今朝有個meeting。\n佢唔係學生\n他是我的朋友\n她在看書。\nПривет как дела\n#tag 😀\n";
        let out = process_str("fx", text);
        let s = &out.stats;
        assert_eq!(s.input_lines, 6);
        assert_eq!(s.cut, 6);
        assert_eq!(s.dropped_empty, 1);
        assert_eq!(s.dropped_foreign, 1);
        assert_eq!(s.retained, 4);
        assert_eq!(s.label_count(LanguageLabel::Cantonese), 2);
        assert_eq!(s.label_count(LanguageLabel::Mandarin), 2);
        assert_eq!(s.length_histogram.values().sum::<u64>(), 4);
    }

    #[test]
    fn invalid_utf8_lines_are_counted() {
        let mut out = PipelineOutput::default();
        process_bytes("b", b"\xe4\xbd\xa0\xe5\xa5\xbd\n\xff\xfe\n", &mut out);
        assert_eq!(out.stats.input_lines, 2);
        assert_eq!(out.stats.invalid_utf8_lines, 1);
        assert_eq!(out.sentences.len(), 1);
    }

    #[test]
    fn strip_then_recut() {
        let out = process_str("x", "好.#tag 呀");
        let texts: Vec<&str> = out.sentences.iter().map(|s| s.text.as_str()).collect();
        assert_eq!(texts, ["好.", "呀"]);
    }

    #[test]
    fn stats_merge_is_commutative() {
        let a = process_str("a", "佢係我朋友。\n他是。").stats;
        let b = process_str("b", "abc\n三項發明").stats;
        let mut ab = a.clone();
        ab.merge(&b);
        let mut ba = b.clone();
        ba.merge(&a);
        assert_eq!(ab, ba);
        assert_eq!(
            ab,
            process_str("c", "佢係我朋友。\n他是。\nabc\n三項發明").stats
        );
    }

    #[test]
    fn config_keys() {
        let kv = KvFile::parse("balance_label = mandarin\nbalance_target = 10\n").unwrap();
        let c = PipelineConfig::from_kv(&kv).unwrap();
        assert_eq!(c.balance_label, Some(LanguageLabel::Mandarin));
        assert!(PipelineConfig::from_kv(&KvFile::parse("bogus = 1").unwrap()).is_err());
        assert!(PipelineConfig::from_kv(&KvFile::parse("balance_target = 1").unwrap()).is_err());
    }
}
