use std::collections::HashMap;
use std::path::Path;

use super::bleu::{char_bleu_with, BleuOptions, BleuReport};
use crate::{Error, Result};

const BUNDLED: &str = include_str!("../../data/hk_s2t.tsv");

/// One-to-one character mapping; unmapped characters pass through.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConversionTable {
    map: HashMap<char, char>,
}

impl ConversionTable {
    /// Builds a table, rejecting duplicate sources, shared targets and
    /// targets that would themselves be rewritten.
    pub fn new(pairs: impl IntoIterator<Item = (char, char)>) -> Result<Self> {
        let mut map = HashMap::new();
        let mut inverse: HashMap<char, char> = HashMap::new();
        for (s, t) in pairs {
            if s == t {
                continue;
            }
            if map.insert(s, t).is_some() {
                return Err(Error::format(
                    "conversion table",
                    format!("`{s}` mapped twice"),
                ));
            }
            if let Some(prev) = inverse.insert(t, s) {
                return Err(Error::format(
                    "conversion table",
                    format!("`{prev}` and `{s}` both map to `{t}`"),
                ));
            }
        }
        if let Some(t) = inverse.keys().find(|t| map.contains_key(t)) {
            return Err(Error::format(
                "conversion table",
                format!("target `{t}` is also a source"),
            ));
        }
        Ok(ConversionTable { map })
    }

    /// Two-column text: `source<TAB>target` per line, `#` comments allowed.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut cols = line.split_whitespace();
            let (Some(a), Some(b), None) = (cols.next(), cols.next(), cols.next()) else {
                return Err(Error::format(
                    "conversion table",
                    format!("line {}: expected two columns", n + 1),
                ));
            };
            let single = |s: &str| {
                let mut c = s.chars();
                match (c.next(), c.next()) {
                    (Some(ch), None) => Ok(ch),
                    _ => Err(Error::format(
                        "conversion table",
                        format!("line {}: `{s}` is not one character", n + 1),
                    )),
                }
            };
            pairs.push((single(a)?, single(b)?));
        }
        Self::new(pairs)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// The small Hong Kong simplified-to-traditional table shipped with the crate.
    pub fn bundled() -> Self {
        Self::parse(BUNDLED).expect("bundled table is valid")
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn get(&self, c: char) -> char {
        self.map.get(&c).copied().unwrap_or(c)
    }
}

pub fn convert_charset(text: &str, table: &ConversionTable) -> String {
    text.chars().map(|c| table.get(c)).collect()
}

/// Scores the unconverted source against the reference after mapping both
/// to the same character set.
pub fn baseline_evaluate<S: AsRef<str>, R: AsRef<str>>(
    src: &[S],
    refs: &[R],
    table: &ConversionTable,
    opts: BleuOptions,
) -> Result<BleuReport> {
    if src.len() != refs.len() {
        return Err(Error::LengthMismatch {
            left: src.len(),
            right: refs.len(),
        });
    }
    let hyps: Vec<String> = src
        .iter()
        .map(|s| convert_charset(s.as_ref(), table))
        .collect();
    let refs: Vec<String> = refs
        .iter()
        .map(|s| convert_charset(s.as_ref(), table))
        .collect();
    char_bleu_with(&hyps, &refs, opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_examples() {
        let t = ConversionTable::bundled();
        assert!(t.len() > 500);
        assert_eq!(convert_charset("开", &t), "開");
        assert_eq!(convert_charset("话书", &t), "話書");
        assert_eq!(convert_charset("開話書", &t), "開話書");
    }

    #[test]
    fn idempotent() {
        let t = ConversionTable::bundled();
        let once = convert_charset("这是一本关于香港话的书", &t);
        assert_eq!(convert_charset(&once, &t), once);
    }

    #[test]
    fn rejects_bad_tables() {
        assert!(ConversionTable::parse("a\tb\nc\tb\n").is_err());
        assert!(ConversionTable::parse("a\tb\na\tc\n").is_err());
        assert!(ConversionTable::parse("a\tb\nb\tc\n").is_err());
        assert!(ConversionTable::parse("ab\tc\n").is_err());
        assert!(ConversionTable::parse("a\n").is_err());
    }

    #[test]
    fn baseline_closes_the_script_gap() {
        let t = ConversionTable::bundled();
        let src = ["我们说话", "开车回家"];
        let refs: Vec<String> = src.iter().map(|s| convert_charset(s, &t)).collect();
        let r = baseline_evaluate(&src, &refs, &t, BleuOptions::default()).unwrap();
        assert!((r.bleu - 100.0).abs() < 1e-9);
        assert!(baseline_evaluate(&src, &refs[..1], &t, BleuOptions::default()).is_err());
    }
}
