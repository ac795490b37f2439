use std::collections::HashMap;

use crate::kv::KvFile;
use crate::segment::char_tokenize;
use crate::{Error, Result};

pub const MAX_ORDER: usize = 4;

/// Corpus-level character BLEU-4.
#[derive(Debug, Clone, PartialEq)]
pub struct BleuReport {
    /// 0 to 100.
    pub bleu: f64,
    /// Precisions after smoothing, order 1 to 4.
    pub precisions: [f64; MAX_ORDER],
    pub matches: [u64; MAX_ORDER],
    pub totals: [u64; MAX_ORDER],
    pub brevity_penalty: f64,
    pub hyp_len: u64,
    pub ref_len: u64,
}

impl BleuReport {
    /// `key<TAB>value` lines.
    pub fn to_tsv(&self) -> String {
        let mut out = format!("bleu\t{:.6}\n", self.bleu);
        for n in 0..MAX_ORDER {
            out.push_str(&format!("p{}\t{:.6}\n", n + 1, self.precisions[n]));
        }
        for n in 0..MAX_ORDER {
            out.push_str(&format!(
                "matches{}\t{}\ntotal{}\t{}\n",
                n + 1,
                self.matches[n],
                n + 1,
                self.totals[n]
            ));
        }
        out.push_str(&format!(
            "brevity_penalty\t{:.6}\nhyp_len\t{}\nref_len\t{}\n",
            self.brevity_penalty, self.hyp_len, self.ref_len
        ));
        out
    }

    pub fn to_kv(&self) -> KvFile {
        let mut kv = KvFile::default();
        for line in self.to_tsv().lines() {
            if let Some((k, v)) = line.split_once('\t') {
                kv.set(k, v);
            }
        }
        kv
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BleuOptions {
    /// Drop punctuation and symbol characters before scoring.
    pub strip_punct: bool,
}

fn is_punct(token: &str) -> bool {
    let mut chars = token.chars();
    matches!((chars.next(), chars.next()), (Some(c), None) if !c.is_alphanumeric())
}

fn tokens(text: &str, opts: BleuOptions) -> Vec<String> {
    let mut t = char_tokenize(text).tokens;
    if opts.strip_punct {
        t.retain(|x| !is_punct(x));
    }
    t
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], u64> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

pub fn char_bleu<H: AsRef<str>, R: AsRef<str>>(hyps: &[H], refs: &[R]) -> Result<BleuReport> {
    char_bleu_with(hyps, refs, BleuOptions::default())
}

pub fn char_bleu_with<H: AsRef<str>, R: AsRef<str>>(
    hyps: &[H],
    refs: &[R],
    opts: BleuOptions,
) -> Result<BleuReport> {
    if hyps.len() != refs.len() {
        return Err(Error::LengthMismatch {
            left: hyps.len(),
            right: refs.len(),
        });
    }
    if hyps.is_empty() {
        return Err(Error::InvalidArgument(
            "BLEU needs at least one sentence".into(),
        ));
    }
    let mut matches = [0u64; MAX_ORDER];
    let mut totals = [0u64; MAX_ORDER];
    let mut hyp_len = 0u64;
    let mut ref_len = 0u64;
    for (i, (h, r)) in hyps.iter().zip(refs).enumerate() {
        let h = tokens(h.as_ref(), opts);
        let r = tokens(r.as_ref(), opts);
        if r.is_empty() {
            return Err(Error::EmptyReference(i));
        }
        hyp_len += h.len() as u64;
        ref_len += r.len() as u64;
        for n in 1..=MAX_ORDER {
            let hc = ngram_counts(&h, n);
            let rc = ngram_counts(&r, n);
            for (g, c) in &hc {
                matches[n - 1] += (*c).min(rc.get(g).copied().unwrap_or(0));
            }
            totals[n - 1] += h.len().saturating_sub(n - 1) as u64;
        }
    }
    let mut precisions = [0.0; MAX_ORDER];
    for n in 0..MAX_ORDER {
        precisions[n] = if n > 0 && matches[n] == 0 {
            1.0 / (totals[n] + 1) as f64
        } else if totals[n] == 0 {
            0.0
        } else {
            matches[n] as f64 / totals[n] as f64
        };
    }
    let brevity_penalty = if hyp_len == 0 {
        0.0
    } else if hyp_len < ref_len {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    } else {
        1.0
    };
    let bleu = if precisions.contains(&0.0) {
        0.0
    } else {
        let log_mean = precisions.iter().map(|p| p.ln()).sum::<f64>() / MAX_ORDER as f64;
        100.0 * brevity_penalty * log_mean.exp()
    };
    Ok(BleuReport {
        bleu,
        precisions,
        matches,
        totals,
        brevity_penalty,
        hyp_len,
        ref_len,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_is_100() {
        let r = char_bleu(
            &["我哋好開心呀", "今日天氣好好"],
            &["我哋好開心呀", "今日天氣好好"],
        )
        .unwrap();
        assert!((r.bleu - 100.0).abs() < 1e-9);
    }

    #[test]
    fn disjoint_is_0() {
        let r = char_bleu(&["甲乙丙丁"], &["子丑寅卯"]).unwrap();
        assert_eq!(r.bleu, 0.0);
    }

    #[test]
    fn hand_computed_example() {
        let r = char_bleu(&["我哋好"], &["我哋好開心"]).unwrap();
        assert_eq!(r.matches, [3, 2, 1, 0]);
        assert_eq!(r.totals, [3, 2, 1, 0]);
        assert_eq!(r.precisions[3], 1.0);
        assert!((r.brevity_penalty - (1.0f64 - 5.0 / 3.0).exp()).abs() < 1e-12);
        assert!((r.bleu - 51.3417119032592).abs() < 1e-6);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            char_bleu(&["a"], &["a", "b"]),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(matches!(
            char_bleu(&["a"], &[""]),
            Err(Error::EmptyReference(0))
        ));
        assert!(char_bleu::<&str, &str>(&[], &[]).is_err());
    }

    #[test]
    fn punctuation_switch() {
        let plain = char_bleu(&["你好"], &["你好！"]).unwrap();
        let stripped =
            char_bleu_with(&["你好"], &["你好！"], BleuOptions { strip_punct: true }).unwrap();
        assert!(plain.bleu < stripped.bleu);
        assert_eq!(stripped.ref_len, 2);
    }

    #[test]
    fn report_lines() {
        let r = char_bleu(&["我哋好"], &["我哋好開心"]).unwrap();
        let tsv = r.to_tsv();
        assert!(tsv.starts_with("bleu\t51.341712\n"));
        assert_eq!(r.to_kv().get("ref_len"), Some("5"));
    }
}
