//! Token ↔ id maps with frequency counts and reserved special tokens.

use std::collections::HashMap;
use std::path::Path;

use crate::hash::sha256_hex;
use crate::{Error, Lang, Result};

pub const PAD: &str = "<PAD>";
pub const UNK: &str = "<UNK>";
pub const EOS: &str = "<EOS>";
pub const BOS_L1: &str = "<BOS_L1>";
pub const BOS_L2: &str = "<BOS_L2>";

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const EOS_ID: u32 = 2;
pub const NUM_RESERVED: usize = 5;

const RESERVED: [&str; NUM_RESERVED] = [PAD, UNK, EOS, BOS_L1, BOS_L2];

pub fn bos_id(lang: Lang) -> u32 {
    3 + lang.index() as u32
}

pub fn is_special(id: u32) -> bool {
    (id as usize) < NUM_RESERVED
}

/// Bijective token/id map. Reserved ids `0..NUM_RESERVED` come first; learned
/// tokens follow by descending frequency, ties in lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub fn build<'a, I>(tokens: I, min_count: u64) -> Self
    where
        I: IntoIterator<Item = &'a String>,
    {
        let mut freq: HashMap<&str, u64> = HashMap::new();
        for t in tokens {
            *freq.entry(t.as_str()).or_insert(0) += 1;
        }
        let mut learned: Vec<(&str, u64)> = freq
            .into_iter()
            .filter(|(t, c)| *c >= min_count && !RESERVED.contains(t))
            .collect();
        learned.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        Self::from_entries(
            RESERVED
                .iter()
                .map(|t| (t.to_string(), 0))
                .chain(learned.into_iter().map(|(t, c)| (t.to_string(), c))),
        )
        .expect("built vocab is bijective")
    }

    fn from_entries(entries: impl IntoIterator<Item = (String, u64)>) -> Result<Self> {
        let mut v = Vocab {
            tokens: Vec::new(),
            counts: Vec::new(),
            index: HashMap::new(),
        };
        for (t, c) in entries {
            if v.index.insert(t.clone(), v.tokens.len() as u32).is_some() {
                return Err(Error::format("vocab", format!("duplicate token `{t}`")));
            }
            v.tokens.push(t);
            v.counts.push(c);
        }
        for (i, r) in RESERVED.iter().enumerate() {
            if v.tokens.get(i).map(String::as_str) != Some(*r) {
                return Err(Error::format(
                    "vocab",
                    format!("reserved token {r} missing at id {i}"),
                ));
            }
        }
        Ok(v)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    /// Number of learned (non-reserved) tokens.
    pub fn learned_len(&self) -> usize {
        self.tokens.len() - NUM_RESERVED
    }

    pub fn is_empty(&self) -> bool {
        self.learned_len() == 0
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn count(&self, id: u32) -> u64 {
        self.counts[id as usize]
    }

    /// Learned tokens with their ids.
    pub fn learned(&self) -> impl Iterator<Item = (u32, &str)> {
        self.tokens
            .iter()
            .enumerate()
            .skip(NUM_RESERVED)
            .map(|(i, t)| (i as u32, t.as_str()))
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<u32> {
        tokens
            .iter()
            .map(|t| self.id(t).unwrap_or(UNK_ID))
            .collect()
    }

    /// Map ids back to tokens, dropping PAD/EOS/BOS but keeping `<UNK>`.
    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter()
            .filter(|&&i| i == UNK_ID || !is_special(i))
            .map(|&i| self.token(i).to_string())
            .collect()
    }

    /// `token<TAB>count` per line, in id order.
    pub fn to_text(&self) -> String {
        self.tokens
            .iter()
            .zip(&self.counts)
            .map(|(t, c)| format!("{t}\t{c}\n"))
            .collect()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let (t, c) = line
                .split_once('\t')
                .ok_or_else(|| Error::format("vocab", format!("line {}: missing tab", n + 1)))?;
            let c = c
                .parse()
                .map_err(|_| Error::format("vocab", format!("line {}: bad count `{c}`", n + 1)))?;
            entries.push((t.to_string(), c));
        }
        Self::from_entries(entries)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn content_hash(&self) -> String {
        sha256_hex(self.to_text().as_bytes())
    }
}
