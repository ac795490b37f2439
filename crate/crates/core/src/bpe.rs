//! Byte-pair encoding over word-tokenized text.
//!
//! Each word starts as its character sequence with [`END_MARKER`] glued to
//! the last character; merges join the most frequent adjacent pair. Ties go
//! to the lexicographically smallest `(left, right)` pair, so learning is
//! fully deterministic.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap, HashSet};
use std::path::Path;

use crate::{Error, Result};

pub const END_MARKER: &str = "</w>";
pub const DEFAULT_NUM_MERGES: usize = 50_000;
const HEADER_PREFIX: &str = "#version: 1 canto-umt-bpe";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BpeMode {
    Joint,
    Separate,
}

impl std::str::FromStr for BpeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(BpeMode::Joint),
            "separate" => Ok(BpeMode::Separate),
            _ => Err(Error::InvalidArgument(format!(
                "unknown bpe mode `{s}` (joint|separate)"
            ))),
        }
    }
}

impl std::fmt::Display for BpeMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BpeMode::Joint => "joint",
            BpeMode::Separate => "separate",
        })
    }
}

/// Word frequencies of one corpus.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WordCounts(pub BTreeMap<String, u64>);

impl WordCounts {
    pub fn from_sentences<'a, I, S>(sentences: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: IntoIterator<Item = &'a String>,
    {
        let mut m = BTreeMap::new();
        for s in sentences {
            for w in s {
                *m.entry(w.clone()).or_insert(0) += 1;
            }
        }
        WordCounts(m)
    }

    pub fn merge(&mut self, other: &WordCounts) {
        for (w, c) in &other.0 {
            *self.0.entry(w.clone()).or_insert(0) += c;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergeTable {
    merges: Vec<(String, String)>,
    ranks: HashMap<(String, String), usize>,
    mode: BpeMode,
    end_marker: String,
}

impl MergeTable {
    pub fn new(merges: Vec<(String, String)>, mode: BpeMode) -> Result<Self> {
        let mut ranks = HashMap::with_capacity(merges.len());
        for (i, m) in merges.iter().enumerate() {
            if ranks.insert(m.clone(), i).is_some() {
                return Err(Error::format(
                    "merge table",
                    format!("duplicate merge `{} {}`", m.0, m.1),
                ));
            }
        }
        Ok(MergeTable {
            merges,
            ranks,
            mode,
            end_marker: END_MARKER.to_string(),
        })
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn len(&self) -> usize {
        self.merges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.merges.is_empty()
    }

    pub fn mode(&self) -> BpeMode {
        self.mode
    }

    pub fn end_marker(&self) -> &str {
        &self.end_marker
    }

    /// Version header line, then `left right` per merge in learned order.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{HEADER_PREFIX} mode={} end_marker={}\n",
            self.mode, self.end_marker
        );
        for (l, r) in &self.merges {
            s.push_str(l);
            s.push(' ');
            s.push_str(r);
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        let rest = header
            .strip_prefix(HEADER_PREFIX)
            .ok_or_else(|| Error::format("merges file", format!("bad header `{header}`")))?;
        let mut mode = None;
        let mut marker = None;
        for field in rest.split_whitespace() {
            match field.split_once('=') {
                Some(("mode", v)) => mode = Some(v.parse::<BpeMode>()?),
                Some(("end_marker", v)) => marker = Some(v.to_string()),
                _ => {
                    return Err(Error::format(
                        "merges file",
                        format!("bad header field `{field}`"),
                    ))
                }
            }
        }
        if marker.as_deref() != Some(END_MARKER) {
            return Err(Error::format("merges file", "unsupported end marker"));
        }
        let mode = mode.ok_or_else(|| Error::format("merges file", "header lacks mode"))?;
        let mut merges = Vec::new();
        for (n, line) in lines.enumerate() {
            let mut parts = line.split(' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(l), Some(r), None) if !l.is_empty() && !r.is_empty() => {
                    merges.push((l.to_string(), r.to_string()))
                }
                _ => {
                    return Err(Error::format(
                        "merges file",
                        format!("line {}: `{line}`", n + 2),
                    ))
                }
            }
        }
        MergeTable::new(merges, mode)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    /// Split one word into subwords.
    pub fn apply_word(&self, word: &str) -> Vec<String> {
        let mut syms = initial_symbols(word, &self.end_marker);
        loop {
            let best = syms
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0].clone(), w[1].clone())))
                .min()
                .copied();
            let Some(rank) = best else { break };
            let (l, r) = &self.merges[rank];
            syms = merge_pair(&syms, l, r);
        }
        syms
    }

    /// Apply to a word-tokenized sentence.
    pub fn apply(&self, words: &[String]) -> Vec<String> {
        words.iter().flat_map(|w| self.apply_word(w)).collect()
    }
}

pub(crate) fn initial_symbols(word: &str, marker: &str) -> Vec<String> {
    let mut syms: Vec<String> = word.chars().map(String::from).collect();
    if let Some(last) = syms.last_mut() {
        last.push_str(marker);
    }
    syms
}

fn merge_pair(syms: &[String], l: &str, r: &str) -> Vec<String> {
    let mut out = Vec::with_capacity(syms.len());
    let mut i = 0;
    while i < syms.len() {
        if i + 1 < syms.len() && syms[i] == l && syms[i + 1] == r {
            out.push(format!("{l}{r}"));
            i += 2;
        } else {
            out.push(syms[i].clone());
            i += 1;
        }
    }
    out
}

/// Rebuild words from subwords: a token carrying the end marker closes a word.
pub fn join_subwords(tokens: &[String], marker: &str) -> Result<String> {
    let mut out = String::new();
    let mut open = false;
    for t in tokens {
        match t.strip_suffix(marker) {
            Some(head) => {
                out.push_str(head);
                open = false;
            }
            None => {
                out.push_str(t);
                open = true;
            }
        }
    }
    if open {
        Err(Error::DanglingContinuation)
    } else {
        Ok(out)
    }
}

/// Learn merges. Joint mode sums pair counts over all corpora and returns one
/// table; separate mode returns one table per corpus.
pub fn learn_bpe(corpora: &[WordCounts], num_merges: usize, mode: BpeMode) -> Vec<MergeTable> {
    match mode {
        BpeMode::Joint => {
            let mut all = WordCounts::default();
            for c in corpora {
                all.merge(c);
            }
            vec![learn_one(&all, num_merges, mode)]
        }
        BpeMode::Separate => corpora
            .iter()
            .map(|c| learn_one(c, num_merges, mode))
            .collect(),
    }
}

type Pair = (u32, u32);

struct Symbols {
    strings: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Symbols {
    fn intern(&mut self, s: &str) -> u32 {
        if let Some(&id) = self.ids.get(s) {
            return id;
        }
        let id = self.strings.len() as u32;
        self.strings.push(s.to_string());
        self.ids.insert(s.to_string(), id);
        id
    }
}

#[derive(PartialEq, Eq, PartialOrd, Ord)]
struct HeapEntry {
    count: i64,
    // smallest strings win ties
    key: Reverse<(String, String)>,
    pair: Reverse<Pair>,
}

fn learn_one(counts: &WordCounts, num_merges: usize, mode: BpeMode) -> MergeTable {
    let mut syms = Symbols {
        strings: Vec::new(),
        ids: HashMap::new(),
    };
    let mut words: Vec<(Vec<u32>, i64)> = counts
        .0
        .iter()
        .filter(|(w, &c)| !w.is_empty() && c > 0)
        .map(|(w, &c)| {
            let s = initial_symbols(w, END_MARKER)
                .iter()
                .map(|x| syms.intern(x))
                .collect();
            (s, c as i64)
        })
        .collect();

    let mut pair_counts: HashMap<Pair, i64> = HashMap::new();
    let mut where_: HashMap<Pair, HashSet<usize>> = HashMap::new();
    for (wi, (s, c)) in words.iter().enumerate() {
        for p in s.windows(2) {
            let pair = (p[0], p[1]);
            *pair_counts.entry(pair).or_insert(0) += c;
            where_.entry(pair).or_default().insert(wi);
        }
    }
    let entry = |syms: &Symbols, pair: Pair, count: i64| HeapEntry {
        count,
        key: Reverse((
            syms.strings[pair.0 as usize].clone(),
            syms.strings[pair.1 as usize].clone(),
        )),
        pair: Reverse(pair),
    };
    let mut heap: BinaryHeap<HeapEntry> = pair_counts
        .iter()
        .map(|(&p, &c)| entry(&syms, p, c))
        .collect();

    let mut merges = Vec::new();
    while merges.len() < num_merges {
        let Some(top) = heap.pop() else { break };
        let pair = top.pair.0;
        let current = pair_counts.get(&pair).copied().unwrap_or(0);
        if current != top.count {
            continue;
        }
        if current <= 0 {
            break;
        }
        let (ls, rs) = top.key.0;
        let merged = syms.intern(&format!("{ls}{rs}"));
        merges.push((ls, rs));

        let mut affected: Vec<usize> = where_
            .remove(&pair)
            .unwrap_or_default()
            .into_iter()
            .collect();
        affected.sort_unstable();
        let mut touched: HashSet<Pair> = HashSet::new();
        for wi in affected {
            let (old, c) = &words[wi];
            let c = *c;
            if !old.windows(2).any(|w| (w[0], w[1]) == pair) {
                continue;
            }
            let mut new = Vec::with_capacity(old.len());
            let mut i = 0;
            while i < old.len() {
                if i + 1 < old.len() && (old[i], old[i + 1]) == pair {
                    new.push(merged);
                    i += 2;
                } else {
                    new.push(old[i]);
                    i += 1;
                }
            }
            for p in old.windows(2) {
                let p = (p[0], p[1]);
                *pair_counts.get_mut(&p).expect("counted pair") -= c;
                touched.insert(p);
            }
            for p in new.windows(2) {
                let p = (p[0], p[1]);
                *pair_counts.entry(p).or_insert(0) += c;
                where_.entry(p).or_default().insert(wi);
                touched.insert(p);
            }
            words[wi].0 = new;
        }
        let mut touched: Vec<Pair> = touched.into_iter().collect();
        touched.sort_unstable();
        for p in touched {
            let c = pair_counts[&p];
            if c > 0 {
                heap.push(entry(&syms, p, c));
            } else {
                pair_counts.remove(&p);
            }
        }
    }
    MergeTable::new(merges, mode).expect("learned merges are unique")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segment::{detokenize, Scheme, TokenizedSentence};

    fn counts(text: &str) -> WordCounts {
        let sents: Vec<Vec<String>> = text
            .lines()
            .map(|l| {
                l.split(' ')
                    .filter(|w| !w.is_empty())
                    .map(String::from)
                    .collect()
            })
            .collect();
        WordCounts::from_sentences(sents.iter())
    }

    fn pair(l: &str, r: &str) -> (String, String) {
        (l.to_string(), r.to_string())
    }

    #[test]
    fn single_hand_counted_merge() {
        let t = &learn_bpe(&[counts("低碳 低碳 低碳")], 1, BpeMode::Joint)[0];
        assert_eq!(t.merges(), [pair("低", "碳</w>")]);
        assert_eq!(t.apply_word("低碳"), ["低碳</w>"]);
    }

    #[test]
    fn empty_table_splits_characters() {
        let t = &learn_bpe(&[counts("低碳")], 0, BpeMode::Joint)[0];
        assert!(t.is_empty());
        assert_eq!(t.apply_word("朋友"), ["朋", "友</w>"]);
        assert_eq!(t.apply_word("嘅"), ["嘅</w>"]);
    }

    #[test]
    fn ties_break_lexicographically() {
        // ab and cd both occur twice; (a, b</w>) < (c, d</w>)
        let t = &learn_bpe(&[counts("cd ab cd ab")], 1, BpeMode::Joint)[0];
        assert_eq!(t.merges(), [pair("a", "b</w>")]);
    }

    #[test]
    fn joint_on_identical_equals_separate() {
        let c = counts("我哋 好 開心\n我哋 係 學生\n好 學生 好 開心 係");
        let joint = &learn_bpe(&[c.clone(), c.clone()], 20, BpeMode::Joint)[0];
        let sep = learn_bpe(&[c.clone(), c], 20, BpeMode::Separate);
        assert_eq!(sep.len(), 2);
        assert_eq!(joint.merges(), sep[0].merges());
        assert_eq!(sep[0].merges(), sep[1].merges());
    }

    #[test]
    fn detokenize_round_trip() {
        let t = &learn_bpe(&[counts("朋友 朋友 我哋")], 3, BpeMode::Joint)[0];
        let words: Vec<String> = vec!["朋友".into(), "我哋".into(), "meeting".into()];
        let sub = TokenizedSentence {
            tokens: t.apply(&words),
            scheme: Scheme::Bpe,
        };
        assert_eq!(detokenize(&sub).unwrap(), "朋友我哋meeting");
    }

    #[test]
    fn dangling_continuation() {
        let toks = vec!["朋".to_string()];
        assert!(matches!(
            join_subwords(&toks, END_MARKER),
            Err(Error::DanglingContinuation)
        ));
    }

    #[test]
    fn merges_file_round_trip() {
        let t = &learn_bpe(&[counts("朋友 朋友 我哋 low lower")], 5, BpeMode::Separate)[0];
        let back = MergeTable::from_text(&t.to_text()).unwrap();
        assert_eq!(&back, t);
        assert!(MergeTable::from_text("a b\n").is_err());
        let dup = format!("{HEADER_PREFIX} mode=joint end_marker=</w>\na b\na b\n");
        assert!(MergeTable::from_text(&dup).is_err());
    }
}
