//! Character-level and dictionary word-level tokenization.
//!
//! Character tokenization splits every CJK ideograph into its own token but
//! keeps runs of letters (code-switched English, e.g. `meeting`) and runs of
//! digits whole. Word tokenization is greedy forward maximum matching over
//! those character units.

use std::collections::HashSet;
use std::path::Path;

use crate::corpus::is_cjk_ideograph;
use crate::{bpe, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    Char,
    Word,
    Bpe,
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "char" => Ok(Scheme::Char),
            "word" => Ok(Scheme::Word),
            "bpe" => Ok(Scheme::Bpe),
            _ => Err(Error::InvalidArgument(format!(
                "unknown scheme `{s}` (char|word|bpe)"
            ))),
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scheme::Char => "char",
            Scheme::Word => "word",
            Scheme::Bpe => "bpe",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedSentence {
    pub tokens: Vec<String>,
    pub scheme: Scheme,
}

impl TokenizedSentence {
    /// Space-separated form used in tokenized corpus files.
    pub fn to_line(&self) -> String {
        self.tokens.join(" ")
    }

    pub fn from_line(line: &str, scheme: Scheme) -> Self {
        TokenizedSentence {
            tokens: line
                .split(' ')
                .filter(|t| !t.is_empty())
                .map(str::to_string)
                .collect(),
            scheme,
        }
    }
}

/// Word list for maximum matching. Single CJK characters need not be listed;
/// they are always available as fallback.
#[derive(Debug, Clone, Default)]
pub struct Lexicon {
    entries: HashSet<String>,
    max_entry_len: usize,
}

impl Lexicon {
    pub fn new<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut entries = HashSet::new();
        let mut max_entry_len = 1;
        for w in words {
            let w: String = w.into();
            let w = w.trim();
            if w.is_empty() || w.contains(char::is_whitespace) {
                continue;
            }
            max_entry_len = max_entry_len.max(w.chars().count());
            entries.insert(w.to_string());
        }
        Lexicon {
            entries,
            max_entry_len,
        }
    }

    /// One entry per line.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::new(text.lines()))
    }

    pub fn contains(&self, word: &str) -> bool {
        self.entries.contains(word)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn max_entry_len(&self) -> usize {
        self.max_entry_len
    }
}

#[derive(PartialEq, Eq, Clone, Copy)]
enum Class {
    Space,
    Letter,
    Digit,
    Single,
}

fn classify(c: char) -> Class {
    if c.is_whitespace() {
        Class::Space
    } else if is_cjk_ideograph(c) {
        Class::Single
    } else if c.is_ascii_digit() || ('０'..='９').contains(&c) {
        Class::Digit
    } else if c.is_alphabetic() {
        Class::Letter
    } else {
        Class::Single
    }
}

fn char_units(text: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let mut prev = Class::Space;
    for c in text.chars() {
        let class = classify(c);
        match class {
            Class::Space => {}
            Class::Letter | Class::Digit if class == prev => {
                out.last_mut().expect("run continues a token").push(c)
            }
            _ => out.push(c.to_string()),
        }
        prev = class;
    }
    out
}

pub fn char_tokenize(text: &str) -> TokenizedSentence {
    TokenizedSentence {
        tokens: char_units(text),
        scheme: Scheme::Char,
    }
}

/// Greedy forward maximum matching: at each position take the longest
/// lexicon entry (at most `max_entry_len` characters) built from consecutive
/// character units, else emit one unit.
pub fn word_tokenize(text: &str, lex: &Lexicon) -> TokenizedSentence {
    let units = char_units(text);
    let mut tokens = Vec::with_capacity(units.len());
    let mut i = 0;
    while i < units.len() {
        let mut best = i + 1;
        let mut span = String::new();
        let mut span_len = 0;
        for (j, u) in units.iter().enumerate().skip(i) {
            span.push_str(u);
            span_len += u.chars().count();
            if span_len > lex.max_entry_len() {
                break;
            }
            if j > i && lex.contains(&span) {
                best = j + 1;
            }
        }
        tokens.push(units[i..best].concat());
        i = best;
    }
    TokenizedSentence {
        tokens,
        scheme: Scheme::Word,
    }
}

/// Inverse of tokenization. Whitespace from the original text is not
/// restored.
pub fn detokenize(t: &TokenizedSentence) -> Result<String> {
    match t.scheme {
        Scheme::Char | Scheme::Word => Ok(t.tokens.concat()),
        Scheme::Bpe => bpe::join_subwords(&t.tokens, bpe::END_MARKER),
    }
}

/// A complete tokenization setup for one language.
#[derive(Debug, Clone)]
pub enum Tokenizer {
    Char,
    Word(Lexicon),
    /// Subwords learned over the word segmentation.
    Bpe(Lexicon, bpe::MergeTable),
}

impl Tokenizer {
    pub fn scheme(&self) -> Scheme {
        match self {
            Tokenizer::Char => Scheme::Char,
            Tokenizer::Word(_) => Scheme::Word,
            Tokenizer::Bpe(..) => Scheme::Bpe,
        }
    }

    pub fn tokenize(&self, text: &str) -> TokenizedSentence {
        match self {
            Tokenizer::Char => char_tokenize(text),
            Tokenizer::Word(lex) => word_tokenize(text, lex),
            Tokenizer::Bpe(lex, table) => TokenizedSentence {
                tokens: table.apply(&word_tokenize(text, lex).tokens),
                scheme: Scheme::Bpe,
            },
        }
    }

    /// Like [`detokenize`] but never fails: an unterminated final subword is
    /// closed, and stray markers are dropped. Meant for model output.
    pub fn detokenize_lossy(&self, tokens: &[String]) -> String {
        match self {
            Tokenizer::Bpe(..) => tokens
                .iter()
                .map(|t| t.strip_suffix(bpe::END_MARKER).unwrap_or(t))
                .collect(),
            _ => tokens.concat(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(t: &TokenizedSentence) -> Vec<&str> {
        t.tokens.iter().map(String::as_str).collect()
    }

    #[test]
    fn char_scheme_keeps_runs() {
        let t = char_tokenize("我哋今朝9點有個meeting。");
        assert_eq!(
            toks(&t),
            ["我", "哋", "今", "朝", "9", "點", "有", "個", "meeting", "。"]
        );
        assert_eq!(toks(&char_tokenize("a")), ["a"]);
        assert_eq!(toks(&char_tokenize("開open開")), ["開", "open", "開"]);
        assert_eq!(
            toks(&char_tokenize("2022年 hello world!")),
            ["2022", "年", "hello", "world", "!"]
        );
        assert_eq!(toks(&char_tokenize("ab12cd")), ["ab", "12", "cd"]);
    }

    #[test]
    fn maximum_matching() {
        let lex = Lexicon::new(["朋友"]);
        assert_eq!(toks(&word_tokenize("我的朋友", &lex)), ["我", "的", "朋友"]);
        let lex = Lexicon::new(["中意", "意思"]);
        assert_eq!(toks(&word_tokenize("中意思", &lex)), ["中意", "思"]);
        let lex = Lexicon::new(["有個", "有個meeting"]);
        assert_eq!(
            toks(&word_tokenize("有個meeting。", &lex)),
            ["有個meeting", "。"]
        );
    }

    #[test]
    fn empty_lexicon_falls_back_to_characters() {
        let lex = Lexicon::default();
        let s = "佢哋hello 123好";
        assert_eq!(word_tokenize(s, &lex).tokens, char_tokenize(s).tokens);
    }

    #[test]
    fn detokenize_concatenates() {
        let t = TokenizedSentence {
            tokens: vec!["我".into(), "哋".into()],
            scheme: Scheme::Char,
        };
        assert_eq!(detokenize(&t).unwrap(), "我哋");
    }

    #[test]
    fn tokenizer_dispatch() {
        let lex = Lexicon::new(["朋友"]);
        let table = bpe::MergeTable::new(vec![("朋".into(), "友</w>".into())], bpe::BpeMode::Joint)
            .unwrap();
        let t = Tokenizer::Bpe(lex.clone(), table);
        let out = t.tokenize("我朋友");
        assert_eq!(toks(&out), ["我</w>", "朋友</w>"]);
        assert_eq!(detokenize(&out).unwrap(), "我朋友");
        assert_eq!(t.detokenize_lossy(&["我".into(), "朋".into()]), "我朋");
        assert_eq!(
            toks(&Tokenizer::Word(lex).tokenize("我朋友")),
            ["我", "朋友"]
        );
        assert_eq!(Tokenizer::Char.scheme(), Scheme::Char);
    }

    #[test]
    fn tokenized_line_format() {
        let t = char_tokenize("佢 係meeting");
        assert_eq!(t.to_line(), "佢 係 meeting");
        assert_eq!(TokenizedSentence::from_line(&t.to_line(), Scheme::Char), t);
    }

    proptest! {
        #[test]
        fn char_round_trip(s in "[我哋好a-zA-Z0-9 ,。!\u{3000}]{0,30}") {
            let t = char_tokenize(&s);
            prop_assert!(t.tokens.iter().all(|x| !x.is_empty()));
            let stripped: String = s.chars().filter(|c| !c.is_whitespace()).collect();
            prop_assert_eq!(detokenize(&t).unwrap(), stripped);
        }

        #[test]
        fn word_count_bounded(s in "[我的朋友中意思ab1 ]{0,30}") {
            let lex = Lexicon::new(["朋友", "中意", "意思", "我的朋友", "ab"]);
            let w = word_tokenize(&s, &lex);
            let c = char_tokenize(&s);
            prop_assert!(w.tokens.len() <= c.tokens.len());
            prop_assert_eq!(w.tokens.concat(), c.tokens.concat());
        }
    }
}
