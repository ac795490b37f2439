//! Corpus construction: sentence cutting, noise removal, foreign-text and
//! Mandarin/Cantonese filtering, and length-preserving downsampling.
//!
//! Every filter is a pure per-sentence function. [`pipeline`] wires them
//! together in the fixed order cut → strip → foreign filter → classify.

mod classify;
mod cut;
mod noise;
pub mod pipeline;
mod sample;

pub use classify::{classify_language, foreign_filter, is_cjk_ideograph, FilterDecision};
pub use cut::{cut_sentences, cut_text};
pub use noise::strip_noise;
pub use pipeline::{run_pipeline, PipelineConfig, PipelineOutput, PipelineStats};
pub use sample::{
    downsample_balanced, downsample_indices, length_bucket, BUCKET_WIDTH, OPEN_BUCKET_LOW,
};

use std::fmt;
use std::str::FromStr;

/// A unit of ingested text, e.g. one line of a dump file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawDocument {
    pub source_id: String,
    pub text: String,
}

impl RawDocument {
    pub fn new(source_id: impl Into<String>, text: impl Into<String>) -> Self {
        let source_id = source_id.into();
        debug_assert!(!source_id.is_empty());
        RawDocument {
            source_id,
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LanguageLabel {
    Cantonese,
    Mandarin,
    Ambiguous,
    Foreign,
}

impl LanguageLabel {
    pub const ALL: [LanguageLabel; 4] = [
        LanguageLabel::Cantonese,
        LanguageLabel::Mandarin,
        LanguageLabel::Ambiguous,
        LanguageLabel::Foreign,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LanguageLabel::Cantonese => "cantonese",
            LanguageLabel::Mandarin => "mandarin",
            LanguageLabel::Ambiguous => "ambiguous",
            LanguageLabel::Foreign => "foreign",
        }
    }
}

impl fmt::Display for LanguageLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LanguageLabel {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LanguageLabel::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| crate::Error::InvalidArgument(format!("unknown language label `{s}`")))
    }
}

/// One sentence of a corpus. `label` stays `None` until classification.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub text: String,
    pub source_id: String,
    pub label: Option<LanguageLabel>,
}

impl Sentence {
    pub fn new(text: impl Into<String>, source_id: impl Into<String>) -> Self {
        Sentence {
            text: text.into(),
            source_id: source_id.into(),
            label: None,
        }
    }

    /// True when noise removal left nothing; such sentences are dropped.
    pub fn is_empty(&self) -> bool {
        self.text.trim().is_empty()
    }

    /// Length in characters (code points).
    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }
}

impl AsRef<str> for Sentence {
    fn as_ref(&self) -> &str {
        &self.text
    }
}
