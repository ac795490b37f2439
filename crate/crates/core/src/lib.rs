//! Unsupervised machine-translation workbench for Mandarin and Cantonese.
//!
//! The crate covers the whole path from raw text dumps to evaluated models:
//!
//! - [`corpus`]: sentence cutting, noise removal, language filtering, balanced sampling
//! - [`segment`], [`bpe`], [`vocab`]: character, dictionary-word and subword tokenization
//! - [`embed`]: skip-gram training, orthogonal cross-lingual mapping, pivot-private composition
//! - [`nn`]: shared-encoder / dual-decoder seq2seq models (GRU + attention, transformer)
//!   with hand-written backpropagation
//! - [`umt`]: denoising autoencoding and on-the-fly back-translation training
//! - [`eval`]: greedy and beam decoding, character BLEU, character-set conversion baseline
//! - [`experiment`]: flat configs, cached stage runner and run manifests

pub mod bpe;
pub mod corpus;
pub mod embed;
mod error;
pub mod eval;
pub mod experiment;
pub mod hash;
pub mod kv;
pub mod nn;
pub mod segment;
pub mod synth;
pub mod umt;
pub mod vocab;

pub use error::{ConfigIssue, Error, Result};

/// The two sides of the translation pair. L1 is Mandarin and L2 Cantonese in
/// the default setup, but nothing in the models depends on that.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Lang {
    L1,
    L2,
}

impl Lang {
    pub const BOTH: [Lang; 2] = [Lang::L1, Lang::L2];

    pub fn index(self) -> usize {
        match self {
            Lang::L1 => 0,
            Lang::L2 => 1,
        }
    }

    pub fn other(self) -> Lang {
        match self {
            Lang::L1 => Lang::L2,
            Lang::L2 => Lang::L1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Lang::L1 => "L1",
            Lang::L2 => "L2",
        }
    }
}

impl std::fmt::Display for Lang {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Lang {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "L1" | "l1" => Ok(Lang::L1),
            "L2" | "l2" => Ok(Lang::L2),
            _ => Err(Error::InvalidArgument(format!(
                "unknown language `{s}` (expected L1 or L2)"
            ))),
        }
    }
}
