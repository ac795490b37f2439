//! Decoding, character BLEU and the character-conversion baseline.

pub mod bleu;
pub mod convert;
pub mod decode;
pub mod translate;

pub use bleu::{char_bleu, char_bleu_with, BleuOptions, BleuReport};
pub use convert::{baseline_evaluate, convert_charset, ConversionTable};
pub use decode::{beam_search, decode, greedy, DecodeConfig, Hypothesis};
pub use translate::{translate, Translation};
