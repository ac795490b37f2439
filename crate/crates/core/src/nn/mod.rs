//! Sequence-to-sequence models with hand-written backpropagation.
//!
//! Both variants share one encoder across languages and own one decoder per
//! language. All arithmetic is `f64`.

pub mod attention;
pub mod checkpoint;
pub mod config;
pub mod gradcheck;
pub mod gru;
pub mod init;
pub mod loss;
pub mod model;
pub mod ops;
pub mod optim;
pub mod params;
pub mod transformer;

pub use attention::{attend, Attention};
pub use checkpoint::Checkpoint;
pub use config::{ModelConfig, Variant};
pub use loss::{cross_entropy, cross_entropy_grad};
pub use model::{decoder_inputs, DecoderState, Model};
pub use optim::{Optimizer, OptimizerConfig, OptimizerKind};
pub use params::{Grads, Mat, Param, ParamId, ParamStore};
