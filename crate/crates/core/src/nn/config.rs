use crate::hash::sha256_hex;
use crate::kv::{FieldReader, KvFile};
use crate::vocab::NUM_RESERVED;
use crate::{ConfigIssue, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Gru,
    Transformer,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Gru => "gru",
            Variant::Transformer => "transformer",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gru" => Ok(Variant::Gru),
            "transformer" => Ok(Variant::Transformer),
            _ => Err(Error::InvalidArgument(format!(
                "unknown model variant `{s}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub d_model: usize,
    /// Embedding width of the GRU variant; the transformer embeds at `d_model`.
    pub d_emb: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    /// Encoder and decoder depth.
    pub layers: usize,
    /// Decoder layers (counted from the bottom) shared by the two decoders.
    pub shared_decoder_layers: usize,
    /// Encoder layers (counted from the top) shared by both languages.
    pub shared_encoder_layers: usize,
    pub dropout: f64,
    pub vocab_sizes: [usize; 2],
    /// One embedding table for both languages (requires a joint vocabulary).
    pub shared_embeddings: bool,
    pub freeze_embeddings: bool,
    pub max_len: usize,
}

impl ModelConfig {
    pub fn transformer(vocab_sizes: [usize; 2]) -> Self {
        ModelConfig {
            variant: Variant::Transformer,
            d_model: 512,
            d_emb: 512,
            heads: 8,
            ffn_dim: 2048,
            layers: 4,
            shared_decoder_layers: 3,
            shared_encoder_layers: 4,
            dropout: 0.1,
            vocab_sizes,
            shared_embeddings: false,
            freeze_embeddings: false,
            max_len: 256,
        }
    }

    pub fn gru(vocab_sizes: [usize; 2]) -> Self {
        ModelConfig {
            variant: Variant::Gru,
            d_model: 512,
            d_emb: 512,
            heads: 1,
            ffn_dim: 0,
            layers: 2,
            shared_decoder_layers: 0,
            shared_encoder_layers: 2,
            dropout: 0.1,
            vocab_sizes,
            shared_embeddings: false,
            freeze_embeddings: true,
            max_len: 256,
        }
    }

    /// Small dimensions for tests and desk-scale runs.
    pub fn tiny(variant: Variant, vocab_sizes: [usize; 2], d_model: usize) -> Self {
        let mut c = match variant {
            Variant::Gru => Self::gru(vocab_sizes),
            Variant::Transformer => Self::transformer(vocab_sizes),
        };
        c.d_model = d_model;
        c.d_emb = d_model;
        c.heads = if variant == Variant::Transformer {
            2
        } else {
            1
        };
        c.ffn_dim = if variant == Variant::Transformer {
            2 * d_model
        } else {
            0
        };
        c.dropout = 0.0;
        c.max_len = 64;
        c
    }

    pub fn embedding_dim(&self) -> usize {
        match self.variant {
            Variant::Gru => self.d_emb,
            Variant::Transformer => self.d_model,
        }
    }

    pub fn issues(&self) -> Vec<ConfigIssue> {
        let mut out = Vec::new();
        let mut bad = |k: &str, r: String| {
            out.push(ConfigIssue {
                key: k.into(),
                reason: r,
            })
        };
        if self.d_model == 0 {
            bad("d_model", "must be positive".into());
        }
        if self.embedding_dim() == 0 {
            bad("d_emb", "must be positive".into());
        }
        if self.layers == 0 {
            bad("layers", "must be positive".into());
        }
        if self.max_len == 0 {
            bad("max_len", "must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            bad("dropout", format!("{} not in [0, 1)", self.dropout));
        }
        for (i, v) in self.vocab_sizes.iter().enumerate() {
            if *v <= NUM_RESERVED {
                bad(
                    &format!("vocab_l{}", i + 1),
                    format!("size {v} holds no learned tokens"),
                );
            }
        }
        if self.shared_embeddings && self.vocab_sizes[0] != self.vocab_sizes[1] {
            bad(
                "shared_embeddings",
                "requires equal vocabulary sizes".into(),
            );
        }
        match self.variant {
            Variant::Transformer => {
                if self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
                    bad(
                        "heads",
                        format!(
                            "d_model {} not divisible by {} heads",
                            self.d_model, self.heads
                        ),
                    );
                }
                if self.ffn_dim == 0 {
                    bad("ffn_dim", "must be positive".into());
                }
                if self.shared_decoder_layers > self.layers {
                    bad(
                        "shared_decoder_layers",
                        format!("exceeds {} layers", self.layers),
                    );
                }
                if self.shared_encoder_layers > self.layers {
                    bad(
                        "shared_encoder_layers",
                        format!("exceeds {} layers", self.layers),
                    );
                }
            }
            Variant::Gru => {
                if !self.d_model.is_multiple_of(2) {
                    bad(
                        "d_model",
                        "must be even for the bidirectional encoder".into(),
                    );
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let issues = self.issues();
        if issues.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(issues))
        }
    }

    pub fn to_kv(&self) -> KvFile {
        let mut kv = KvFile::default();
        kv.set("variant", self.variant.as_str());
        kv.set("d_model", self.d_model.to_string());
        kv.set("d_emb", self.d_emb.to_string());
        kv.set("heads", self.heads.to_string());
        kv.set("ffn_dim", self.ffn_dim.to_string());
        kv.set("layers", self.layers.to_string());
        kv.set(
            "shared_decoder_layers",
            self.shared_decoder_layers.to_string(),
        );
        kv.set(
            "shared_encoder_layers",
            self.shared_encoder_layers.to_string(),
        );
        kv.set("dropout", format!("{:?}", self.dropout));
        kv.set("vocab_l1", self.vocab_sizes[0].to_string());
        kv.set("vocab_l2", self.vocab_sizes[1].to_string());
        kv.set("shared_embeddings", self.shared_embeddings.to_string());
        kv.set("freeze_embeddings", self.freeze_embeddings.to_string());
        kv.set("max_len", self.max_len.to_string());
        kv
    }

    pub fn from_kv(kv: &KvFile) -> Result<Self> {
        let mut r = FieldReader::new(kv);
        let vocab_sizes = [
            r.parse_or("vocab_l1", 0usize),
            r.parse_or("vocab_l2", 0usize),
        ];
        let cfg = Self::read_kv(&mut r, "", vocab_sizes);
        r.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Architecture keys under `prefix`; vocabulary sizes come from the caller.
    pub(crate) fn read_kv(r: &mut FieldReader<'_>, prefix: &str, vocab_sizes: [usize; 2]) -> Self {
        let key = |k: &str| format!("{prefix}{k}");
        let variant = r.parse_or(&key("variant"), Variant::Transformer);
        let base = match variant {
            Variant::Gru => Self::gru(vocab_sizes),
            Variant::Transformer => Self::transformer(vocab_sizes),
        };
        ModelConfig {
            variant,
            d_model: r.parse_or(&key("d_model"), base.d_model),
            d_emb: r.parse_or(&key("d_emb"), base.d_emb),
            heads: r.parse_or(&key("heads"), base.heads),
            ffn_dim: r.parse_or(&key("ffn_dim"), base.ffn_dim),
            layers: r.parse_or(&key("layers"), base.layers),
            shared_decoder_layers: r
                .parse_or(&key("shared_decoder_layers"), base.shared_decoder_layers),
            shared_encoder_layers: r
                .parse_or(&key("shared_encoder_layers"), base.shared_encoder_layers),
            dropout: r.parse_or(&key("dropout"), base.dropout),
            vocab_sizes,
            shared_embeddings: r.parse_or(&key("shared_embeddings"), base.shared_embeddings),
            freeze_embeddings: r.parse_or(&key("freeze_embeddings"), base.freeze_embeddings),
            max_len: r.parse_or(&key("max_len"), base.max_len),
        }
    }

    pub fn content_hash(&self) -> String {
        sha256_hex(self.to_kv().to_text().as_bytes())
    }
}
