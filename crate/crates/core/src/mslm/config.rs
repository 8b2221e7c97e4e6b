use crate::error::{Error, Result};

/// Architecture of a masked segmental language model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub layers: usize,
    pub hidden: usize,
    pub feedforward: usize,
    pub heads: usize,
    /// Maximum segment length `k`.
    pub max_seg_len: usize,
    pub vocab_size: usize,
    /// Longest accepted input, counting the prepended `<bos>`.
    pub max_len: usize,
    pub dropout_embedding: f64,
    pub dropout_encoder: f64,
    pub dropout_decoder: f64,
}

impl ModelConfig {
    /// Four layers, hidden size 256, feedforward 512, four heads and
    /// segments of at most 10 characters.
    pub fn standard(vocab_size: usize) -> Self {
        ModelConfig {
            layers: 4,
            hidden: 256,
            feedforward: 512,
            heads: 4,
            max_seg_len: 10,
            vocab_size,
            max_len: 4096,
            dropout_embedding: 0.0625,
            dropout_encoder: 0.125,
            dropout_decoder: 0.0625,
        }
    }

    /// A small model for tests and toy corpora.
    pub fn tiny(vocab_size: usize, layers: usize, hidden: usize, max_seg_len: usize) -> Self {
        ModelConfig {
            layers,
            hidden,
            feedforward: 2 * hidden,
            heads: if hidden % 4 == 0 { 4 } else { 1 },
            max_seg_len,
            vocab_size,
            max_len: 512,
            dropout_embedding: 0.0,
            dropout_encoder: 0.0,
            dropout_decoder: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.heads == 0 || self.hidden == 0 || self.hidden % self.heads != 0 {
            return bad(format!("hidden size {} is not divisible by {} heads", self.hidden, self.heads));
        }
        if self.max_seg_len == 0 {
            return bad("maximum segment length must be >= 1".into());
        }
        if self.layers == 0 || self.feedforward == 0 || self.max_len < 2 {
            return bad("layers, feedforward and max_len must be positive".into());
        }
        if self.vocab_size <= crate::corpus::CharVocab::NUM_SPECIALS {
            return bad(format!("vocabulary of {} entries has no characters", self.vocab_size));
        }
        for (name, p) in [
            ("embedding", self.dropout_embedding),
            ("encoder", self.dropout_encoder),
            ("decoder", self.dropout_decoder),
        ] {
            if !(0.0..1.0).contains(&p) {
                return bad(format!("{name} dropout {p} outside [0, 1)"));
            }
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    /// `key=value` lines, in field order.
    pub fn to_text(&self) -> String {
        format!(
            "layers={}\nhidden={}\nfeedforward={}\nheads={}\nmax_seg_len={}\nvocab_size={}\nmax_len={}\n\
             dropout_embedding={}\ndropout_encoder={}\ndropout_decoder={}\n",
            self.layers,
            self.hidden,
            self.feedforward,
            self.heads,
            self.max_seg_len,
            self.vocab_size,
            self.max_len,
            self.dropout_embedding,
            self.dropout_encoder,
            self.dropout_decoder
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut kv = crate::kv::parse(text, "model config")?;
        let c = ModelConfig {
            layers: kv.get("layers")?,
            hidden: kv.get("hidden")?,
            feedforward: kv.get("feedforward")?,
            heads: kv.get("heads")?,
            max_seg_len: kv.get("max_seg_len")?,
            vocab_size: kv.get("vocab_size")?,
            max_len: kv.get("max_len")?,
            dropout_embedding: kv.get("dropout_embedding")?,
            dropout_encoder: kv.get("dropout_encoder")?,
            dropout_decoder: kv.get("dropout_decoder")?,
        };
        kv.finish()?;
        c.validate()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let c = ModelConfig::standard(250);
        assert_eq!(ModelConfig::from_text(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn rejects_indivisible_heads() {
        let mut c = ModelConfig::standard(250);
        c.heads = 3;
        assert!(c.validate().is_err());
        c.heads = 4;
        c.max_seg_len = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn rejects_unknown_keys() {
        let text = ModelConfig::standard(250).to_text() + "colour=blue\n";
        assert!(ModelConfig::from_text(&text).is_err());
    }
}
