use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How tokens of a single paragraph are turned into one vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ParagraphEncoder {
    #[default]
    MeanOfEmbeddings,
    /// One transformer layer over the tokens, then mean pooling.
    SingleTransformerLayer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Filled from the vocabulary when left at zero in config files.
    #[serde(default)]
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub num_labels: usize,
    #[serde(default = "default_max_paragraphs")]
    pub max_paragraphs: usize,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: usize,
    #[serde(default = "default_context_layers")]
    pub context_layers: usize,
    #[serde(default = "default_heads")]
    pub attention_heads: usize,
    #[serde(default)]
    pub paragraph_encoder: ParagraphEncoder,
    /// Hidden width of the transformer feed-forward blocks.
    #[serde(default)]
    pub ffn_dim: usize,
    /// Width of the K and Q projection spaces.
    #[serde(default)]
    pub projection_dim: usize,
    /// Fraction of paragraphs the scorer selects at initialization; sets the
    /// initial scorer bias to its logit.
    #[serde(default = "default_initial_selection")]
    pub initial_selection: f64,
}

fn default_initial_selection() -> f64 {
    0.5
}

fn default_max_paragraphs() -> usize {
    50
}
fn default_max_tokens() -> usize {
    256
}
fn default_context_layers() -> usize {
    2
}
fn default_heads() -> usize {
    2
}

impl ModelConfig {
    /// Small configuration with full-scale truncation limits.
    pub fn small(vocab_size: usize, num_labels: usize) -> Self {
        Self {
            vocab_size,
            embed_dim: 32,
            num_labels,
            max_paragraphs: default_max_paragraphs(),
            max_tokens: default_max_tokens(),
            context_layers: default_context_layers(),
            attention_heads: default_heads(),
            paragraph_encoder: ParagraphEncoder::MeanOfEmbeddings,
            ffn_dim: 64,
            projection_dim: 32,
            initial_selection: default_initial_selection(),
        }
    }

    pub fn ffn_width(&self) -> usize {
        if self.ffn_dim == 0 {
            2 * self.embed_dim
        } else {
            self.ffn_dim
        }
    }

    pub fn projection_width(&self) -> usize {
        if self.projection_dim == 0 {
            self.embed_dim
        } else {
            self.projection_dim
        }
    }

    pub fn initial_score_bias(&self) -> f64 {
        let p = self.initial_selection;
        (p / (1.0 - p)).ln()
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("num_labels", self.num_labels),
            ("max_paragraphs", self.max_paragraphs),
            ("max_tokens", self.max_tokens),
            ("context_layers", self.context_layers),
            ("attention_heads", self.attention_heads),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("model.{name} must be at least 1")));
            }
        }
        if !(self.initial_selection > 0.0 && self.initial_selection < 1.0) {
            return Err(Error::Config("model.initial_selection must lie strictly between 0 and 1".into()));
        }
        if self.vocab_size < 2 {
            return Err(Error::Config("model.vocab_size must cover PAD and UNK".into()));
        }
        if self.embed_dim % self.attention_heads != 0 {
            return Err(Error::Config(format!(
                "model.embed_dim ({}) must be divisible by model.attention_heads ({})",
                self.embed_dim, self.attention_heads
            )));
        }
        Ok(())
    }
}
