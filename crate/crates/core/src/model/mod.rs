//! Trainable model: vocabulary, encoder, thought layers, and checkpoints.

mod checkpoint;
mod encoder;
pub mod layers;
mod thought;
mod vocab;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::ConstantVocabulary;
use crate::tensor::{ParamStore, Tape};

pub use checkpoint::{Checkpoint, TensorRecord, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use encoder::{encode, encode_with_embeddings, EmbeddingFile, EncodedProblem, EncoderBlock, EncoderParams};
pub use layers::{LayerParams, LayerShape};
pub use thought::{PremiseState, Thought};
pub use vocab::Vocab;

/// Which encoder rows the answer layer attends over.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GoalMode {
    /// The question's last punctuation token.
    #[default]
    Punctuation,
    /// Every token of the question.
    FullQuestion,
}

impl std::str::FromStr for GoalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "punctuation" => Ok(GoalMode::Punctuation),
            "full-question" => Ok(GoalMode::FullQuestion),
            other => Err(Error::Config(format!("unknown goal mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: usize,
    pub heads: usize,
    pub layers: usize,
    /// Inner width of every feed-forward block as a multiple of `hidden`.
    pub ff_mult: usize,
    pub max_len: usize,
    pub dropout: f64,
    pub goal_mode: GoalMode,
    /// Reject unknown tokens instead of mapping them to `[UNK]`.
    pub strict_vocab: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            heads: 4,
            layers: 2,
            ff_mult: 4,
            max_len: 160,
            dropout: 0.1,
            goal_mode: GoalMode::Punctuation,
            strict_vocab: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.heads == 0 || !self.hidden.is_multiple_of(self.heads) {
            return Err(Error::Config(format!("hidden size {} must be a positive multiple of heads {}", self.hidden, self.heads)));
        }
        if self.ff_mult == 0 || self.max_len == 0 {
            return Err(Error::Config("ff_mult and max_len must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub constants: ConstantVocabulary,
    pub store: ParamStore,
    pub encoder: EncoderParams,
    pub layers: LayerParams,
}

impl Model {
    pub fn new(config: ModelConfig, vocab: Vocab, constants: ConstantVocabulary, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = config.hidden;
        let inner = h * config.ff_mult;
        let mut init = layers::Init { store: &mut store, rng: &mut rng };
        let encoder = EncoderParams::init(&mut init, vocab.len(), config.max_len, config.layers, constants.len(), h, inner);
        let layers = init.layers(h, inner);
        Ok(Self { config, vocab, constants, store, encoder, layers })
    }

    pub fn shape(&self) -> LayerShape {
        LayerShape { hidden: self.config.hidden, heads: self.config.heads, dropout: self.config.dropout }
    }

    /// Inference tape over this model's parameters.
    pub fn tape(&self) -> Tape<'_> {
        Tape::new(&self.store)
    }

    /// Parameters belonging to the token encoder (not the constants).
    pub fn is_encoder_param(name: &str) -> bool {
        name.starts_with("enc.")
    }
}

#[cfg(test)]
pub(crate) mod tests;
