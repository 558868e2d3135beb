//! One TOML document covering every knob.
//!
//! ```toml
//! [model]
//! hidden = 64
//! heads = 4
//! dropout = 0.1
//! goal_mode = "punctuation"
//!
//! [engine]
//! max_depth = 6
//! accept_threshold = 0.5
//! confidence_threshold = 0.95
//! premise_mode = "accumulated"
//!
//! [train]
//! lr = 1e-3
//! lr_decay_every = 20
//! lr_decay = 0.5
//! weight_decay = 1e-5
//! batch_size = 16
//! epochs = 60
//! swa_epochs = 10
//! seed = 0
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::EngineConfig;
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::model::ModelConfig;
use crate::trainer::TrainConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub model: ModelConfig,
    pub engine: EngineConfig,
    pub train: TrainConfig,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.engine.validate()?;
        self.train.validate()
    }

    pub fn eval(&self) -> EvalConfig {
        EvalConfig { engine: self.engine.clone(), exec: self.train.exec }
    }

    /// Schedule for a large pretrained encoder: batch 4,
    /// lr 1.3e-5 halved every 10 epochs, dropout 0.5, 100 epochs with the
    /// last 30 averaged.
    pub fn pretrained_preset() -> Self {
        let mut c = Self::default();
        c.model.dropout = 0.5;
        c.train = TrainConfig {
            batch_size: 4,
            lr: 1.3e-5,
            lr_decay_every: 10,
            lr_decay: 0.5,
            weight_decay: 1e-5,
            epochs: 100,
            swa_epochs: 30,
            ..TrainConfig::default()
        };
        c
    }
}
