use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{ProblemInstance, CLS, MASK, UNK};

/// Token to id map. Ids 0, 1 and 2 are `[CLS]`, `[MASK]` and `[UNK]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    pub const CLS_ID: usize = 0;
    pub const MASK_ID: usize = 1;
    pub const UNK_ID: usize = 2;

    pub fn specials() -> Self {
        Self::from(vec![CLS.to_string(), MASK.to_string(), UNK.to_string()])
    }

    /// Special tokens followed by every token of `problems` in first-use order.
    pub fn build<'a>(problems: impl IntoIterator<Item = &'a ProblemInstance>) -> Self {
        let mut v = Self::specials();
        for p in problems {
            for t in &p.tokens {
                v.push(t);
            }
        }
        v
    }

    fn push(&mut self, token: &str) {
        if !self.index.contains_key(token) {
            self.index.insert(token.to_string(), self.tokens.len());
            self.tokens.push(token.to_string());
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Maps tokens to ids. Unknown tokens are an error in strict mode and
    /// map to `[UNK]` otherwise.
    pub fn ids(&self, tokens: &[String], strict: bool) -> Result<Vec<usize>> {
        tokens
            .iter()
            .map(|t| match self.get(t) {
                Some(i) => Ok(i),
                None if strict => Err(Error::OutOfVocabulary(t.clone())),
                None => Ok(Self::UNK_ID),
            })
            .collect()
    }

    /// Plain-text form: one token per line, line number is the id.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.tokens.join("\n");
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        if tokens.len() < 3 || tokens[0] != CLS || tokens[1] != MASK || tokens[2] != UNK {
            return Err(Error::Config(format!("{} does not start with the special tokens", path.display())));
        }
        Ok(Self::from(tokens))
    }
}
