use serde::{Deserialize, Serialize};

use super::Value;

/// A number used by gold equations that never appears in problem text.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Constant {
    pub label: String,
    pub value: Value,
}

impl Constant {
    pub fn new(label: impl Into<String>, value: Value) -> Self {
        Self { label: label.into(), value }
    }

    pub fn from_literal(text: &str) -> Result<Self, crate::Error> {
        let value = Value::parse_literal(text)?;
        let label = match &value {
            Value::Approx(_) => "pi".to_string(),
            v => v.literal(),
        };
        Ok(Self { label, value })
    }
}

/// Ordered, deduplicated constant list. Index `i` is leaf `c{i}`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConstantVocabulary(pub Vec<Constant>);

impl ConstantVocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<&Constant> {
        self.0.get(i)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Constant> {
        self.0.iter()
    }

    pub fn position(&self, value: &Value) -> Option<usize> {
        self.0.iter().position(|c| c.value == *value)
    }

    /// Appends unless an equal value is already present. Returns the index.
    pub fn insert(&mut self, constant: Constant) -> usize {
        match self.position(&constant.value) {
            Some(i) => i,
            None => {
                self.0.push(constant);
                self.0.len() - 1
            }
        }
    }
}

/// Values bound to quantity leaves (surface order) and constant leaves.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct QuantityEnv {
    pub quantities: Vec<Value>,
    pub constants: ConstantVocabulary,
}

impl QuantityEnv {
    pub fn new(quantities: Vec<Value>, constants: ConstantVocabulary) -> Self {
        Self { quantities, constants }
    }

    pub fn from_ints(values: &[i64]) -> Self {
        Self::new(values.iter().map(|&v| Value::int(v)).collect(), ConstantVocabulary::new())
    }

    /// Display label of a leaf: the number itself.
    pub fn leaf_label(&self, leaf: &super::Expr) -> String {
        match leaf {
            super::Expr::Quantity(i) => self
                .quantities
                .get(*i)
                .map(|v| v.to_string())
                .unwrap_or_else(|| format!("q{i}")),
            super::Expr::Constant(i) => self
                .constants
                .get(*i)
                .map(|c| c.label.clone())
                .unwrap_or_else(|| format!("c{i}")),
            other => other.serialize(),
        }
    }
}
