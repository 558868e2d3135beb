//! Problem records, quantity masking, dataset loading, splitting, and the
//! synthetic corpus generator.

mod load;
mod split;
mod synth;
mod tokenize;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{parse_equation, parse_equation_provisional, Constant, ConstantVocabulary, Expr, ProvisionalLeaf, QuantityEnv, Value};

pub use load::{load_problems, load_records, read_records, write_records, Dialect, LoadReport, Skipped};
pub use split::{grouped_random_split, one_to_many_split, regroup_test_split, DatasetSplit, SplitManifest, SplitMeta};
pub use synth::{builtin_templates, synth_generate, synth_records, QuestionSchema, Slot, SynthSpec, Template};
pub use tokenize::{is_punctuation, tokenize, Tokenized, CLS, MASK, UNK};

/// One problem in the normalized line-delimited format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    #[serde(deserialize_with = "load::string_or_number")]
    pub id: String,
    pub context: String,
    #[serde(default)]
    pub question: String,
    pub equation: String,
    #[serde(default, skip_serializing_if = "Option::is_none", deserialize_with = "load::opt_number")]
    pub answer: Option<f64>,
}

impl Record {
    fn tokenized(&self) -> (Tokenized, Tokenized) {
        (tokenize(&self.context), tokenize(&self.question))
    }

    fn quantity_values(&self) -> Result<Vec<Value>> {
        let (c, q) = self.tokenized();
        c.numbers.iter().chain(&q.numbers).map(|n| Value::parse_literal(n)).collect()
    }
}

/// A tokenized problem with masked quantities and a parsed gold expression.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemInstance {
    pub id: String,
    pub context: String,
    pub question: String,
    pub equation: String,
    /// `[CLS]` followed by the context and question tokens.
    pub tokens: Vec<String>,
    /// Surface form of each masked quantity.
    pub numbers: Vec<String>,
    /// Token positions of the masks, in surface order.
    pub mask_positions: Vec<usize>,
    /// Half-open token range of the question, when the record has one.
    pub question_span: Option<(usize, usize)>,
    pub goal_index: usize,
    pub env: QuantityEnv,
    pub gold: Expr,
}

impl ProblemInstance {
    /// Builds an instance, binding gold numbers to quantities first and to
    /// `constants` second. A provided answer must agree with the gold value.
    pub fn from_record(record: &Record, constants: &ConstantVocabulary) -> Result<Self> {
        let (ctx, q) = record.tokenized();
        let mut tokens = Vec::with_capacity(1 + ctx.tokens.len() + q.tokens.len());
        tokens.push(CLS.to_string());
        tokens.extend(ctx.tokens);
        let q_start = tokens.len();
        tokens.extend(q.tokens);
        let mut question_span = (tokens.len() > q_start).then_some((q_start, tokens.len()));

        let last_punct = |lo: usize, hi: usize| (lo..hi).rev().find(|&i| is_punctuation(&tokens[i]));
        let goal = question_span
            .and_then(|(lo, hi)| last_punct(lo, hi))
            .or_else(|| last_punct(1, tokens.len()));
        let goal_index = match goal {
            Some(i) => i,
            None => {
                tokens.push("?".to_string());
                if let Some(span) = question_span.as_mut() {
                    span.1 = tokens.len();
                }
                tokens.len() - 1
            }
        };

        let numbers: Vec<String> = ctx.numbers.into_iter().chain(q.numbers).collect();
        let mask_positions: Vec<usize> = tokens.iter().enumerate().filter(|(_, t)| *t == MASK).map(|(i, _)| i).collect();
        let quantities = numbers.iter().map(|n| Value::parse_literal(n)).collect::<Result<Vec<_>>>()?;
        let env = QuantityEnv::new(quantities, constants.clone());
        let gold = parse_equation(&record.equation, &env)?;
        if let Some(answer) = record.answer {
            let value = gold.evaluate(&env)?;
            if !value.approx_eq(&Value::Approx(answer), 1e-4) {
                return Err(Error::parse(&record.equation, format!("evaluates to {value}, record answer is {answer}")));
            }
        }
        Ok(Self {
            id: record.id.clone(),
            context: record.context.clone(),
            question: record.question.clone(),
            equation: record.equation.clone(),
            tokens,
            numbers,
            mask_positions,
            question_span,
            goal_index,
            env,
            gold,
        })
    }

    pub fn num_quantities(&self) -> usize {
        self.env.quantities.len()
    }

    pub fn num_constants(&self) -> usize {
        self.env.constants.len()
    }

    /// Token sequence with each mask replaced by its quantity's surface form.
    pub fn unmasked_tokens(&self) -> Vec<String> {
        let mut out = self.tokens.clone();
        for (pos, n) in self.mask_positions.iter().zip(&self.numbers) {
            out[*pos] = n.clone();
        }
        out
    }

    /// Grouping key for shared-context variants: context tokens joined by
    /// single spaces, numbers rendered in canonical form.
    pub fn context_key(&self) -> String {
        context_key(&self.context)
    }

    pub fn record(&self) -> Record {
        Record {
            id: self.id.clone(),
            context: self.context.clone(),
            question: self.question.clone(),
            equation: self.equation.clone(),
            answer: self.gold.evaluate(&self.env).ok().filter(Value::is_finite).map(|v| v.to_f64()),
        }
    }
}

pub fn context_key(context: &str) -> String {
    let t = tokenize(context);
    let mut numbers = t.numbers.iter();
    t.tokens
        .iter()
        .map(|tok| {
            if tok == MASK {
                let n = numbers.next().expect("one number per mask");
                Value::parse_literal(n).map(|v| v.literal()).unwrap_or_else(|_| n.clone())
            } else {
                tok.clone()
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Numbers used by training gold equations that are absent from the
/// corresponding problem texts, deduplicated in first-use order.
pub fn collect_constants(train: &[Record]) -> ConstantVocabulary {
    let mut vocab = ConstantVocabulary::new();
    for record in train {
        let Ok(quantities) = record.quantity_values() else { continue };
        let Ok(leaves) = parse_equation_provisional(&record.equation, &quantities) else { continue };
        for leaf in leaves {
            if let ProvisionalLeaf::Unbound(v) = leaf {
                let label = match &v {
                    Value::Approx(_) => "pi".to_string(),
                    other => other.literal(),
                };
                vocab.insert(Constant::new(label, v));
            }
        }
    }
    vocab
}
