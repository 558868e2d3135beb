//! Single-thought view of the layers, evaluated in inference mode.

use serde::{Deserialize, Serialize};

use super::layers;
use super::Model;
use crate::error::{Error, Result};
use crate::expr::{Expr, MergeOp, TransformOp};
use crate::tensor::{sigmoid, Mat};

/// An embedding paired with the expression it represents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thought {
    /// `1 × H`
    pub embedding: Mat,
    pub expr: Expr,
    pub depth: usize,
    pub infer: Option<f64>,
    pub answer: Option<f64>,
}

impl Thought {
    pub fn new(embedding: Mat, expr: Expr, depth: usize) -> Self {
        Self { embedding, expr, depth, infer: None, answer: None }
    }
}

/// Premise rows `P_d` and the depth they belong to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PremiseState {
    pub rows: Mat,
    pub depth: usize,
}

impl PremiseState {
    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }
}

fn row(m: &Mat) -> Result<&Mat> {
    if m.nrows() != 1 {
        return Err(Error::DimensionMismatch(format!("a thought embedding must be one row, found {}", m.nrows())));
    }
    Ok(m)
}

impl Model {
    pub fn merge_thoughts(&self, a: &Thought, b: &Thought, op: MergeOp, depth: usize) -> Result<Thought> {
        let mut t = self.tape();
        let va = t.constant(row(&a.embedding)?.clone());
        let vb = t.constant(row(&b.embedding)?.clone());
        let out = layers::merge(&mut t, &self.layers.merge[op as usize], self.shape(), va, vb)?;
        Ok(Thought::new(t.value(out).clone(), Expr::merge(op, a.expr.clone(), b.expr.clone()), depth))
    }

    pub fn transform_thought(&self, a: &Thought, op: TransformOp, depth: usize) -> Result<Thought> {
        let mut t = self.tape();
        let va = t.constant(row(&a.embedding)?.clone());
        let out = layers::transform(&mut t, &self.layers.transform[op as usize], self.shape(), va)?;
        Ok(Thought::new(t.value(out).clone(), Expr::transform(op, a.expr.clone()), depth))
    }

    pub fn infer_score(&self, premise: &PremiseState, thought: &Thought) -> Result<f64> {
        self.head_score(&self.layers.infer, &premise.rows, thought)
    }

    /// `goal` is `1 × H` in punctuation mode or `q × H` in full-question mode.
    pub fn answer_score(&self, goal: &Mat, thought: &Thought) -> Result<f64> {
        self.head_score(&self.layers.answer, goal, thought)
    }

    fn head_score(&self, head: &layers::ScoreHead, keys: &Mat, thought: &Thought) -> Result<f64> {
        let mut t = self.tape();
        let k = t.constant(keys.clone());
        let x = t.constant(row(&thought.embedding)?.clone());
        let s = layers::score(&mut t, head, self.shape(), k, x)?;
        Ok(sigmoid(t.scalar(s.logits)))
    }

    /// Appends one attention row per accepted thought. An empty list leaves
    /// the premise unchanged.
    pub fn premise_update(&self, premise: &PremiseState, accepted: &[Thought]) -> Result<PremiseState> {
        if accepted.is_empty() {
            return Ok(premise.clone());
        }
        let mut t = self.tape();
        let p = t.constant(premise.rows.clone());
        let rows: Vec<_> = accepted.iter().map(|a| row(&a.embedding).map(|m| m.view())).collect::<Result<_>>()?;
        let acc = t.constant(ndarray::concatenate(ndarray::Axis(0), &rows).map_err(|e| Error::DimensionMismatch(e.to_string()))?);
        let out = layers::premise_update(&mut t, &self.layers.infer, self.shape(), p, acc)?;
        Ok(PremiseState { rows: t.value(out).clone(), depth: premise.depth + 1 })
    }
}
