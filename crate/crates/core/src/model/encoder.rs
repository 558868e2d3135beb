//! Small pre-normalized transformer encoder and the initial model state.

use std::collections::HashMap;
use std::path::Path;

use super::layers::{attention, feed_forward, norm, AttnParams, FfParams, Init, Norm};
use super::{GoalMode, Model};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::problem::ProblemInstance;
use crate::tensor::{Mat, ParamId, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncoderBlock {
    pub attn: AttnParams,
    pub ln_ff: Norm,
    pub ff: FfParams,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncoderParams {
    pub tokens: ParamId,
    pub positions: ParamId,
    pub blocks: Vec<EncoderBlock>,
    pub ln_final: Norm,
    /// One row per constant in the model's vocabulary.
    pub constants: ParamId,
}

impl EncoderParams {
    pub(super) fn init<R: rand::Rng>(init: &mut Init<'_, R>, vocab: usize, max_len: usize, layers: usize, constants: usize, h: usize, inner: usize) -> Self {
        let tokens = init.embedding("enc.tokens", vocab, h, 0.1);
        let positions = init.embedding("enc.positions", max_len, h, 0.1);
        let blocks = (0..layers)
            .map(|i| EncoderBlock {
                attn: init.attn(&format!("enc.block{i}.attn"), h, false),
                ln_ff: init.norm(&format!("enc.block{i}.ln_ff"), h),
                ff: init.ff(&format!("enc.block{i}.ff"), h, inner),
            })
            .collect();
        let ln_final = init.norm("enc.ln_final", h);
        let constants = init.embedding("constants", constants, h, 1.0);
        Self { tokens, positions, blocks, ln_final, constants }
    }
}

/// Tape handles of the starting state for one problem.
pub struct EncodedProblem {
    /// `n × H` contextual token embeddings.
    pub x: Var,
    /// `|Θ0| × H`: quantity rows in surface order, then constants.
    pub thoughts: Var,
    pub exprs: Vec<Expr>,
    /// `1 × H` row of the sequence-start token.
    pub premise: Var,
    /// `1 × H` in punctuation mode, one row per question token otherwise.
    pub goal: Var,
}

fn check_constants(model: &Model, problem: &ProblemInstance) -> Result<()> {
    if problem.env.constants != model.constants {
        return Err(Error::DimensionMismatch(format!(
            "problem {} uses {} constants, the model has {}",
            problem.id,
            problem.num_constants(),
            model.constants.len()
        )));
    }
    Ok(())
}

/// Runs the toy encoder.
pub fn encode(t: &mut Tape<'_>, model: &Model, problem: &ProblemInstance) -> Result<EncodedProblem> {
    check_constants(model, problem)?;
    let cfg = &model.config;
    let n = problem.tokens.len();
    if n > cfg.max_len {
        return Err(Error::DimensionMismatch(format!("problem {} has {n} tokens, limit is {}", problem.id, cfg.max_len)));
    }
    let ids = model.vocab.ids(&problem.tokens, cfg.strict_vocab)?;
    let shape = model.shape();
    let tok = t.param(model.encoder.tokens);
    let pos = t.param(model.encoder.positions);
    let te = t.gather_rows(tok, &ids);
    let positions: Vec<usize> = (0..n).collect();
    let pe = t.gather_rows(pos, &positions);
    let mut x = t.add(te, pe);
    x = t.dropout(x, shape.dropout);
    for block in &model.encoder.blocks {
        let a = attention(t, &block.attn, shape, x, None)?;
        let a = t.dropout(a.output, shape.dropout);
        x = t.add(x, a);
        let h = norm(t, block.ln_ff, x);
        let f = feed_forward(t, block.ff, shape.dropout, h);
        let f = t.dropout(f, shape.dropout);
        x = t.add(x, f);
    }
    let x = norm(t, model.encoder.ln_final, x);
    finish(t, model, problem, x)
}

/// Builds the starting state from externally computed token embeddings
/// (`n × H`). The embeddings are treated as constants.
pub fn encode_with_embeddings(t: &mut Tape<'_>, model: &Model, problem: &ProblemInstance, x: Mat) -> Result<EncodedProblem> {
    check_constants(model, problem)?;
    if x.dim() != (problem.tokens.len(), model.config.hidden) {
        return Err(Error::DimensionMismatch(format!(
            "external embeddings for {} have shape {:?}, expected ({}, {})",
            problem.id,
            x.dim(),
            problem.tokens.len(),
            model.config.hidden
        )));
    }
    let x = t.constant(x);
    finish(t, model, problem, x)
}

fn finish(t: &mut Tape<'_>, model: &Model, problem: &ProblemInstance, x: Var) -> Result<EncodedProblem> {
    let quantities = t.gather_rows(x, &problem.mask_positions);
    let consts = t.param(model.encoder.constants);
    let thoughts = if model.constants.is_empty() { quantities } else { t.concat_rows(&[quantities, consts]) };
    let exprs: Vec<Expr> = (0..problem.num_quantities())
        .map(Expr::quantity)
        .chain((0..model.constants.len()).map(Expr::constant))
        .collect();
    let premise = t.gather_rows(x, &[0]);
    let goal_rows: Vec<usize> = match model.config.goal_mode {
        GoalMode::Punctuation => vec![problem.goal_index],
        GoalMode::FullQuestion => {
            let (lo, hi) = problem.question_span.ok_or_else(|| Error::MissingQuestion(problem.id.clone()))?;
            (lo..hi).collect()
        }
    };
    let goal = t.gather_rows(x, &goal_rows);
    Ok(EncodedProblem { x, thoughts, exprs, premise, goal })
}

/// Per-problem token embeddings read from a JSON object mapping problem ids
/// to `n × H` arrays.
#[derive(Clone, Debug, Default)]
pub struct EmbeddingFile(pub HashMap<String, Mat>);

impl EmbeddingFile {
    pub fn load(path: &Path) -> Result<Self> {
        let raw: HashMap<String, Vec<Vec<f64>>> = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        let mut out = HashMap::with_capacity(raw.len());
        for (id, rows) in raw {
            let h = rows.first().map_or(0, Vec::len);
            if rows.iter().any(|r| r.len() != h) {
                return Err(Error::DimensionMismatch(format!("ragged embedding rows for {id}")));
            }
            let flat: Vec<f64> = rows.into_iter().flatten().collect();
            let m = Mat::from_shape_vec((flat.len() / h.max(1), h), flat)
                .map_err(|e| Error::DimensionMismatch(e.to_string()))?;
            out.insert(id, m);
        }
        Ok(Self(out))
    }

    pub fn get(&self, id: &str) -> Option<&Mat> {
        self.0.get(id)
    }
}
