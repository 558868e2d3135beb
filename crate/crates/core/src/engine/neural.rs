use super::{Derivation, ThoughtScorer};
use crate::error::Result;
use crate::expr::{Expr, MergeOp, TransformOp};
use crate::model::{encode, encode_with_embeddings, layers, EncodedProblem, Model};
use crate::problem::ProblemInstance;
use crate::tensor::{sigmoid, Mat, Tape, Var};

/// Scores thoughts with the model's layers on one tape. The tape keeps the
/// whole expansion graph, so the logged logits can be backpropagated.
pub struct NeuralScorer<'m, 't> {
    model: &'m Model,
    tape: Tape<'t>,
    enc: EncodedProblem,
    segments: Vec<Var>,
    /// Thought id -> (segment, row).
    index: Vec<(usize, usize)>,
    bank: Option<Var>,
    premise: Var,
    infer_log: Vec<(Vec<usize>, Var)>,
    answer_log: Vec<(Vec<usize>, Var)>,
}

impl<'m, 't> NeuralScorer<'m, 't> {
    pub fn new(model: &'m Model, problem: &ProblemInstance, mut tape: Tape<'t>) -> Result<Self> {
        let enc = encode(&mut tape, model, problem)?;
        Ok(Self::from_encoded(model, tape, enc))
    }

    /// Uses externally computed token embeddings instead of the encoder.
    pub fn with_embeddings(model: &'m Model, problem: &ProblemInstance, mut tape: Tape<'t>, x: Mat) -> Result<Self> {
        let enc = encode_with_embeddings(&mut tape, model, problem, x)?;
        Ok(Self::from_encoded(model, tape, enc))
    }

    fn from_encoded(model: &'m Model, tape: Tape<'t>, enc: EncodedProblem) -> Self {
        let premise = enc.premise;
        Self {
            model,
            tape,
            enc,
            segments: Vec::new(),
            index: Vec::new(),
            bank: None,
            premise,
            infer_log: Vec::new(),
            answer_log: Vec::new(),
        }
    }

    pub fn tape(&self) -> &Tape<'t> {
        &self.tape
    }

    pub fn tape_mut(&mut self) -> &mut Tape<'t> {
        &mut self.tape
    }

    pub fn into_tape(self) -> Tape<'t> {
        self.tape
    }

    /// Every infer call as (thought ids, `m × 1` logits).
    pub fn infer_log(&self) -> &[(Vec<usize>, Var)] {
        &self.infer_log
    }

    pub fn answer_log(&self) -> &[(Vec<usize>, Var)] {
        &self.answer_log
    }

    pub fn premise(&self) -> Var {
        self.premise
    }

    pub fn encoded(&self) -> &EncodedProblem {
        &self.enc
    }

    fn add_segment(&mut self, v: Var) {
        let seg = self.segments.len();
        let rows = self.tape.rows(v);
        self.segments.push(v);
        self.index.extend((0..rows).map(|r| (seg, r)));
        self.bank = None;
    }

    /// Embeddings of the given thoughts, one row each.
    pub fn rows(&mut self, ids: &[usize]) -> Var {
        let bank = match self.bank {
            Some(b) => b,
            None => {
                let segs = self.segments.clone();
                let b = self.tape.concat_rows(&segs);
                self.bank = Some(b);
                b
            }
        };
        let mut offsets = Vec::with_capacity(self.segments.len());
        let mut acc = 0;
        for &s in &self.segments {
            offsets.push(acc);
            acc += self.tape.rows(s);
        }
        let flat: Vec<usize> = ids
            .iter()
            .map(|&id| {
                let (s, r) = self.index[id];
                offsets[s] + r
            })
            .collect();
        self.tape.gather_rows(bank, &flat)
    }

    fn score(&mut self, ids: &[usize], answer: bool) -> Result<Vec<f64>> {
        let x = self.rows(ids);
        let (head, keys) = if answer {
            (&self.model.layers.answer, self.enc.goal)
        } else {
            (&self.model.layers.infer, self.premise)
        };
        let s = layers::score(&mut self.tape, head, self.model.shape(), keys, x)?;
        let log = if answer { &mut self.answer_log } else { &mut self.infer_log };
        log.push((ids.to_vec(), s.logits));
        Ok(self.tape.value(s.logits).iter().map(|&z| sigmoid(z)).collect())
    }

    /// Head-averaged answer-layer attention of each thought over the
    /// problem tokens (`|ids| × n`), with the token embeddings as keys.
    pub fn token_attention(&mut self, ids: &[usize]) -> Result<Mat> {
        let n = self.tape.rows(self.enc.x);
        if ids.is_empty() {
            return Ok(Mat::zeros((0, n)));
        }
        let x = self.rows(ids);
        let s = layers::score(&mut self.tape, &self.model.layers.answer, self.model.shape(), self.enc.x, x)?;
        let heads = s.attention.weights.len() as f64;
        let mut out = Mat::zeros((ids.len(), n));
        for &w in &s.attention.weights {
            out += self.tape.value(w);
        }
        Ok(out / heads)
    }
}

impl ThoughtScorer for NeuralScorer<'_, '_> {
    fn initial(&mut self) -> Result<Vec<Expr>> {
        if self.segments.is_empty() {
            let t = self.enc.thoughts;
            self.add_segment(t);
        }
        Ok(self.enc.exprs.clone())
    }

    fn derive(&mut self, items: &[Derivation]) -> Result<()> {
        let shape = self.model.shape();
        let base = self.index.len();
        let mut placed = vec![(0, 0); items.len()];
        for op in MergeOp::ALL {
            let group: Vec<(usize, usize, usize)> = items
                .iter()
                .enumerate()
                .filter_map(|(k, d)| match *d {
                    Derivation::Merge { op: o, left, right } if o == op => Some((k, left, right)),
                    _ => None,
                })
                .collect();
            if group.is_empty() {
                continue;
            }
            let l: Vec<usize> = group.iter().map(|g| g.1).collect();
            let r: Vec<usize> = group.iter().map(|g| g.2).collect();
            let a = self.rows(&l);
            let b = self.rows(&r);
            let out = layers::merge(&mut self.tape, &self.model.layers.merge[op as usize], shape, a, b)?;
            let seg = self.segments.len();
            self.segments.push(out);
            for (row, g) in group.iter().enumerate() {
                placed[g.0] = (seg, row);
            }
        }
        for op in TransformOp::ALL {
            let group: Vec<(usize, usize)> = items
                .iter()
                .enumerate()
                .filter_map(|(k, d)| match *d {
                    Derivation::Transform { op: o, parent } if o == op => Some((k, parent)),
                    _ => None,
                })
                .collect();
            if group.is_empty() {
                continue;
            }
            let p: Vec<usize> = group.iter().map(|g| g.1).collect();
            let a = self.rows(&p);
            let out = layers::transform(&mut self.tape, &self.model.layers.transform[op as usize], shape, a)?;
            let seg = self.segments.len();
            self.segments.push(out);
            for (row, g) in group.iter().enumerate() {
                placed[g.0] = (seg, row);
            }
        }
        debug_assert_eq!(self.index.len(), base);
        self.index.extend(placed);
        self.bank = None;
        Ok(())
    }

    fn infer(&mut self, ids: &[usize]) -> Result<Vec<f64>> {
        self.score(ids, false)
    }

    fn update_premise(&mut self, ids: &[usize]) -> Result<()> {
        let acc = self.rows(ids);
        self.premise = layers::premise_update(&mut self.tape, &self.model.layers.infer, self.model.shape(), self.premise, acc)?;
        Ok(())
    }

    fn answer(&mut self, ids: &[usize]) -> Result<Vec<f64>> {
        self.score(ids, true)
    }
}
