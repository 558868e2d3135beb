//! Depth-scheduled thought expansion.
//!
//! Odd depths transform every accepted thought, even depths merge every
//! unordered pair of accepted thoughts. Candidates are deduplicated against
//! every expression seen so far, scored against the current premise, and
//! the accepted ones join the accumulated reasonable set. The loop stops at
//! the depth limit or as soon as an answer score exceeds the confidence
//! threshold; the final thought is the accepted thought with the highest
//! answer score.

mod neural;
mod oracle;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{Expr, MergeOp, TransformOp};
use crate::model::Model;
use crate::problem::ProblemInstance;

pub use neural::NeuralScorer;
pub use oracle::OracleScorer;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScorerKind {
    #[default]
    Neural,
    /// Accept thoughts contained in the gold expression.
    Oracle,
}

/// What the premise is updated with before each depth.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PremiseMode {
    /// The whole accumulated reasonable set.
    #[default]
    Accumulated,
    /// Only the thoughts accepted at the previous depth.
    NewOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub max_depth: usize,
    /// Candidates with infer score `>=` this are accepted.
    pub accept_threshold: f64,
    /// Expansion stops once an answer score is `>` this.
    pub confidence_threshold: f64,
    /// Maximum deduplicated candidates per depth.
    pub candidate_cap: usize,
    pub premise_mode: PremiseMode,
    pub scorer: ScorerKind,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            max_depth: 6,
            accept_threshold: 0.5,
            confidence_threshold: 0.95,
            candidate_cap: 5000,
            premise_mode: PremiseMode::Accumulated,
            scorer: ScorerKind::Neural,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        let open = |x: f64| x > 0.0 && x < 1.0;
        if !open(self.accept_threshold) || !open(self.confidence_threshold) {
            return Err(Error::Config("thresholds must lie strictly between 0 and 1".into()));
        }
        if self.candidate_cap == 0 {
            return Err(Error::Config("candidate cap must be positive".into()));
        }
        Ok(())
    }
}

/// How a candidate is built from accepted thoughts (by id).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Derivation {
    Transform { op: TransformOp, parent: usize },
    Merge { op: MergeOp, left: usize, right: usize },
}

/// Scores thoughts identified by creation order: ids `0..|Θ0|` are the
/// initial thoughts, later ids follow [`ThoughtScorer::derive`] calls.
pub trait ThoughtScorer {
    /// Registers the initial thoughts and returns their expressions.
    fn initial(&mut self) -> Result<Vec<Expr>>;
    fn derive(&mut self, items: &[Derivation]) -> Result<()>;
    fn infer(&mut self, ids: &[usize]) -> Result<Vec<f64>>;
    fn update_premise(&mut self, ids: &[usize]) -> Result<()>;
    fn answer(&mut self, ids: &[usize]) -> Result<Vec<f64>>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceThought {
    pub expr: Expr,
    pub depth: usize,
    pub derivation: Option<Derivation>,
    pub infer: Option<f64>,
    pub answer: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceLevel {
    pub depth: usize,
    /// Candidates generated before deduplication.
    pub raw_count: usize,
    /// Thought ids of the deduplicated candidates.
    pub candidates: Vec<usize>,
    /// Candidates accepted at this depth.
    pub newly_accepted: Vec<usize>,
    /// Accumulated reasonable set after this depth.
    pub accepted: Vec<usize>,
    /// Premise length the candidates were scored against.
    pub premise_len: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    DepthExhausted,
    Confidence,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpansionTrace {
    pub thoughts: Vec<TraceThought>,
    pub levels: Vec<TraceLevel>,
    pub termination: Termination,
    pub final_thought: usize,
    /// True when no initial thought passed the filter and all were kept.
    pub fallback_initial: bool,
}

impl ExpansionTrace {
    pub fn final_expr(&self) -> &Expr {
        &self.thoughts[self.final_thought].expr
    }

    pub fn final_depth(&self) -> usize {
        self.levels.last().map_or(0, |l| l.depth)
    }

    pub fn candidate_exprs(&self, depth: usize) -> Vec<&Expr> {
        self.levels[depth].candidates.iter().map(|&i| &self.thoughts[i].expr).collect()
    }

    pub fn accepted_exprs(&self, depth: usize) -> Vec<&Expr> {
        self.levels[depth].accepted.iter().map(|&i| &self.thoughts[i].expr).collect()
    }

    /// Total deduplicated candidates over all depths, initial thoughts
    /// included.
    pub fn total_candidates(&self) -> usize {
        self.levels.iter().map(|l| l.candidates.len()).sum()
    }
}

/// Expansion state of one problem.
pub struct Expansion<'a, S: ThoughtScorer + ?Sized> {
    scorer: &'a mut S,
    config: &'a EngineConfig,
    teacher: Option<Expr>,
    thoughts: Vec<TraceThought>,
    seen: HashSet<Expr>,
    accepted: Vec<usize>,
    newly: Vec<usize>,
    premise_len: usize,
    depth: usize,
    levels: Vec<TraceLevel>,
    confident: bool,
    fallback: bool,
}

impl<'a, S: ThoughtScorer + ?Sized> Expansion<'a, S> {
    /// Scores the initial thoughts. With `teacher` set, acceptance follows
    /// containment in the teacher expression, confidence stopping is off,
    /// and answer scores are computed once for the final reasonable set.
    pub fn start(scorer: &'a mut S, config: &'a EngineConfig, teacher: Option<&Expr>) -> Result<Self> {
        config.validate()?;
        let initial = scorer.initial()?;
        if initial.is_empty() {
            return Err(Error::NoThoughts);
        }
        let mut this = Self {
            scorer,
            config,
            teacher: teacher.cloned(),
            seen: initial.iter().cloned().collect(),
            thoughts: initial
                .into_iter()
                .map(|expr| TraceThought { expr, depth: 0, derivation: None, infer: None, answer: None })
                .collect(),
            accepted: Vec::new(),
            newly: Vec::new(),
            premise_len: 1,
            depth: 0,
            levels: Vec::new(),
            confident: false,
            fallback: false,
        };
        let ids: Vec<usize> = (0..this.thoughts.len()).collect();
        let mut newly = this.score_and_filter(&ids)?;
        if newly.is_empty() {
            tracing::debug!("no initial thought accepted; keeping all");
            newly = ids.clone();
            this.fallback = true;
        }
        let raw = ids.len();
        this.accept(ids, newly, raw)?;
        Ok(this)
    }

    fn score_and_filter(&mut self, ids: &[usize]) -> Result<Vec<usize>> {
        if ids.is_empty() {
            return Ok(Vec::new());
        }
        let scores = self.scorer.infer(ids)?;
        for (&id, &s) in ids.iter().zip(&scores) {
            self.thoughts[id].infer = Some(s);
        }
        Ok(ids
            .iter()
            .zip(&scores)
            .filter(|(&id, &s)| match &self.teacher {
                Some(gold) => gold.contains_sub(&self.thoughts[id].expr),
                None => s >= self.config.accept_threshold,
            })
            .map(|(&id, _)| id)
            .collect())
    }

    fn accept(&mut self, candidates: Vec<usize>, newly: Vec<usize>, raw_count: usize) -> Result<()> {
        self.accepted.extend(&newly);
        if self.teacher.is_none() && !newly.is_empty() {
            let scores = self.scorer.answer(&newly)?;
            for (&id, &s) in newly.iter().zip(&scores) {
                self.thoughts[id].answer = Some(s);
            }
            self.confident = scores.iter().any(|&s| s > self.config.confidence_threshold);
        }
        self.levels.push(TraceLevel {
            depth: self.depth,
            raw_count,
            candidates,
            newly_accepted: newly.clone(),
            accepted: self.accepted.clone(),
            premise_len: self.premise_len,
        });
        self.newly = newly;
        Ok(())
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn is_done(&self) -> bool {
        self.depth >= self.config.max_depth || self.confident
    }

    /// One iteration: premise update with the previous reasonable set,
    /// candidate generation for the next depth, scoring and acceptance.
    pub fn step(&mut self) -> Result<&TraceLevel> {
        let update = match self.config.premise_mode {
            PremiseMode::Accumulated => self.accepted.clone(),
            PremiseMode::NewOnly => self.newly.clone(),
        };
        if !update.is_empty() {
            self.scorer.update_premise(&update)?;
            self.premise_len += update.len();
        }
        self.depth += 1;
        let depth = self.depth;

        let mut items = Vec::new();
        let mut raw_count = 0;
        let cap = self.config.candidate_cap;
        let mut push = |d: Derivation, e: Expr, seen: &mut HashSet<Expr>, thoughts: &mut Vec<TraceThought>| -> Result<()> {
            raw_count += 1;
            if seen.insert(e.clone()) {
                items.push(d);
                thoughts.push(TraceThought { expr: e, depth, derivation: Some(d), infer: None, answer: None });
                if items.len() > cap {
                    return Err(Error::CandidateCap { depth, count: items.len(), cap });
                }
            }
            Ok(())
        };
        let base = self.thoughts.len();
        let acc = &self.accepted;
        if depth % 2 == 1 {
            for &id in acc {
                for op in TransformOp::ALL {
                    let e = Expr::transform(op, self.thoughts[id].expr.clone());
                    push(Derivation::Transform { op, parent: id }, e, &mut self.seen, &mut self.thoughts)?;
                }
            }
        } else {
            for i in 0..acc.len() {
                for j in i..acc.len() {
                    for op in MergeOp::ALL {
                        let e = Expr::merge(op, self.thoughts[acc[i]].expr.clone(), self.thoughts[acc[j]].expr.clone());
                        push(Derivation::Merge { op, left: acc[i], right: acc[j] }, e, &mut self.seen, &mut self.thoughts)?;
                    }
                }
            }
        }
        if !items.is_empty() {
            self.scorer.derive(&items)?;
        }
        let ids: Vec<usize> = (base..self.thoughts.len()).collect();
        let newly = self.score_and_filter(&ids)?;
        self.accept(ids, newly, raw_count)?;
        Ok(self.levels.last().expect("level recorded"))
    }

    pub fn finish(mut self) -> Result<ExpansionTrace> {
        if self.teacher.is_some() {
            let ids = self.accepted.clone();
            let scores = self.scorer.answer(&ids)?;
            for (&id, &s) in ids.iter().zip(&scores) {
                self.thoughts[id].answer = Some(s);
            }
        }
        let mut best = self.accepted[0];
        for &id in &self.accepted {
            let score = |i: usize| self.thoughts[i].answer.unwrap_or(f64::NEG_INFINITY);
            if score(id) > score(best) {
                best = id;
            }
        }
        Ok(ExpansionTrace {
            thoughts: self.thoughts,
            levels: self.levels,
            termination: if self.confident { Termination::Confidence } else { Termination::DepthExhausted },
            final_thought: best,
            fallback_initial: self.fallback,
        })
    }
}

/// Runs the expansion to completion.
pub fn expand<S: ThoughtScorer + ?Sized>(scorer: &mut S, config: &EngineConfig, teacher: Option<&Expr>) -> Result<ExpansionTrace> {
    let mut e = Expansion::start(scorer, config, teacher)?;
    while !e.is_done() {
        e.step()?;
    }
    e.finish()
}

/// Solves one problem with the scorer chosen by `config`.
pub fn solve(problem: &ProblemInstance, model: &Model, config: &EngineConfig) -> Result<ExpansionTrace> {
    match config.scorer {
        ScorerKind::Oracle => solve_oracle(problem, config),
        ScorerKind::Neural => {
            let mut scorer = NeuralScorer::new(model, problem, model.tape())?;
            expand(&mut scorer, config, None)
        }
    }
}

/// Solves with the containment oracle; no model needed.
pub fn solve_oracle(problem: &ProblemInstance, config: &EngineConfig) -> Result<ExpansionTrace> {
    let mut scorer = OracleScorer::containment(problem);
    expand(&mut scorer, config, None)
}

#[cfg(test)]
mod tests;
