use super::{Derivation, ThoughtScorer};
use crate::error::Result;
use crate::expr::Expr;
use crate::problem::ProblemInstance;

/// Symbolic scorer. In containment mode infer is 1 exactly for
/// sub-expressions of the gold expression; in accept-all mode every
/// candidate scores 1. Answer is 1 for the gold expression, else 0.
pub struct OracleScorer {
    initial: Vec<Expr>,
    gold: Expr,
    accept_all: bool,
    exprs: Vec<Expr>,
}

impl OracleScorer {
    pub fn new(initial: Vec<Expr>, gold: Expr, accept_all: bool) -> Self {
        Self { initial, gold, accept_all, exprs: Vec::new() }
    }

    fn initial_for(problem: &ProblemInstance) -> Vec<Expr> {
        (0..problem.num_quantities())
            .map(Expr::quantity)
            .chain((0..problem.num_constants()).map(Expr::constant))
            .collect()
    }

    pub fn containment(problem: &ProblemInstance) -> Self {
        Self::new(Self::initial_for(problem), problem.gold.clone(), false)
    }

    pub fn accept_all(problem: &ProblemInstance) -> Self {
        Self::new(Self::initial_for(problem), problem.gold.clone(), true)
    }
}

impl ThoughtScorer for OracleScorer {
    fn initial(&mut self) -> Result<Vec<Expr>> {
        self.exprs = self.initial.clone();
        Ok(self.initial.clone())
    }

    fn derive(&mut self, items: &[Derivation]) -> Result<()> {
        for d in items {
            let e = match *d {
                Derivation::Transform { op, parent } => Expr::transform(op, self.exprs[parent].clone()),
                Derivation::Merge { op, left, right } => Expr::merge(op, self.exprs[left].clone(), self.exprs[right].clone()),
            };
            self.exprs.push(e);
        }
        Ok(())
    }

    fn infer(&mut self, ids: &[usize]) -> Result<Vec<f64>> {
        Ok(ids
            .iter()
            .map(|&i| if self.accept_all || self.gold.contains_sub(&self.exprs[i]) { 1.0 } else { 0.0 })
            .collect())
    }

    fn update_premise(&mut self, _ids: &[usize]) -> Result<()> {
        Ok(())
    }

    fn answer(&mut self, ids: &[usize]) -> Result<Vec<f64>> {
        Ok(ids.iter().map(|&i| if self.exprs[i] == self.gold { 1.0 } else { 0.0 }).collect())
    }
}
