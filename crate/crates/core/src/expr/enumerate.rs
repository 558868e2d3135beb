//! Symbolic replay of the depth-scheduled expansion with an arbitrary
//! acceptance predicate. With a "contained in gold" predicate the accepted
//! sets are the teacher-forcing ideal sets.

use std::collections::HashSet;

use serde::Serialize;

use super::{Expr, MergeOp, TransformOp};

#[derive(Clone, Debug, Serialize)]
pub struct EnumerationLevel {
    pub depth: usize,
    /// Candidates generated before deduplication.
    pub raw_count: usize,
    /// Deduplicated candidates in generation order.
    pub candidates: Vec<Expr>,
    /// Accumulated accepted set after this depth.
    pub accepted: Vec<Expr>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Enumeration {
    pub levels: Vec<EnumerationLevel>,
}

impl Enumeration {
    pub fn final_accepted(&self) -> &[Expr] {
        self.levels.last().map(|l| l.accepted.as_slice()).unwrap_or(&[])
    }
}

/// Enumerates candidate and accepted sets for depths `0..=max_depth`.
///
/// Depth 0 candidates are the quantities followed by the constants. Odd
/// depths transform every accepted expression; even depths merge every
/// unordered pair (with repetition) of accepted expressions. Candidates whose
/// canonical form was already produced at any earlier point are dropped.
pub fn oracle_enumerate(
    quantities: usize,
    constants: usize,
    max_depth: usize,
    filter: Option<&dyn Fn(&Expr) -> bool>,
) -> Enumeration {
    let accept = |e: &Expr| filter.is_none_or(|f| f(e));
    let initial: Vec<Expr> = (0..quantities)
        .map(Expr::quantity)
        .chain((0..constants).map(Expr::constant))
        .collect();
    let mut seen: HashSet<Expr> = initial.iter().cloned().collect();
    let accepted: Vec<Expr> = initial.iter().filter(|e| accept(e)).cloned().collect();
    let mut levels = vec![EnumerationLevel {
        depth: 0,
        raw_count: initial.len(),
        candidates: initial,
        accepted,
    }];

    for depth in 1..=max_depth {
        let prev = &levels[depth - 1].accepted;
        let mut raw = Vec::new();
        if depth % 2 == 1 {
            for e in prev {
                for op in TransformOp::ALL {
                    raw.push(Expr::transform(op, e.clone()));
                }
            }
        } else {
            for i in 0..prev.len() {
                for j in i..prev.len() {
                    for op in MergeOp::ALL {
                        raw.push(Expr::merge(op, prev[i].clone(), prev[j].clone()));
                    }
                }
            }
        }
        let raw_count = raw.len();
        let candidates: Vec<Expr> = raw.into_iter().filter(|e| seen.insert(e.clone())).collect();
        let mut accepted = prev.clone();
        accepted.extend(candidates.iter().filter(|e| accept(e)).cloned());
        levels.push(EnumerationLevel { depth, raw_count, candidates, accepted });
    }
    Enumeration { levels }
}
