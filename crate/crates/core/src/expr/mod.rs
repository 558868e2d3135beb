//! Symbolic arithmetic expressions over problem quantities and constants.
//!
//! Subtraction and division do not exist as node kinds: `a - b` is
//! `a + (-b)` and `a / b` is `a * b⁻¹`. Canonical form orders the operands
//! of `+` and `*` by their prefix serialization and collapses double
//! negation and double reciprocal.

mod enumerate;
mod env;
mod parse;
mod value;

use std::cmp::Ordering;
use std::fmt;
use std::sync::Arc;

pub use enumerate::{oracle_enumerate, EnumerationLevel, Enumeration};
pub use env::{Constant, ConstantVocabulary, QuantityEnv};
pub use parse::{parse_equation, parse_equation_provisional, ProvisionalLeaf};
pub use value::Value;

use crate::error::Error;

/// Binary merge operators.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum MergeOp {
    Add,
    Mul,
}

/// Unary transform operators.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum TransformOp {
    Neg,
    Inv,
}

impl MergeOp {
    pub const ALL: [MergeOp; 2] = [MergeOp::Add, MergeOp::Mul];
}

impl TransformOp {
    pub const ALL: [TransformOp; 2] = [TransformOp::Neg, TransformOp::Inv];
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Expr {
    Quantity(usize),
    Constant(usize),
    Neg(Arc<Expr>),
    Inv(Arc<Expr>),
    Add(Arc<Expr>, Arc<Expr>),
    Mul(Arc<Expr>, Arc<Expr>),
}

impl Expr {
    pub fn quantity(index: usize) -> Self {
        Expr::Quantity(index)
    }

    pub fn constant(index: usize) -> Self {
        Expr::Constant(index)
    }

    /// Canonical negation of a canonical operand.
    pub fn neg(e: Expr) -> Self {
        match e {
            Expr::Neg(inner) => Arc::unwrap_or_clone(inner),
            other => Expr::Neg(Arc::new(other)),
        }
    }

    /// Canonical reciprocal of a canonical operand.
    pub fn inv(e: Expr) -> Self {
        match e {
            Expr::Inv(inner) => Arc::unwrap_or_clone(inner),
            other => Expr::Inv(Arc::new(other)),
        }
    }

    pub fn add(a: Expr, b: Expr) -> Self {
        let (a, b) = ordered(a, b);
        Expr::Add(Arc::new(a), Arc::new(b))
    }

    pub fn mul(a: Expr, b: Expr) -> Self {
        let (a, b) = ordered(a, b);
        Expr::Mul(Arc::new(a), Arc::new(b))
    }

    pub fn merge(op: MergeOp, a: Expr, b: Expr) -> Self {
        match op {
            MergeOp::Add => Expr::add(a, b),
            MergeOp::Mul => Expr::mul(a, b),
        }
    }

    pub fn transform(op: TransformOp, a: Expr) -> Self {
        match op {
            TransformOp::Neg => Expr::neg(a),
            TransformOp::Inv => Expr::inv(a),
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, Expr::Quantity(_) | Expr::Constant(_))
    }

    pub fn is_unary(&self) -> bool {
        matches!(self, Expr::Neg(_) | Expr::Inv(_))
    }

    pub fn is_binary(&self) -> bool {
        matches!(self, Expr::Add(..) | Expr::Mul(..))
    }

    /// Number of nodes.
    pub fn size(&self) -> usize {
        match self {
            Expr::Quantity(_) | Expr::Constant(_) => 1,
            Expr::Neg(a) | Expr::Inv(a) => 1 + a.size(),
            Expr::Add(a, b) | Expr::Mul(a, b) => 1 + a.size() + b.size(),
        }
    }

    /// Recomputes canonical form bottom-up. Idempotent.
    pub fn canonical_form(&self) -> Expr {
        match self {
            Expr::Quantity(_) | Expr::Constant(_) => self.clone(),
            Expr::Neg(a) => Expr::neg(a.canonical_form()),
            Expr::Inv(a) => Expr::inv(a.canonical_form()),
            Expr::Add(a, b) => Expr::add(a.canonical_form(), b.canonical_form()),
            Expr::Mul(a, b) => Expr::mul(a.canonical_form(), b.canonical_form()),
        }
    }

    pub fn is_canonical(&self) -> bool {
        *self == self.canonical_form()
    }

    /// Prefix serialization, e.g. `(+ (* q0 q1) c0)`.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        self.write_prefix(&mut out);
        out
    }

    fn write_prefix(&self, out: &mut String) {
        use std::fmt::Write;
        match self {
            Expr::Quantity(i) => {
                let _ = write!(out, "q{i}");
            }
            Expr::Constant(i) => {
                let _ = write!(out, "c{i}");
            }
            Expr::Neg(a) => {
                out.push_str("(neg ");
                a.write_prefix(out);
                out.push(')');
            }
            Expr::Inv(a) => {
                out.push_str("(inv ");
                a.write_prefix(out);
                out.push(')');
            }
            Expr::Add(a, b) | Expr::Mul(a, b) => {
                out.push_str(if matches!(self, Expr::Add(..)) { "(+ " } else { "(* " });
                a.write_prefix(out);
                out.push(' ');
                b.write_prefix(out);
                out.push(')');
            }
        }
    }

    /// Parses the prefix serialization produced by [`Expr::serialize`]. The
    /// result is canonicalized.
    pub fn from_prefix(text: &str) -> Result<Expr, Error> {
        let tokens: Vec<String> = text
            .replace('(', " ( ")
            .replace(')', " ) ")
            .split_whitespace()
            .map(str::to_string)
            .collect();
        let mut pos = 0;
        let e = parse_prefix(&tokens, &mut pos, text)?;
        if pos != tokens.len() {
            return Err(Error::parse(text, "trailing input"));
        }
        Ok(e.canonical_form())
    }

    /// Visits every subtree, including the root.
    pub fn subtrees(&self) -> Vec<&Expr> {
        let mut out = Vec::new();
        let mut stack = vec![self];
        while let Some(e) = stack.pop() {
            out.push(e);
            match e {
                Expr::Quantity(_) | Expr::Constant(_) => {}
                Expr::Neg(a) | Expr::Inv(a) => stack.push(a),
                Expr::Add(a, b) | Expr::Mul(a, b) => {
                    stack.push(a);
                    stack.push(b);
                }
            }
        }
        out
    }

    /// Canonical containment: `needle ⊆ self`.
    pub fn contains_sub(&self, needle: &Expr) -> bool {
        contains_sub(needle, self)
    }

    /// Minimum expansion depth at which this expression can be built when
    /// transforms run at odd depths, merges at even depths, and accepted sets
    /// accumulate.
    pub fn required_depth(&self) -> usize {
        required_depth(self)
    }

    /// Evaluates in exact arithmetic where possible.
    pub fn evaluate(&self, env: &QuantityEnv) -> Result<Value, Error> {
        Ok(match self {
            Expr::Quantity(i) => env
                .quantities
                .get(*i)
                .cloned()
                .ok_or_else(|| Error::UnboundLeaf(format!("q{i}")))?,
            Expr::Constant(i) => env
                .constants
                .get(*i)
                .map(|c| c.value.clone())
                .ok_or_else(|| Error::UnboundLeaf(format!("c{i}")))?,
            Expr::Neg(a) => a.evaluate(env)?.neg(),
            Expr::Inv(a) => a.evaluate(env)?.recip(),
            Expr::Add(a, b) => a.evaluate(env)?.add(&b.evaluate(env)?),
            Expr::Mul(a, b) => a.evaluate(env)?.mul(&b.evaluate(env)?),
        })
    }

    /// Human-readable infix rendering with `-` and `/` restored.
    pub fn to_infix(&self, leaf: &dyn Fn(&Expr) -> String) -> String {
        match self {
            Expr::Quantity(_) | Expr::Constant(_) => leaf(self),
            Expr::Neg(a) => format!("-{}", wrap(a, leaf, !a.is_leaf())),
            Expr::Inv(a) => format!("1 / {}", wrap(a, leaf, !a.is_leaf())),
            Expr::Add(a, b) => match (&**a, &**b) {
                (x, Expr::Neg(y)) if !x.is_unary() => {
                    format!("{} - {}", x.to_infix(leaf), wrap(y, leaf, matches!(**y, Expr::Add(..))))
                }
                (Expr::Neg(y), x) if !x.is_unary() => {
                    format!("{} - {}", x.to_infix(leaf), wrap(y, leaf, matches!(**y, Expr::Add(..))))
                }
                _ => format!("{} + {}", a.to_infix(leaf), b.to_infix(leaf)),
            },
            Expr::Mul(a, b) => {
                let factor = |e: &Expr| wrap(e, leaf, matches!(e, Expr::Add(..) | Expr::Neg(_)));
                match (&**a, &**b) {
                    (x, Expr::Inv(y)) if !x.is_unary() => {
                        format!("{} / {}", factor(x), wrap(y, leaf, !y.is_leaf()))
                    }
                    (Expr::Inv(y), x) if !x.is_unary() => {
                        format!("{} / {}", factor(x), wrap(y, leaf, !y.is_leaf()))
                    }
                    _ => format!("{} * {}", factor(a), factor(b)),
                }
            }
        }
    }

    /// Infix rendering that names leaves `q0`, `c0`, ...
    pub fn to_infix_symbolic(&self) -> String {
        self.to_infix(&|e| e.serialize())
    }
}

fn wrap(e: &Expr, leaf: &dyn Fn(&Expr) -> String, paren: bool) -> String {
    if paren {
        format!("({})", e.to_infix(leaf))
    } else {
        e.to_infix(leaf)
    }
}

fn ordered(a: Expr, b: Expr) -> (Expr, Expr) {
    if canonical_order(&a, &b) == Ordering::Greater {
        (b, a)
    } else {
        (a, b)
    }
}

/// Total order on expressions: lexicographic order of prefix serializations.
pub fn canonical_order(a: &Expr, b: &Expr) -> Ordering {
    if a == b {
        return Ordering::Equal;
    }
    a.serialize().cmp(&b.serialize())
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.serialize())
    }
}

impl serde::Serialize for Expr {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&Expr::serialize(self))
    }
}

impl<'de> serde::Deserialize<'de> for Expr {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        Expr::from_prefix(&text).map_err(serde::de::Error::custom)
    }
}

fn parse_prefix(tokens: &[String], pos: &mut usize, text: &str) -> Result<Expr, Error> {
    let tok = tokens.get(*pos).ok_or_else(|| Error::parse(text, "unexpected end"))?;
    *pos += 1;
    if tok == "(" {
        let op = tokens
            .get(*pos)
            .ok_or_else(|| Error::parse(text, "missing operator"))?
            .clone();
        *pos += 1;
        let a = parse_prefix(tokens, pos, text)?;
        let e = match op.as_str() {
            "neg" => Expr::Neg(Arc::new(a)),
            "inv" => Expr::Inv(Arc::new(a)),
            "+" | "*" => {
                let b = parse_prefix(tokens, pos, text)?;
                if op == "+" {
                    Expr::Add(Arc::new(a), Arc::new(b))
                } else {
                    Expr::Mul(Arc::new(a), Arc::new(b))
                }
            }
            _ => return Err(Error::parse(text, "unknown operator")),
        };
        if tokens.get(*pos).map(String::as_str) != Some(")") {
            return Err(Error::parse(text, "expected ')'"));
        }
        *pos += 1;
        return Ok(e);
    }
    let index = |s: &str| s.parse::<usize>().map_err(|_| Error::parse(text, "bad leaf index"));
    if let Some(rest) = tok.strip_prefix('q') {
        Ok(Expr::Quantity(index(rest)?))
    } else if let Some(rest) = tok.strip_prefix('c') {
        Ok(Expr::Constant(index(rest)?))
    } else {
        Err(Error::parse(text, "unknown leaf"))
    }
}

/// True iff the canonical form of `needle` equals some subtree of the
/// canonical form of `hay`.
pub fn contains_sub(needle: &Expr, hay: &Expr) -> bool {
    let needle = needle.canonical_form();
    let hay = hay.canonical_form();
    hay.subtrees().into_iter().any(|s| *s == needle)
}

pub fn required_depth(e: &Expr) -> usize {
    match e {
        Expr::Quantity(_) | Expr::Constant(_) => 0,
        Expr::Neg(a) | Expr::Inv(a) => next_with_parity(required_depth(a), 1),
        Expr::Add(a, b) | Expr::Mul(a, b) => {
            next_with_parity(required_depth(a).max(required_depth(b)), 0)
        }
    }
}

/// Smallest d > after with d % 2 == parity.
fn next_with_parity(after: usize, parity: usize) -> usize {
    let d = after + 1;
    if d % 2 == parity {
        d
    } else {
        d + 1
    }
}

#[cfg(test)]
pub(crate) use tests::playground_gold;
