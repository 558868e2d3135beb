//! Infix equation parsing and number binding.

use super::{Expr, QuantityEnv, Value};
use crate::error::Error;

#[derive(Clone, Debug, PartialEq)]
enum Token {
    Num(String),
    Plus,
    Minus,
    Times,
    Divide,
    Open,
    Close,
}

#[derive(Clone, Debug)]
enum Ast {
    Num(String),
    Neg(Box<Ast>),
    Add(Box<Ast>, Box<Ast>),
    Sub(Box<Ast>, Box<Ast>),
    Mul(Box<Ast>, Box<Ast>),
    Div(Box<Ast>, Box<Ast>),
}

fn strip_assignment(text: &str) -> &str {
    match text.split_once('=') {
        Some((lhs, rhs)) if lhs.trim().chars().all(|c| c.is_alphabetic()) && !lhs.trim().is_empty() => rhs,
        _ => text,
    }
}

fn tokenize(text: &str) -> Result<Vec<Token>, Error> {
    let mut out = Vec::new();
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        match c {
            c if c.is_whitespace() => {
                i += 1;
            }
            '0'..='9' | '.' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                    i += 1;
                }
                out.push(Token::Num(chars[start..i].iter().collect()));
            }
            'π' => {
                out.push(Token::Num("pi".into()));
                i += 1;
            }
            'p' | 'P' if chars.get(i + 1).is_some_and(|n| n.eq_ignore_ascii_case(&'i')) => {
                out.push(Token::Num("pi".into()));
                i += 2;
            }
            '+' => {
                out.push(Token::Plus);
                i += 1;
            }
            '-' | '−' | '–' => {
                out.push(Token::Minus);
                i += 1;
            }
            '*' | '×' | '·' => {
                out.push(Token::Times);
                i += 1;
            }
            '/' | '÷' => {
                out.push(Token::Divide);
                i += 1;
            }
            '(' | '[' | '{' => {
                out.push(Token::Open);
                i += 1;
            }
            ')' | ']' | '}' => {
                out.push(Token::Close);
                i += 1;
            }
            other => return Err(Error::parse(text, format!("unexpected character {other:?}"))),
        }
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    text: &'a str,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn expr(&mut self) -> Result<Ast, Error> {
        let mut lhs = self.term()?;
        while let Some(t) = self.peek() {
            match t {
                Token::Plus => {
                    self.pos += 1;
                    lhs = Ast::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Token::Minus => {
                    self.pos += 1;
                    lhs = Ast::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => break,
            }
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Ast, Error> {
        let mut lhs = self.unary()?;
        while let Some(t) = self.peek() {
            match t {
                Token::Times => {
                    self.pos += 1;
                    lhs = Ast::Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                Token::Divide => {
                    self.pos += 1;
                    lhs = Ast::Div(Box::new(lhs), Box::new(self.unary()?));
                }
                _ => break,
            }
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Ast, Error> {
        match self.peek() {
            Some(Token::Minus) => {
                self.pos += 1;
                Ok(Ast::Neg(Box::new(self.unary()?)))
            }
            Some(Token::Plus) => {
                self.pos += 1;
                self.unary()
            }
            _ => self.primary(),
        }
    }

    fn primary(&mut self) -> Result<Ast, Error> {
        match self.next() {
            Some(Token::Num(n)) => Ok(Ast::Num(n)),
            Some(Token::Open) => {
                let e = self.expr()?;
                match self.next() {
                    Some(Token::Close) => Ok(e),
                    _ => Err(Error::parse(self.text, "unbalanced parenthesis")),
                }
            }
            Some(t) => Err(Error::parse(self.text, format!("unexpected token {t:?}"))),
            None => Err(Error::parse(self.text, "unexpected end of equation")),
        }
    }
}

fn parse_ast(text: &str) -> Result<Ast, Error> {
    let body = strip_assignment(text);
    let tokens = tokenize(body)?;
    if tokens.is_empty() {
        return Err(Error::parse(text, "empty equation"));
    }
    let mut p = Parser { tokens, pos: 0, text };
    let ast = p.expr()?;
    if p.pos != p.tokens.len() {
        return Err(Error::parse(text, "trailing tokens"));
    }
    Ok(ast)
}

/// A leaf of a provisionally parsed equation: either bound to a problem
/// quantity or left as a bare literal.
#[derive(Clone, Debug, PartialEq)]
pub enum ProvisionalLeaf {
    Quantity(usize),
    Unbound(Value),
}

/// Binds numbers by value and order: the k-th use of a value takes the first
/// quantity with that value not yet used by this equation, falling back to
/// the first such quantity once all are used.
struct Binder<'a> {
    quantities: &'a [Value],
    used: Vec<bool>,
}

impl Binder<'_> {
    fn bind(&mut self, v: &Value) -> Option<usize> {
        let mut first = None;
        for (i, q) in self.quantities.iter().enumerate() {
            if q == v {
                if !self.used[i] {
                    self.used[i] = true;
                    return Some(i);
                }
                first.get_or_insert(i);
            }
        }
        first
    }
}

/// Parses a gold equation, returning the numbers that could not be bound to
/// any problem quantity. Used to harvest constants from a training set.
pub fn parse_equation_provisional(text: &str, quantities: &[Value]) -> Result<Vec<ProvisionalLeaf>, Error> {
    let ast = parse_ast(text)?;
    let mut binder = Binder { quantities, used: vec![false; quantities.len()] };
    let mut leaves = Vec::new();
    collect_leaves(&ast, &mut |lit| {
        let v = Value::parse_literal(lit)?;
        leaves.push(match binder.bind(&v) {
            Some(i) => ProvisionalLeaf::Quantity(i),
            None => ProvisionalLeaf::Unbound(v),
        });
        Ok(())
    })?;
    Ok(leaves)
}

fn collect_leaves(ast: &Ast, f: &mut dyn FnMut(&str) -> Result<(), Error>) -> Result<(), Error> {
    match ast {
        Ast::Num(n) => f(n),
        Ast::Neg(a) => collect_leaves(a, f),
        Ast::Add(a, b) | Ast::Sub(a, b) | Ast::Mul(a, b) | Ast::Div(a, b) => {
            collect_leaves(a, f)?;
            collect_leaves(b, f)
        }
    }
}

/// Parses an infix equation into canonical form, binding numbers to the
/// environment's quantities (preferred) or constants.
pub fn parse_equation(text: &str, env: &QuantityEnv) -> Result<Expr, Error> {
    let ast = parse_ast(text)?;
    let mut binder = Binder { quantities: &env.quantities, used: vec![false; env.quantities.len()] };
    lower(&ast, env, &mut binder)
}

fn lower(ast: &Ast, env: &QuantityEnv, binder: &mut Binder<'_>) -> Result<Expr, Error> {
    Ok(match ast {
        Ast::Num(lit) => {
            let v = Value::parse_literal(lit)?;
            if let Some(i) = binder.bind(&v) {
                Expr::quantity(i)
            } else if let Some(i) = env.constants.position(&v) {
                Expr::constant(i)
            } else {
                return Err(Error::UnboundNumber(lit.clone()));
            }
        }
        Ast::Neg(a) => Expr::neg(lower(a, env, binder)?),
        Ast::Add(a, b) => {
            let a = lower(a, env, binder)?;
            Expr::add(a, lower(b, env, binder)?)
        }
        Ast::Sub(a, b) => {
            let a = lower(a, env, binder)?;
            Expr::add(a, Expr::neg(lower(b, env, binder)?))
        }
        Ast::Mul(a, b) => {
            let a = lower(a, env, binder)?;
            Expr::mul(a, lower(b, env, binder)?)
        }
        Ast::Div(a, b) => {
            let a = lower(a, env, binder)?;
            Expr::mul(a, Expr::inv(lower(b, env, binder)?))
        }
    })
}
