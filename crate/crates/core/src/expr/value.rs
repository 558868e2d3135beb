//! Exact arithmetic over quantities.
//!
//! Values stay rational for as long as every operand is rational. A constant
//! such as pi forces the approximate branch; reciprocal of zero produces
//! [`Value::NonFinite`], which absorbs every later operation.

use std::fmt;
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Clone, Debug)]
pub enum Value {
    Exact(BigRational),
    Approx(f64),
    NonFinite,
}

impl Value {
    pub fn int(n: i64) -> Self {
        Value::Exact(BigRational::from_integer(BigInt::from(n)))
    }

    pub fn ratio(num: i64, den: i64) -> Self {
        Value::Exact(BigRational::new(BigInt::from(num), BigInt::from(den)))
    }

    /// Parses a decimal literal (`80`, `0.25`, `1/3`) exactly. `pi` and `π`
    /// map to the approximate value of pi.
    pub fn parse_literal(text: &str) -> Result<Self, Error> {
        let t = text.trim();
        if t.eq_ignore_ascii_case("pi") || t == "π" {
            return Ok(Value::Approx(std::f64::consts::PI));
        }
        if let Some(rest) = t.strip_prefix('-') {
            return match Value::parse_literal(rest)? {
                v @ Value::Exact(_) => Ok(v.neg()),
                _ => Err(Error::parse(t, "not a number")),
            };
        }
        if let Some((n, d)) = t.split_once('/') {
            let n = BigInt::from_str(n.trim()).map_err(|_| Error::parse(t, "bad numerator"))?;
            let d = BigInt::from_str(d.trim()).map_err(|_| Error::parse(t, "bad denominator"))?;
            if d.is_zero() {
                return Err(Error::parse(t, "zero denominator"));
            }
            return Ok(Value::Exact(BigRational::new(n, d)));
        }
        let (int_part, frac_part) = match t.split_once('.') {
            Some((i, f)) => (i, f),
            None => (t, ""),
        };
        let valid = |s: &str| s.chars().all(|c| c.is_ascii_digit());
        if (int_part.is_empty() && frac_part.is_empty()) || !valid(int_part) || !valid(frac_part) {
            return Err(Error::parse(t, "not a number"));
        }
        let digits = format!("{int_part}{frac_part}");
        let num = BigInt::from_str(if digits.is_empty() { "0" } else { &digits })
            .map_err(|_| Error::parse(t, "not a number"))?;
        let den = num_traits::pow(BigInt::from(10u32), frac_part.len());
        Ok(Value::Exact(BigRational::new(num, den)))
    }

    pub fn is_finite(&self) -> bool {
        match self {
            Value::Exact(_) => true,
            Value::Approx(v) => v.is_finite(),
            Value::NonFinite => false,
        }
    }

    pub fn to_f64(&self) -> f64 {
        match self {
            Value::Exact(r) => r.to_f64().unwrap_or(f64::NAN),
            Value::Approx(v) => *v,
            Value::NonFinite => f64::NAN,
        }
    }

    pub fn add(&self, other: &Value) -> Value {
        match (self, other) {
            (Value::NonFinite, _) | (_, Value::NonFinite) => Value::NonFinite,
            (Value::Exact(a), Value::Exact(b)) => Value::Exact(a + b),
            (a, b) => Value::approx(a.to_f64() + b.to_f64()),
        }
    }

    pub fn mul(&self, other: &Value) -> Value {
        match (self, other) {
            (Value::NonFinite, _) | (_, Value::NonFinite) => Value::NonFinite,
            (Value::Exact(a), Value::Exact(b)) => Value::Exact(a * b),
            (a, b) => Value::approx(a.to_f64() * b.to_f64()),
        }
    }

    pub fn neg(&self) -> Value {
        match self {
            Value::NonFinite => Value::NonFinite,
            Value::Exact(a) => Value::Exact(-a),
            Value::Approx(a) => Value::Approx(-a),
        }
    }

    pub fn recip(&self) -> Value {
        match self {
            Value::NonFinite => Value::NonFinite,
            Value::Exact(a) if a.is_zero() => Value::NonFinite,
            Value::Exact(a) => Value::Exact(a.recip()),
            Value::Approx(a) if *a == 0.0 => Value::NonFinite,
            Value::Approx(a) => Value::approx(1.0 / a),
        }
    }

    fn approx(v: f64) -> Value {
        if v.is_finite() {
            Value::Approx(v)
        } else {
            Value::NonFinite
        }
    }

    /// Relative-tolerance comparison used by answer accuracy. Non-finite
    /// values never match.
    pub fn approx_eq(&self, other: &Value, rel_tol: f64) -> bool {
        if !self.is_finite() || !other.is_finite() {
            return false;
        }
        if let (Value::Exact(a), Value::Exact(b)) = (self, other) {
            if a == b {
                return true;
            }
        }
        let (a, b) = (self.to_f64(), other.to_f64());
        (a - b).abs() <= rel_tol * b.abs().max(1.0)
    }

    /// Canonical literal text: integers print bare, other rationals as
    /// `num/den`, approximations with full precision.
    pub fn literal(&self) -> String {
        match self {
            Value::Exact(r) if r.is_integer() => r.numer().to_string(),
            Value::Exact(r) => format!("{}/{}", r.numer(), r.denom()),
            Value::Approx(v) => format!("{v}"),
            Value::NonFinite => "nan".to_string(),
        }
    }

    pub fn is_negative(&self) -> bool {
        match self {
            Value::Exact(r) => r.is_negative(),
            Value::Approx(v) => *v < 0.0,
            Value::NonFinite => false,
        }
    }
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Value::Exact(a), Value::Exact(b)) => a == b,
            (Value::Approx(a), Value::Approx(b)) => a == b,
            (Value::NonFinite, Value::NonFinite) => true,
            _ => false,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Exact(r) if r.is_integer() => write!(f, "{}", r.numer()),
            Value::Exact(r) => {
                let v = r.to_f64().unwrap_or(f64::NAN);
                write!(f, "{v}")
            }
            Value::Approx(v) => write!(f, "{v}"),
            Value::NonFinite => f.write_str("non-finite"),
        }
    }
}

impl Serialize for Value {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Value::Approx(v) if (*v - std::f64::consts::PI).abs() == 0.0 => s.serialize_str("pi"),
            other => s.serialize_str(&other.literal()),
        }
    }
}

impl<'de> Deserialize<'de> for Value {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        if text == "nan" {
            return Ok(Value::NonFinite);
        }
        if let Ok(v) = Value::parse_literal(&text) {
            return Ok(v);
        }
        let approx: f64 = text
            .parse()
            .map_err(|_| serde::de::Error::custom(format!("invalid value literal {text:?}")))?;
        Ok(Value::approx(approx))
    }
}
