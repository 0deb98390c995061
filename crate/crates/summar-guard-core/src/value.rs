//! Cell values with first-class null markers and literal equality.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

/// Scale used when a division or average does not terminate.
pub const MAX_SCALE: u32 = 9;

/// Surface token for the null marker in CSV files and the DSL.
pub const NULL_TOKEN: &str = "-";

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "type", content = "value")]
pub enum Value {
    Null,
    Number(Decimal),
    Text(String),
}

impl Value {
    pub fn text(s: impl Into<String>) -> Self {
        Value::Text(s.into())
    }

    pub fn number(s: &str) -> Option<Self> {
        parse_decimal(s).map(Value::Number)
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    pub fn as_decimal(&self) -> Option<Decimal> {
        match self {
            Value::Number(d) => Some(*d),
            _ => None,
        }
    }

    /// Parses a raw CSV/DSL cell. `-` and the empty string are Null.
    pub fn parse_cell(raw: &str, numeric: bool) -> Result<Self, String> {
        let raw = raw.trim();
        if raw.is_empty() || raw == NULL_TOKEN {
            return Ok(Value::Null);
        }
        if numeric {
            parse_decimal(raw)
                .map(Value::Number)
                .ok_or_else(|| format!("`{raw}` is not a number"))
        } else {
            Ok(Value::Text(raw.to_string()))
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Null => f.write_str(NULL_TOKEN),
            Value::Number(d) => write!(f, "{}", d.normalize()),
            Value::Text(s) => f.write_str(s),
        }
    }
}

pub fn parse_decimal(s: &str) -> Option<Decimal> {
    let d = Decimal::from_str(s.trim())
        .or_else(|_| Decimal::from_scientific(s.trim()))
        .ok()?;
    Some(if d.scale() > MAX_SCALE { d.round_dp(MAX_SCALE) } else { d })
}

/// `a ≡ b`: equal, or both null. Numbers compare by exact decimal value.
pub fn literal_eq(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Null, Value::Null) => true,
        (Value::Number(x), Value::Number(y)) => x == y,
        (Value::Text(x), Value::Text(y)) => x == y,
        _ => false,
    }
}

pub fn tuple_literal_eq(a: &[Value], b: &[Value]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| literal_eq(x, y))
}

/// Canonical key for hashing/grouping under literal equality. Decimals are
/// normalized so that `1.0` and `1` land in the same group.
pub fn key_of(v: &Value) -> Value {
    match v {
        Value::Number(d) => Value::Number(d.normalize()),
        other => other.clone(),
    }
}

pub fn tuple_key(vals: &[Value]) -> Vec<Value> {
    vals.iter().map(key_of).collect()
}

/// Ordering used by comparison predicates. `None` when either side is null
/// or the kinds differ.
pub fn compare(a: &Value, b: &Value) -> Option<Ordering> {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => Some(x.cmp(y)),
        (Value::Text(x), Value::Text(y)) => Some(x.cmp(y)),
        _ => None,
    }
}

/// Division rounded to [`MAX_SCALE`]; `None` on division by zero.
pub fn checked_div(a: Decimal, b: Decimal) -> Option<Decimal> {
    if b.is_zero() {
        return None;
    }
    a.checked_div(b).map(|q| q.round_dp(MAX_SCALE).normalize())
}
