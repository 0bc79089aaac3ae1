//! Dynamic values, records and tables.
//!
//! `Missing` (attribute absent) and `Null` (attribute present, explicitly
//! null) are separate variants. Target dialects test them differently, so the
//! distinction has to survive all the way from the JSON loader to the
//! executors.

use std::cmp::Ordering;
use std::fmt;

use serde_json::{Map, Number};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Missing,
    Null,
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
}

impl Value {
    pub fn is_missing(&self) -> bool {
        matches!(self, Value::Missing)
    }

    /// True for both `Null` and `Missing`.
    pub fn is_unknown(&self) -> bool {
        matches!(self, Value::Missing | Value::Null)
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self, Value::Int(_) | Value::Float(_))
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(i) => Some(*i as f64),
            Value::Float(f) => Some(*f),
            _ => None,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match self {
            Value::Int(i) => Some(*i),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            Value::Missing => "missing",
            Value::Null => "null",
            Value::Bool(_) => "bool",
            Value::Int(_) => "int",
            Value::Float(_) => "float",
            Value::Str(_) => "string",
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Missing => f.write_str("MISSING"),
            Value::Null => f.write_str("NULL"),
            Value::Bool(b) => write!(f, "{b}"),
            Value::Int(i) => write!(f, "{i}"),
            Value::Float(x) => write!(f, "{x:?}"),
            Value::Str(s) => write!(f, "{s:?}"),
        }
    }
}

impl From<i64> for Value {
    fn from(v: i64) -> Self {
        Value::Int(v)
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Float(v)
    }
}

impl From<bool> for Value {
    fn from(v: bool) -> Self {
        Value::Bool(v)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Str(v.to_string())
    }
}

impl From<String> for Value {
    fn from(v: String) -> Self {
        Value::Str(v)
    }
}

fn type_bracket(v: &Value) -> u8 {
    match v {
        Value::Missing => 0,
        Value::Null => 1,
        Value::Int(_) | Value::Float(_) => 2,
        Value::Str(_) => 3,
        Value::Bool(_) => 4,
    }
}

/// Exact comparison of an integer with a float. NaN sorts below every number.
fn cmp_int_float(i: i64, f: f64) -> Ordering {
    if f.is_nan() {
        return Ordering::Greater;
    }
    // 2^63 is exactly representable; everything at or beyond it exceeds i64.
    const TWO_63: f64 = 9_223_372_036_854_775_808.0;
    if f >= TWO_63 {
        return Ordering::Less;
    }
    if f < -TWO_63 {
        return Ordering::Greater;
    }
    let whole = f.trunc();
    match i.cmp(&(whole as i64)) {
        Ordering::Equal => {
            let frac = f - whole;
            if frac > 0.0 {
                Ordering::Less
            } else if frac < 0.0 {
                Ordering::Greater
            } else {
                Ordering::Equal
            }
        }
        other => other,
    }
}

fn cmp_float(a: f64, b: f64) -> Ordering {
    match (a.is_nan(), b.is_nan()) {
        (true, true) => Ordering::Equal,
        (true, false) => Ordering::Less,
        (false, true) => Ordering::Greater,
        // -0.0 == 0.0 numerically
        (false, false) => a.partial_cmp(&b).unwrap_or(Ordering::Equal),
    }
}

/// Total order used by the pipeline dialect:
/// `MISSING < NULL < numbers < strings < booleans`.
///
/// Integers and floats share one bracket and compare numerically; strings
/// compare by bytes.
pub fn mongo_total_order(a: &Value, b: &Value) -> Ordering {
    let (ba, bb) = (type_bracket(a), type_bracket(b));
    if ba != bb {
        return ba.cmp(&bb);
    }
    match (a, b) {
        (Value::Int(x), Value::Int(y)) => x.cmp(y),
        (Value::Int(x), Value::Float(y)) => cmp_int_float(*x, *y),
        (Value::Float(x), Value::Int(y)) => cmp_int_float(*y, *x).reverse(),
        (Value::Float(x), Value::Float(y)) => cmp_float(*x, *y),
        (Value::Str(x), Value::Str(y)) => x.as_bytes().cmp(y.as_bytes()),
        (Value::Bool(x), Value::Bool(y)) => x.cmp(y),
        _ => Ordering::Equal,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CompareOp {
    Eq,
    Ne,
    Gt,
    Lt,
    Ge,
    Le,
}

impl CompareOp {
    pub const ALL: [CompareOp; 6] = [
        CompareOp::Eq,
        CompareOp::Ne,
        CompareOp::Gt,
        CompareOp::Lt,
        CompareOp::Ge,
        CompareOp::Le,
    ];

    /// Rule key used in the COMPARISON STATEMENTS section.
    pub fn key(self) -> &'static str {
        match self {
            CompareOp::Eq => "eq",
            CompareOp::Ne => "ne",
            CompareOp::Gt => "gt",
            CompareOp::Lt => "lt",
            CompareOp::Ge => "ge",
            CompareOp::Le => "le",
        }
    }

    pub fn holds(self, ord: Ordering) -> bool {
        match self {
            CompareOp::Eq => ord == Ordering::Equal,
            CompareOp::Ne => ord != Ordering::Equal,
            CompareOp::Gt => ord == Ordering::Greater,
            CompareOp::Lt => ord == Ordering::Less,
            CompareOp::Ge => ord != Ordering::Less,
            CompareOp::Le => ord != Ordering::Greater,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tristate {
    True,
    False,
    Unknown,
}

impl Tristate {
    pub fn and(self, other: Tristate) -> Tristate {
        use Tristate::*;
        match (self, other) {
            (False, _) | (_, False) => False,
            (True, True) => True,
            _ => Unknown,
        }
    }

    pub fn or(self, other: Tristate) -> Tristate {
        use Tristate::*;
        match (self, other) {
            (True, _) | (_, True) => True,
            (False, False) => False,
            _ => Unknown,
        }
    }

    pub fn from_value(v: &Value) -> Tristate {
        match v {
            Value::Bool(true) => Tristate::True,
            Value::Bool(false) => Tristate::False,
            _ => Tristate::Unknown,
        }
    }

    pub fn to_value(self) -> Value {
        match self {
            Tristate::True => Value::Bool(true),
            Tristate::False => Value::Bool(false),
            Tristate::Unknown => Value::Null,
        }
    }
}

impl std::ops::Not for Tristate {
    type Output = Tristate;

    fn not(self) -> Tristate {
        match self {
            Tristate::True => Tristate::False,
            Tristate::False => Tristate::True,
            Tristate::Unknown => Tristate::Unknown,
        }
    }
}

impl From<bool> for Tristate {
    fn from(b: bool) -> Self {
        if b {
            Tristate::True
        } else {
            Tristate::False
        }
    }
}

/// Three-valued SQL comparison. NULL or MISSING on either side yields
/// `Unknown`; comparing values of different non-numeric types yields `False`.
pub fn sql_tristate_compare(a: &Value, op: CompareOp, b: &Value) -> Tristate {
    if a.is_unknown() || b.is_unknown() {
        return Tristate::Unknown;
    }
    let ord = match (a, b) {
        (Value::Int(_) | Value::Float(_), Value::Int(_) | Value::Float(_))
        | (Value::Str(_), Value::Str(_))
        | (Value::Bool(_), Value::Bool(_)) => mongo_total_order(a, b),
        _ => return Tristate::False,
    };
    op.holds(ord).into()
}

/// One row. Attribute names are unique; reading an absent attribute yields
/// `Missing`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Record {
    fields: Vec<(String, Value)>,
}

static MISSING: Value = Value::Missing;

impl Record {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs<K: Into<String>>(pairs: impl IntoIterator<Item = (K, Value)>) -> Self {
        let mut r = Record::new();
        for (k, v) in pairs {
            r.set(k, v);
        }
        r
    }

    pub fn get(&self, name: &str) -> &Value {
        self.fields
            .iter()
            .find(|(k, _)| k == name)
            .map(|(_, v)| v)
            .unwrap_or(&MISSING)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.fields.iter().any(|(k, _)| k == name)
    }

    /// Inserts or replaces, keeping the original position on replace.
    pub fn set(&mut self, name: impl Into<String>, value: Value) {
        let name = name.into();
        match self.fields.iter_mut().find(|(k, _)| *k == name) {
            Some(slot) => slot.1 = value,
            None => self.fields.push((name, value)),
        }
    }

    pub fn remove(&mut self, name: &str) -> Option<Value> {
        let idx = self.fields.iter().position(|(k, _)| k == name)?;
        Some(self.fields.remove(idx).1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Value)> {
        self.fields.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.fields.iter().map(|(k, _)| k.as_str())
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    /// Fields that hold a real value, i.e. everything except explicit
    /// `Missing` entries.
    pub fn present(&self) -> impl Iterator<Item = (&str, &Value)> {
        self.iter().filter(|(_, v)| !v.is_missing())
    }

    /// Order-insensitive equality that also treats an explicit `Missing`
    /// entry the same as an absent attribute.
    pub fn same_content(&self, other: &Record) -> bool {
        let a: Vec<_> = self.present().collect();
        let b: Vec<_> = other.present().collect();
        a.len() == b.len() && a.iter().all(|(k, v)| other.get(k) == *v)
    }
}

impl<K: Into<String>> FromIterator<(K, Value)> for Record {
    fn from_iter<T: IntoIterator<Item = (K, Value)>>(iter: T) -> Self {
        Record::from_pairs(iter)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub rows: Vec<Record>,
    pub columns: Option<Vec<String>>,
}

impl Table {
    pub fn new(rows: Vec<Record>) -> Self {
        Table {
            rows,
            columns: None,
        }
    }

    pub fn empty() -> Self {
        Table::default()
    }

    /// Declares a column order; every row is rewritten to expose exactly
    /// those columns, in that order.
    pub fn with_columns(mut self, columns: Vec<String>) -> Self {
        for row in &mut self.rows {
            let reordered = columns
                .iter()
                .map(|c| (c.clone(), row.get(c).clone()))
                .collect();
            *row = reordered;
        }
        self.columns = Some(columns);
        self
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Column names: the declared order if any, else first-seen order.
    pub fn column_names(&self) -> Vec<String> {
        if let Some(cols) = &self.columns {
            return cols.clone();
        }
        let mut out: Vec<String> = Vec::new();
        for row in &self.rows {
            for name in row.names() {
                if !out.iter().any(|c| c == name) {
                    out.push(name.to_string());
                }
            }
        }
        out
    }

    pub fn column(&self, name: &str) -> Vec<Value> {
        self.rows.iter().map(|r| r.get(name).clone()).collect()
    }
}

#[derive(Debug, Error)]
pub enum JsonError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

fn json_to_value(v: &serde_json::Value) -> Result<Value, String> {
    Ok(match v {
        serde_json::Value::Null => Value::Null,
        serde_json::Value::Bool(b) => Value::Bool(*b),
        serde_json::Value::Number(n) => number_to_value(n),
        serde_json::Value::String(s) => Value::Str(s.clone()),
        serde_json::Value::Array(_) | serde_json::Value::Object(_) => {
            return Err("nested arrays and objects are not supported".into())
        }
    })
}

/// Integer literals become `Int` when they fit in 64 bits; anything written
/// with a fraction or exponent becomes `Float`.
pub fn number_to_value(n: &Number) -> Value {
    if let Some(i) = n.as_i64() {
        Value::Int(i)
    } else {
        Value::Float(n.as_f64().unwrap_or(f64::NAN))
    }
}

/// `None` for `Missing`, which has no JSON spelling and is omitted instead.
pub fn value_to_json(v: &Value) -> Option<serde_json::Value> {
    Some(match v {
        Value::Missing => return None,
        Value::Null => serde_json::Value::Null,
        Value::Bool(b) => serde_json::Value::Bool(*b),
        Value::Int(i) => serde_json::Value::from(*i),
        Value::Float(f) => Number::from_f64(*f)
            .map(serde_json::Value::Number)
            .unwrap_or(serde_json::Value::Null),
        Value::Str(s) => serde_json::Value::String(s.clone()),
    })
}

pub fn record_from_json(obj: &Map<String, serde_json::Value>) -> Result<Record, String> {
    let mut rec = Record::new();
    for (k, v) in obj {
        rec.set(k.clone(), json_to_value(v)?);
    }
    Ok(rec)
}

pub fn record_to_json(rec: &Record) -> Map<String, serde_json::Value> {
    rec.iter()
        .filter_map(|(k, v)| value_to_json(v).map(|j| (k.to_string(), j)))
        .collect()
}

/// Reads JSON lines: one flat object per line, blank lines skipped.
pub fn read_jsonl(bytes: &[u8]) -> Result<Table, JsonError> {
    let text = std::str::from_utf8(bytes).map_err(|e| JsonError::Parse {
        line: 1,
        message: format!("invalid UTF-8: {e}"),
    })?;
    let mut rows = Vec::new();
    for (idx, line) in text.split('\n').enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| JsonError::Parse {
            line: idx + 1,
            message,
        };
        let parsed: serde_json::Value =
            serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        let obj = parsed
            .as_object()
            .ok_or_else(|| err("expected a JSON object".into()))?;
        rows.push(record_from_json(obj).map_err(err)?);
    }
    Ok(Table::new(rows))
}

/// Writes JSON lines. `Missing` attributes are omitted.
pub fn write_jsonl(table: &Table) -> Vec<u8> {
    let mut out = Vec::new();
    for row in &table.rows {
        let obj = serde_json::Value::Object(record_to_json(row));
        out.extend_from_slice(obj.to_string().as_bytes());
        out.push(b'\n');
    }
    out
}
