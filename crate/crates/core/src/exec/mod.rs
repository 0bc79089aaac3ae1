//! Reference interpreters for the SQL, SQL++ and pipeline text the built-in
//! packs emit, over an in-memory catalog.

pub mod pipeline;
pub mod sql;

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use thiserror::Error;

use crate::value::{mongo_total_order, Record, Table, Value};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExecError {
    #[error("syntax error at byte {pos}: {message}")]
    Syntax { pos: usize, message: String },
    #[error("unknown collection `{0}`")]
    UnknownTable(String),
    #[error("collection `{0}` already exists")]
    Exists(String),
    #[error("{0}")]
    Eval(String),
    #[error("stage {index}: {message}")]
    Stage { index: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecDialect {
    Sql,
    Sqlpp,
    Mongo,
}

impl FromStr for ExecDialect {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sql" => Ok(ExecDialect::Sql),
            "sqlpp" => Ok(ExecDialect::Sqlpp),
            "mongo" => Ok(ExecDialect::Mongo),
            other => Err(format!("unknown dialect `{other}`")),
        }
    }
}

impl fmt::Display for ExecDialect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExecDialect::Sql => "sql",
            ExecDialect::Sqlpp => "sqlpp",
            ExecDialect::Mongo => "mongo",
        })
    }
}

/// Collections keyed by `(namespace, name)`. Rows are shared so queries can
/// pass them through without copying.
#[derive(Debug, Clone, Default)]
pub struct Catalog {
    tables: BTreeMap<(String, String), Arc<Vec<Arc<Record>>>>,
}

impl Catalog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds or replaces a collection.
    pub fn insert(&mut self, namespace: &str, name: &str, table: Table) {
        let rows = table.rows.into_iter().map(Arc::new).collect();
        self.insert_rows(namespace, name, rows);
    }

    pub(crate) fn insert_rows(&mut self, namespace: &str, name: &str, rows: Vec<Arc<Record>>) {
        self.tables
            .insert((namespace.to_string(), name.to_string()), Arc::new(rows));
    }

    pub fn contains(&self, namespace: &str, name: &str) -> bool {
        self.tables
            .contains_key(&(namespace.to_string(), name.to_string()))
    }

    pub(crate) fn rows(
        &self,
        namespace: &str,
        name: &str,
    ) -> Result<Arc<Vec<Arc<Record>>>, ExecError> {
        self.tables
            .get(&(namespace.to_string(), name.to_string()))
            .cloned()
            .ok_or_else(|| ExecError::UnknownTable(qualified(namespace, name)))
    }

    /// A copy of a stored collection.
    pub fn table(&self, namespace: &str, name: &str) -> Option<Table> {
        let rows = self.rows(namespace, name).ok()?;
        Some(Table::new(rows.iter().map(|r| (**r).clone()).collect()))
    }

    pub fn remove(&mut self, namespace: &str, name: &str) -> bool {
        self.tables
            .remove(&(namespace.to_string(), name.to_string()))
            .is_some()
    }

    pub fn collections(&self) -> impl Iterator<Item = (&str, &str)> {
        self.tables.keys().map(|(n, c)| (n.as_str(), c.as_str()))
    }

    /// Stores a query result, refusing to replace an existing collection
    /// unless `overwrite` is set.
    pub(crate) fn store(
        &mut self,
        namespace: &str,
        name: &str,
        rows: Vec<Arc<Record>>,
        overwrite: bool,
    ) -> Result<(), ExecError> {
        if !overwrite && self.contains(namespace, name) {
            return Err(ExecError::Exists(qualified(namespace, name)));
        }
        self.insert_rows(namespace, name, rows);
        Ok(())
    }
}

pub(crate) fn qualified(namespace: &str, name: &str) -> String {
    if namespace.is_empty() {
        name.to_string()
    } else {
        format!("{namespace}.{name}")
    }
}

/// Runs one query text in the given dialect. Statements that save results
/// return an empty table.
pub fn run_text(
    dialect: ExecDialect,
    text: &str,
    catalog: &mut Catalog,
    allow_overwrite: bool,
) -> Result<Table, ExecError> {
    match dialect {
        ExecDialect::Sql | ExecDialect::Sqlpp => {
            let stmt = sql::parse_sql(text, dialect)?;
            sql::run_statement(&stmt, catalog, allow_overwrite)
        }
        ExecDialect::Mongo => {
            let req = pipeline::parse_request(text)?;
            pipeline::run_pipeline(
                &req.pipeline,
                catalog,
                &req.namespace,
                &req.collection,
                allow_overwrite,
            )
        }
    }
}

/// A value ordered by [`mongo_total_order`], for use as a map key.
#[derive(Debug, Clone)]
pub(crate) struct OrdValue(pub Value);

impl PartialEq for OrdValue {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for OrdValue {}

impl PartialOrd for OrdValue {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrdValue {
    fn cmp(&self, other: &Self) -> Ordering {
        mongo_total_order(&self.0, &other.0)
    }
}

/// Running state for MIN, MAX, AVG, SUM, COUNT and population standard
/// deviation. Unknown inputs are skipped.
#[derive(Debug, Clone, Default)]
pub(crate) struct Accumulator {
    count: i64,
    int_sum: Option<i64>,
    float_sum: f64,
    all_int: bool,
    numeric: i64,
    mean: f64,
    m2: f64,
    min: Option<Value>,
    max: Option<Value>,
}

impl Accumulator {
    pub fn new() -> Self {
        Accumulator {
            int_sum: Some(0),
            all_int: true,
            ..Default::default()
        }
    }

    pub fn push(&mut self, v: &Value) {
        if v.is_unknown() {
            return;
        }
        self.count += 1;
        if self
            .min
            .as_ref()
            .is_none_or(|m| mongo_total_order(v, m) == Ordering::Less)
        {
            self.min = Some(v.clone());
        }
        if self
            .max
            .as_ref()
            .is_none_or(|m| mongo_total_order(v, m) == Ordering::Greater)
        {
            self.max = Some(v.clone());
        }
        let Some(x) = v.as_f64() else { return };
        match v {
            Value::Int(i) => self.int_sum = self.int_sum.and_then(|s| s.checked_add(*i)),
            _ => self.all_int = false,
        }
        self.float_sum += x;
        // Welford's update keeps the variance stable on large inputs.
        self.numeric += 1;
        let delta = x - self.mean;
        self.mean += delta / self.numeric as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn count(&self) -> Value {
        Value::Int(self.count)
    }

    pub fn min(&self) -> Value {
        self.min.clone().unwrap_or(Value::Null)
    }

    pub fn max(&self) -> Value {
        self.max.clone().unwrap_or(Value::Null)
    }

    pub fn sum(&self) -> Value {
        if self.numeric == 0 {
            return Value::Int(0);
        }
        match (self.all_int, self.int_sum) {
            (true, Some(s)) => Value::Int(s),
            _ => Value::Float(self.float_sum),
        }
    }

    pub fn avg(&self) -> Value {
        if self.numeric == 0 {
            Value::Null
        } else {
            Value::Float(self.float_sum / self.numeric as f64)
        }
    }

    pub fn std_pop(&self) -> Value {
        if self.numeric == 0 {
            Value::Null
        } else {
            Value::Float((self.m2 / self.numeric as f64).sqrt())
        }
    }
}

/// Truncating conversion used by `TO_BIGINT`, `CAST(.. AS INTEGER)` and
/// `$toInt`.
pub(crate) fn to_int(v: &Value) -> Result<Value, String> {
    Ok(match v {
        Value::Missing | Value::Null => Value::Null,
        Value::Bool(b) => Value::Int(i64::from(*b)),
        Value::Int(i) => Value::Int(*i),
        Value::Float(f) if f.is_finite() => Value::Int(f.trunc() as i64),
        Value::Float(f) => return Err(format!("cannot convert {f} to an integer")),
        Value::Str(s) => match s.trim().parse::<i64>() {
            Ok(i) => Value::Int(i),
            Err(_) => return Err(format!("cannot convert {s:?} to an integer")),
        },
    })
}

pub(crate) fn to_str(v: &Value) -> Value {
    match v {
        Value::Missing | Value::Null => Value::Null,
        Value::Str(s) => Value::Str(s.clone()),
        other => Value::Str(other.to_string()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arith {
    Add,
    Sub,
    Mul,
    Div,
    Mod,
}

/// Shared arithmetic. Unknown operands give NULL, INT op INT stays INT
/// except for division, and division or modulo by zero gives NULL.
pub(crate) fn arith(op: Arith, a: &Value, b: &Value) -> Result<Value, String> {
    if a.is_unknown() || b.is_unknown() {
        return Ok(Value::Null);
    }
    let name = match op {
        Arith::Add => "add",
        Arith::Sub => "subtract",
        Arith::Mul => "multiply",
        Arith::Div => "divide",
        Arith::Mod => "take the remainder of",
    };
    let type_err = || format!("cannot {name} {} and {}", a.type_name(), b.type_name());
    if let (Value::Int(x), Value::Int(y)) = (a, b) {
        let (x, y) = (*x, *y);
        return match op {
            Arith::Add => x.checked_add(y).map(Value::Int),
            Arith::Sub => x.checked_sub(y).map(Value::Int),
            Arith::Mul => x.checked_mul(y).map(Value::Int),
            Arith::Div if y == 0 => Some(Value::Null),
            Arith::Div => Some(Value::Float(x as f64 / y as f64)),
            Arith::Mod if y == 0 => Some(Value::Null),
            Arith::Mod => x.checked_rem(y).map(Value::Int),
        }
        .ok_or_else(|| "integer overflow".to_string());
    }
    let (Some(x), Some(y)) = (a.as_f64(), b.as_f64()) else {
        return Err(type_err());
    };
    if !a.is_numeric() || !b.is_numeric() {
        return Err(type_err());
    }
    Ok(match op {
        Arith::Add => Value::Float(x + y),
        Arith::Sub => Value::Float(x - y),
        Arith::Mul => Value::Float(x * y),
        Arith::Div | Arith::Mod if y == 0.0 => Value::Null,
        Arith::Div => Value::Float(x / y),
        Arith::Mod => Value::Float(x % y),
    })
}
