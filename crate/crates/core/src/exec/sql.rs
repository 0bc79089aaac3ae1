//! A small SQL and SQL++ interpreter.
//!
//! Covers the statement shapes the built-in packs emit: nested
//! `SELECT [VALUE]` with aliases, inner joins, `WHERE`, `GROUP BY`,
//! `ORDER BY`, `LIMIT`, `CREATE TABLE .. AS` and `INSERT INTO`.
//! In the `sql` dialect double quotes delimit identifiers; in `sqlpp` they
//! delimit strings.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use super::{arith, to_int, to_str, Accumulator, Arith, Catalog, ExecDialect, ExecError, OrdValue};
use crate::value::{sql_tristate_compare, CompareOp, Record, Table, Tristate, Value};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Quoted(String),
    Str(String),
    Int(i64),
    Float(f64),
    Sym(&'static str),
    Eof,
}

const SYMBOLS: [&str; 17] = [
    "<>", "!=", "<=", ">=", "==", "(", ")", ",", ".", "*", "=", "<", ">", "+", "-", "/", "%",
];

fn lex(src: &str) -> Result<Vec<(Tok, usize)>, ExecError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    let err = |pos: usize, message: &str| ExecError::Syntax {
        pos,
        message: message.to_string(),
    };
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() || c == b';' {
            i += 1;
            continue;
        }
        if c == b'-' && bytes.get(i + 1) == Some(&b'-') {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        if c == b'\'' || c == b'"' || c == b'`' {
            let mut s = String::new();
            i += 1;
            loop {
                let Some(ch) = src[i..].chars().next() else {
                    return Err(err(start, "unterminated quoted text"));
                };
                i += ch.len_utf8();
                if ch as u32 == c as u32 {
                    // A doubled quote stands for itself.
                    if bytes.get(i) == Some(&c) {
                        s.push(ch);
                        i += 1;
                        continue;
                    }
                    break;
                }
                if ch == '\\' && c != b'\'' {
                    if let Some(next) = src[i..].chars().next() {
                        i += next.len_utf8();
                        s.push(match next {
                            'n' => '\n',
                            't' => '\t',
                            other => other,
                        });
                        continue;
                    }
                }
                s.push(ch);
            }
            out.push((
                match c {
                    b'\'' => Tok::Str(s),
                    b'"' => Tok::Quoted(s),
                    _ => Tok::Ident(s),
                },
                start,
            ));
            continue;
        }
        if c.is_ascii_digit() {
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            let mut float = false;
            if i + 1 < bytes.len() && bytes[i] == b'.' && bytes[i + 1].is_ascii_digit() {
                float = true;
                i += 1;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    float = true;
                    i = j;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text = &src[start..i];
            let tok = if float {
                Tok::Float(text.parse().map_err(|_| err(start, "bad number"))?)
            } else {
                match text.parse::<i64>() {
                    Ok(n) => Tok::Int(n),
                    Err(_) => Tok::Float(text.parse().map_err(|_| err(start, "bad number"))?),
                }
            };
            out.push((tok, start));
            continue;
        }
        if c.is_ascii_alphabetic() || c == b'_' || c == b'$' {
            while i < bytes.len()
                && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_' || bytes[i] == b'$')
            {
                i += 1;
            }
            out.push((Tok::Ident(src[start..i].to_string()), start));
            continue;
        }
        match SYMBOLS.iter().find(|s| src[i..].starts_with(**s)) {
            Some(s) => {
                out.push((Tok::Sym(s), start));
                i += s.len();
            }
            None => {
                let ch = src[i..].chars().next().unwrap_or('?');
                return Err(err(start, &format!("unexpected character `{ch}`")));
            }
        }
    }
    out.push((Tok::Eof, src.len()));
    Ok(out)
}

const RESERVED: [&str; 28] = [
    "SELECT", "FROM", "WHERE", "GROUP", "BY", "ORDER", "LIMIT", "JOIN", "INNER", "ON", "AS", "AND",
    "OR", "NOT", "IS", "NULL", "UNKNOWN", "MISSING", "ASC", "DESC", "CREATE", "TABLE", "INSERT",
    "INTO", "TRUE", "FALSE", "OUTER", "OFFSET",
];

#[derive(Debug, Clone, PartialEq)]
pub enum Statement {
    Query(Select),
    CreateTableAs { target: QName, query: Select },
    InsertInto { target: QName, query: Select },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QName {
    pub namespace: String,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Select {
    pub value: bool,
    pub items: Vec<SelectItem>,
    pub from: Source,
    pub filter: Option<Expr>,
    pub group_by: Vec<Expr>,
    /// Sort keys with a descending flag.
    pub order_by: Vec<(Expr, bool)>,
    pub limit: Option<u64>,
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SelectItem {
    /// `*` or `alias.*`.
    Star(Option<String>),
    Expr {
        expr: Expr,
        alias: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Named {
        table: QName,
        alias: String,
    },
    Subquery {
        query: Box<Select>,
        alias: String,
    },
    Join {
        left: Box<Source>,
        right: Box<Source>,
        on: Expr,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NullTest {
    /// `IS NULL` and `IS UNKNOWN`: null or missing.
    Unknown,
    Missing,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Column {
        qualifier: Option<String>,
        name: String,
    },
    Lit(Value),
    Compare(CompareOp, Box<Expr>, Box<Expr>),
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
    Not(Box<Expr>),
    Arith(Arith, Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    Is {
        expr: Box<Expr>,
        test: NullTest,
        negated: bool,
    },
    /// Function names are stored upper case. `COUNT(*)` has no arguments.
    Call {
        name: String,
        args: Vec<Expr>,
    },
}

const AGGREGATES: [&str; 7] = [
    "COUNT",
    "MIN",
    "MAX",
    "AVG",
    "SUM",
    "STDDEV_POP",
    "ARRAY_COUNT",
];

impl Expr {
    fn has_aggregate(&self) -> bool {
        match self {
            Expr::Column { .. } | Expr::Lit(_) => false,
            Expr::Compare(_, a, b) | Expr::And(a, b) | Expr::Or(a, b) | Expr::Arith(_, a, b) => {
                a.has_aggregate() || b.has_aggregate()
            }
            Expr::Not(a) | Expr::Neg(a) => a.has_aggregate(),
            Expr::Is { expr, .. } => expr.has_aggregate(),
            Expr::Call { name, args } => {
                AGGREGATES.contains(&name.as_str()) || args.iter().any(Expr::has_aggregate)
            }
        }
    }

    /// Output column name when no alias is given.
    fn default_name(&self, position: usize, value: bool) -> String {
        if value {
            return "$1".to_string();
        }
        match self {
            Expr::Column { name, .. } => name.clone(),
            Expr::Call { name, .. } => name.to_lowercase(),
            _ => format!("${position}"),
        }
    }
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    dialect: ExecDialect,
}

type PResult<T> = Result<T, ExecError>;

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn peek_at(&self, n: usize) -> &Tok {
        let i = (self.pos + n).min(self.toks.len() - 1);
        &self.toks[i].0
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].0.clone();
        if self.pos < self.toks.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn error<T>(&self, message: impl Into<String>) -> PResult<T> {
        Err(ExecError::Syntax {
            pos: self.offset(),
            message: message.into(),
        })
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s.eq_ignore_ascii_case(kw))
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if self.is_kw(kw) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_kw(&mut self, kw: &str) -> PResult<()> {
        if self.eat_kw(kw) {
            Ok(())
        } else {
            self.error(format!("expected {kw}, found {:?}", self.peek()))
        }
    }

    fn eat_sym(&mut self, sym: &str) -> bool {
        if matches!(self.peek(), Tok::Sym(s) if *s == sym) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_sym(&mut self, sym: &str) -> PResult<()> {
        if self.eat_sym(sym) {
            Ok(())
        } else {
            self.error(format!("expected `{sym}`, found {:?}", self.peek()))
        }
    }

    /// A bare or quoted identifier. Double quotes count as identifiers only
    /// in the `sql` dialect.
    fn ident(&mut self) -> PResult<String> {
        match self.peek().clone() {
            Tok::Ident(s) if !is_reserved(&s) => {
                self.bump();
                Ok(s)
            }
            Tok::Quoted(s) if self.dialect == ExecDialect::Sql => {
                self.bump();
                Ok(s)
            }
            other => self.error(format!("expected an identifier, found {other:?}")),
        }
    }

    fn at_ident(&self) -> bool {
        match self.peek() {
            Tok::Ident(s) => !is_reserved(s),
            Tok::Quoted(_) => self.dialect == ExecDialect::Sql,
            _ => false,
        }
    }

    fn statement(&mut self) -> PResult<Statement> {
        let stmt = if self.eat_kw("CREATE") {
            self.expect_kw("TABLE")?;
            let target = self.qname()?;
            self.expect_kw("AS")?;
            let query = self.select_or_parenthesized()?;
            Statement::CreateTableAs { target, query }
        } else if self.eat_kw("INSERT") {
            self.expect_kw("INTO")?;
            let target = self.qname()?;
            let query = self.select_or_parenthesized()?;
            Statement::InsertInto { target, query }
        } else {
            Statement::Query(self.select_or_parenthesized()?)
        };
        if *self.peek() != Tok::Eof {
            return self.error(format!("unexpected {:?} after statement", self.peek()));
        }
        Ok(stmt)
    }

    fn select_or_parenthesized(&mut self) -> PResult<Select> {
        if self.eat_sym("(") {
            let q = self.select_or_parenthesized()?;
            self.expect_sym(")")?;
            Ok(q)
        } else {
            self.select()
        }
    }

    fn qname(&mut self) -> PResult<QName> {
        let first = self.ident()?;
        if self.eat_sym(".") {
            let name = self.ident()?;
            Ok(QName {
                namespace: first,
                name,
            })
        } else {
            Ok(QName {
                namespace: String::new(),
                name: first,
            })
        }
    }

    fn select(&mut self) -> PResult<Select> {
        self.expect_kw("SELECT")?;
        let mut value = false;
        if self.is_kw("VALUE")
            && !matches!(self.peek_at(1), Tok::Sym(",") | Tok::Eof)
            && !is_kw_tok(self.peek_at(1), "FROM")
        {
            if self.dialect == ExecDialect::Sql {
                return self.error("SELECT VALUE is not valid in the sql dialect");
            }
            self.bump();
            value = true;
        }
        let mut items = vec![self.select_item()?];
        while self.eat_sym(",") {
            items.push(self.select_item()?);
        }
        if value && (items.len() != 1 || matches!(items[0], SelectItem::Star(_))) {
            return self.error("SELECT VALUE takes exactly one expression");
        }
        self.expect_kw("FROM")?;
        let from = self.source()?;
        let filter = if self.eat_kw("WHERE") {
            Some(self.expr()?)
        } else {
            None
        };
        let mut group_by = Vec::new();
        if self.eat_kw("GROUP") {
            self.expect_kw("BY")?;
            group_by.push(self.expr()?);
            while self.eat_sym(",") {
                group_by.push(self.expr()?);
            }
        }
        let mut order_by = Vec::new();
        if self.eat_kw("ORDER") {
            self.expect_kw("BY")?;
            loop {
                let e = self.expr()?;
                let desc = if self.eat_kw("DESC") {
                    true
                } else {
                    self.eat_kw("ASC");
                    false
                };
                order_by.push((e, desc));
                if !self.eat_sym(",") {
                    break;
                }
            }
        }
        let limit = if self.eat_kw("LIMIT") {
            match self.bump() {
                Tok::Int(n) if n >= 0 => Some(n as u64),
                other => {
                    return self.error(format!(
                        "LIMIT needs a non-negative integer, found {other:?}"
                    ))
                }
            }
        } else {
            None
        };
        let offset = if self.eat_kw("OFFSET") {
            match self.bump() {
                Tok::Int(n) if n >= 0 => n as u64,
                other => {
                    return self.error(format!(
                        "OFFSET needs a non-negative integer, found {other:?}"
                    ))
                }
            }
        } else {
            0
        };
        Ok(Select {
            value,
            items,
            from,
            filter,
            group_by,
            order_by,
            limit,
            offset,
        })
    }

    fn select_item(&mut self) -> PResult<SelectItem> {
        if self.eat_sym("*") {
            return Ok(SelectItem::Star(None));
        }
        if self.at_ident()
            && matches!(self.peek_at(1), Tok::Sym("."))
            && matches!(self.peek_at(2), Tok::Sym("*"))
        {
            let q = self.ident()?;
            self.bump();
            self.bump();
            return Ok(SelectItem::Star(Some(q)));
        }
        let expr = self.expr()?;
        let alias = if self.eat_kw("AS") {
            Some(self.alias_name()?)
        } else if self.at_ident() {
            Some(self.ident()?)
        } else {
            None
        };
        Ok(SelectItem::Expr { expr, alias })
    }

    /// Aliases may be quoted in either dialect.
    fn alias_name(&mut self) -> PResult<String> {
        if let Tok::Quoted(s) = self.peek().clone() {
            self.bump();
            return Ok(s);
        }
        self.ident()
    }

    fn source(&mut self) -> PResult<Source> {
        let mut left = self.primary_source()?;
        loop {
            if self.eat_kw("INNER") {
                self.expect_kw("JOIN")?;
            } else if !self.eat_kw("JOIN") {
                break;
            }
            let right = self.primary_source()?;
            self.expect_kw("ON")?;
            let on = self.expr()?;
            left = Source::Join {
                left: Box::new(left),
                right: Box::new(right),
                on,
            };
        }
        Ok(left)
    }

    fn primary_source(&mut self) -> PResult<Source> {
        if self.eat_sym("(") {
            let query = self.select_or_parenthesized()?;
            self.expect_sym(")")?;
            self.eat_kw("AS");
            let alias = self.ident()?;
            return Ok(Source::Subquery {
                query: Box::new(query),
                alias,
            });
        }
        let table = self.qname()?;
        let alias = if self.eat_kw("AS") || self.at_ident() {
            self.ident()?
        } else {
            table.name.clone()
        };
        Ok(Source::Named { table, alias })
    }

    fn expr(&mut self) -> PResult<Expr> {
        let mut lhs = self.and_expr()?;
        while self.eat_kw("OR") {
            let rhs = self.and_expr()?;
            lhs = Expr::Or(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn and_expr(&mut self) -> PResult<Expr> {
        let mut lhs = self.not_expr()?;
        while self.eat_kw("AND") {
            let rhs = self.not_expr()?;
            lhs = Expr::And(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn not_expr(&mut self) -> PResult<Expr> {
        if self.eat_kw("NOT") {
            return Ok(Expr::Not(Box::new(self.not_expr()?)));
        }
        self.cmp_expr()
    }

    fn cmp_expr(&mut self) -> PResult<Expr> {
        let lhs = self.add_expr()?;
        if self.eat_kw("IS") {
            let negated = self.eat_kw("NOT");
            let test = if self.eat_kw("NULL") || self.eat_kw("UNKNOWN") {
                NullTest::Unknown
            } else if self.eat_kw("MISSING") {
                NullTest::Missing
            } else {
                return self.error("expected NULL, UNKNOWN or MISSING after IS");
            };
            return Ok(Expr::Is {
                expr: Box::new(lhs),
                test,
                negated,
            });
        }
        let op = match self.peek() {
            Tok::Sym("=") | Tok::Sym("==") => CompareOp::Eq,
            Tok::Sym("<>") | Tok::Sym("!=") => CompareOp::Ne,
            Tok::Sym("<") => CompareOp::Lt,
            Tok::Sym(">") => CompareOp::Gt,
            Tok::Sym("<=") => CompareOp::Le,
            Tok::Sym(">=") => CompareOp::Ge,
            _ => return Ok(lhs),
        };
        self.bump();
        let rhs = self.add_expr()?;
        Ok(Expr::Compare(op, Box::new(lhs), Box::new(rhs)))
    }

    fn add_expr(&mut self) -> PResult<Expr> {
        let mut lhs = self.mul_expr()?;
        loop {
            let op = match self.peek() {
                Tok::Sym("+") => Arith::Add,
                Tok::Sym("-") => Arith::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.mul_expr()?;
            lhs = Expr::Arith(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn mul_expr(&mut self) -> PResult<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Sym("*") => Arith::Mul,
                Tok::Sym("/") => Arith::Div,
                Tok::Sym("%") => Arith::Mod,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::Arith(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> PResult<Expr> {
        if self.eat_sym("-") {
            return Ok(match self.unary()? {
                Expr::Lit(Value::Int(i)) => Expr::Lit(Value::Int(-i)),
                Expr::Lit(Value::Float(f)) => Expr::Lit(Value::Float(-f)),
                e => Expr::Neg(Box::new(e)),
            });
        }
        if self.eat_sym("+") {
            return self.unary();
        }
        self.atom()
    }

    fn atom(&mut self) -> PResult<Expr> {
        match self.peek().clone() {
            Tok::Int(i) => {
                self.bump();
                Ok(Expr::Lit(Value::Int(i)))
            }
            Tok::Float(f) => {
                self.bump();
                Ok(Expr::Lit(Value::Float(f)))
            }
            Tok::Str(s) => {
                self.bump();
                Ok(Expr::Lit(Value::Str(s)))
            }
            Tok::Quoted(s) if self.dialect == ExecDialect::Sqlpp => {
                self.bump();
                Ok(Expr::Lit(Value::Str(s)))
            }
            Tok::Sym("(") => {
                self.bump();
                let e = self.expr()?;
                self.expect_sym(")")?;
                Ok(e)
            }
            Tok::Ident(s) if s.eq_ignore_ascii_case("TRUE") => {
                self.bump();
                Ok(Expr::Lit(Value::Bool(true)))
            }
            Tok::Ident(s) if s.eq_ignore_ascii_case("FALSE") => {
                self.bump();
                Ok(Expr::Lit(Value::Bool(false)))
            }
            Tok::Ident(s) if s.eq_ignore_ascii_case("NULL") => {
                self.bump();
                Ok(Expr::Lit(Value::Null))
            }
            Tok::Ident(s)
                if s.eq_ignore_ascii_case("MISSING") && self.dialect == ExecDialect::Sqlpp =>
            {
                self.bump();
                Ok(Expr::Lit(Value::Missing))
            }
            Tok::Ident(s)
                if s.eq_ignore_ascii_case("CAST") && matches!(self.peek_at(1), Tok::Sym("(")) =>
            {
                self.bump();
                self.bump();
                let e = self.expr()?;
                self.expect_kw("AS")?;
                let ty = match self.bump() {
                    Tok::Ident(t) => t.to_ascii_uppercase(),
                    other => return self.error(format!("expected a type name, found {other:?}")),
                };
                self.expect_sym(")")?;
                let name = match ty.as_str() {
                    "INT" | "INTEGER" | "BIGINT" => "TO_BIGINT",
                    "TEXT" | "VARCHAR" | "STRING" => "TO_STRING",
                    other => return self.error(format!("unsupported cast target {other}")),
                };
                Ok(Expr::Call {
                    name: name.to_string(),
                    args: vec![e],
                })
            }
            _ if self.at_ident() => {
                let first = self.ident()?;
                if self.eat_sym("(") {
                    let name = first.to_ascii_uppercase();
                    let mut args = Vec::new();
                    if self.eat_sym("*") {
                        if name != "COUNT" {
                            return self
                                .error(format!("`*` argument is only valid in COUNT, not {name}"));
                        }
                    } else if !matches!(self.peek(), Tok::Sym(")")) {
                        args.push(self.expr()?);
                        while self.eat_sym(",") {
                            args.push(self.expr()?);
                        }
                    }
                    self.expect_sym(")")?;
                    return Ok(Expr::Call { name, args });
                }
                if self.eat_sym(".") {
                    let name = self.ident()?;
                    return Ok(Expr::Column {
                        qualifier: Some(first),
                        name,
                    });
                }
                Ok(Expr::Column {
                    qualifier: None,
                    name: first,
                })
            }
            other => self.error(format!("unexpected {other:?} in expression")),
        }
    }
}

fn is_reserved(s: &str) -> bool {
    RESERVED.iter().any(|k| k.eq_ignore_ascii_case(s))
}

fn is_kw_tok(t: &Tok, kw: &str) -> bool {
    matches!(t, Tok::Ident(s) if s.eq_ignore_ascii_case(kw))
}

pub fn parse_sql(text: &str, dialect: ExecDialect) -> Result<Statement, ExecError> {
    let mut p = Parser {
        toks: lex(text)?,
        pos: 0,
        dialect,
    };
    p.statement()
}

/// Variable bindings for one input row: each source alias maps to a record.
#[derive(Debug, Clone)]
struct Env {
    binds: Vec<(Arc<str>, Arc<Record>)>,
}

enum Val {
    Scalar(Value),
    Row(Arc<Record>),
}

impl Val {
    fn scalar(self) -> Result<Value, ExecError> {
        match self {
            Val::Scalar(v) => Ok(v),
            Val::Row(_) => Err(ExecError::Eval(
                "a whole row cannot be used as a scalar".into(),
            )),
        }
    }
}

fn eval_err(m: impl Into<String>) -> ExecError {
    ExecError::Eval(m.into())
}

fn lookup(env: &Env, qualifier: Option<&str>, name: &str) -> Val {
    match qualifier {
        Some(q) => {
            if let Some((_, rec)) = env.binds.iter().find(|(a, _)| &**a == q) {
                return Val::Scalar(rec.get(name).clone());
            }
            // A dotted column produced by flattening a nested result.
            let dotted = format!("{q}.{name}");
            lookup(env, None, &dotted)
        }
        None => {
            if let Some((_, rec)) = env.binds.iter().find(|(a, _)| &**a == name) {
                return Val::Row(rec.clone());
            }
            for (_, rec) in &env.binds {
                if rec.contains(name) {
                    return Val::Scalar(rec.get(name).clone());
                }
            }
            Val::Scalar(Value::Missing)
        }
    }
}

fn eval(expr: &Expr, env: Option<&Env>, group: Option<&[Env]>) -> Result<Val, ExecError> {
    let scalar = |e: &Expr| eval(e, env, group).and_then(Val::scalar);
    Ok(Val::Scalar(match expr {
        Expr::Column { qualifier, name } => {
            return Ok(match env {
                Some(env) => lookup(env, qualifier.as_deref(), name),
                None => Val::Scalar(Value::Missing),
            });
        }
        Expr::Lit(v) => v.clone(),
        Expr::Compare(op, a, b) => sql_tristate_compare(&scalar(a)?, *op, &scalar(b)?).to_value(),
        Expr::And(a, b) => {
            let l = Tristate::from_value(&scalar(a)?);
            if l == Tristate::False {
                Value::Bool(false)
            } else {
                l.and(Tristate::from_value(&scalar(b)?)).to_value()
            }
        }
        Expr::Or(a, b) => {
            let l = Tristate::from_value(&scalar(a)?);
            if l == Tristate::True {
                Value::Bool(true)
            } else {
                l.or(Tristate::from_value(&scalar(b)?)).to_value()
            }
        }
        Expr::Not(a) => (!Tristate::from_value(&scalar(a)?)).to_value(),
        Expr::Arith(op, a, b) => arith(*op, &scalar(a)?, &scalar(b)?).map_err(eval_err)?,
        Expr::Neg(a) => arith(Arith::Sub, &Value::Int(0), &scalar(a)?).map_err(eval_err)?,
        Expr::Is {
            expr,
            test,
            negated,
        } => {
            let v = scalar(expr)?;
            let hit = match test {
                NullTest::Unknown => v.is_unknown(),
                NullTest::Missing => v.is_missing(),
            };
            Value::Bool(hit != *negated)
        }
        Expr::Call { name, args } if AGGREGATES.contains(&name.as_str()) => {
            let Some(rows) = group else {
                return Err(eval_err(format!(
                    "{name} used outside an aggregate context"
                )));
            };
            if args.len() > 1 {
                return Err(eval_err(format!("{name} takes one argument")));
            }
            let mut acc = Accumulator::new();
            match args.first() {
                None => {
                    if name != "COUNT" {
                        return Err(eval_err(format!("{name} needs an argument")));
                    }
                    return Ok(Val::Scalar(Value::Int(rows.len() as i64)));
                }
                Some(arg) => {
                    for r in rows {
                        acc.push(&eval(arg, Some(r), None)?.scalar()?);
                    }
                }
            }
            match name.as_str() {
                "COUNT" | "ARRAY_COUNT" => acc.count(),
                "MIN" => acc.min(),
                "MAX" => acc.max(),
                "AVG" => acc.avg(),
                "SUM" if acc.count() == Value::Int(0) => Value::Null,
                "SUM" => acc.sum(),
                _ => acc.std_pop(),
            }
        }
        Expr::Call { name, args } => {
            let vals = args.iter().map(scalar).collect::<Result<Vec<_>, _>>()?;
            call_scalar(name, &vals)?
        }
    }))
}

fn call_scalar(name: &str, args: &[Value]) -> Result<Value, ExecError> {
    let one = || {
        if args.len() == 1 {
            Ok(&args[0])
        } else {
            Err(eval_err(format!(
                "{name} takes one argument, got {}",
                args.len()
            )))
        }
    };
    Ok(match name {
        "UPPER" | "LOWER" => match one()? {
            Value::Str(s) if name == "UPPER" => Value::Str(s.to_uppercase()),
            Value::Str(s) => Value::Str(s.to_lowercase()),
            v if v.is_unknown() => Value::Null,
            v => {
                return Err(eval_err(format!(
                    "{name} expects a string, got {}",
                    v.type_name()
                )))
            }
        },
        "TO_BIGINT" | "TO_INT" => to_int(one()?).map_err(eval_err)?,
        "TO_STRING" => to_str(one()?),
        "ABS" => match one()? {
            Value::Int(i) => Value::Int(
                i.checked_abs()
                    .ok_or_else(|| eval_err("integer overflow"))?,
            ),
            Value::Float(f) => Value::Float(f.abs()),
            v if v.is_unknown() => Value::Null,
            v => {
                return Err(eval_err(format!(
                    "ABS expects a number, got {}",
                    v.type_name()
                )))
            }
        },
        other => return Err(eval_err(format!("unknown function {other}"))),
    })
}

fn source_rows(source: &Source, catalog: &Catalog) -> Result<Vec<Env>, ExecError> {
    match source {
        Source::Named { table, alias } => {
            let rows = catalog.rows(&table.namespace, &table.name)?;
            let alias: Arc<str> = Arc::from(alias.as_str());
            Ok(rows
                .iter()
                .map(|r| Env {
                    binds: vec![(alias.clone(), r.clone())],
                })
                .collect())
        }
        Source::Subquery { query, alias } => {
            let rows = run_select(query, catalog)?;
            let alias: Arc<str> = Arc::from(alias.as_str());
            Ok(rows
                .into_iter()
                .map(|r| Env {
                    binds: vec![(alias.clone(), r)],
                })
                .collect())
        }
        Source::Join { left, right, on } => {
            let l = source_rows(left, catalog)?;
            let r = source_rows(right, catalog)?;
            join(l, r, on)
        }
    }
}

fn aliases(rows: &[Env]) -> Vec<Arc<str>> {
    rows.first()
        .map(|e| e.binds.iter().map(|(a, _)| a.clone()).collect())
        .unwrap_or_default()
}

fn joined(l: &Env, r: &Env) -> Env {
    let mut binds = l.binds.clone();
    binds.extend(r.binds.iter().cloned());
    Env { binds }
}

/// Equality joins on a column from each side use a hash index on the right;
/// anything else falls back to a nested loop.
fn join(left: Vec<Env>, right: Vec<Env>, on: &Expr) -> Result<Vec<Env>, ExecError> {
    if let Expr::Compare(CompareOp::Eq, a, b) = on {
        if let (
            Expr::Column {
                qualifier: Some(qa),
                ..
            },
            Expr::Column {
                qualifier: Some(qb),
                ..
            },
        ) = (&**a, &**b)
        {
            let (la, ra) = (aliases(&left), aliases(&right));
            let side = |q: &str, names: &[Arc<str>]| names.iter().any(|n| &**n == q);
            let keys = if side(qa, &la) && side(qb, &ra) {
                Some((a, b))
            } else if side(qb, &la) && side(qa, &ra) {
                Some((b, a))
            } else {
                None
            };
            if let Some((lk, rk)) = keys {
                let mut index: BTreeMap<OrdValue, Vec<usize>> = BTreeMap::new();
                for (i, r) in right.iter().enumerate() {
                    let k = eval(rk, Some(r), None)?.scalar()?;
                    if !k.is_unknown() {
                        index.entry(OrdValue(k)).or_default().push(i);
                    }
                }
                let mut out = Vec::new();
                for l in &left {
                    let k = eval(lk, Some(l), None)?.scalar()?;
                    if k.is_unknown() {
                        continue;
                    }
                    for &i in index.get(&OrdValue(k)).map(Vec::as_slice).unwrap_or(&[]) {
                        // Keep SQL's rule that values of different types never match.
                        let rv = eval(rk, Some(&right[i]), None)?.scalar()?;
                        let lv = eval(lk, Some(l), None)?.scalar()?;
                        if sql_tristate_compare(&lv, CompareOp::Eq, &rv) == Tristate::True {
                            out.push(joined(l, &right[i]));
                        }
                    }
                }
                return Ok(out);
            }
        }
    }
    let mut out = Vec::new();
    for l in &left {
        for r in &right {
            let env = joined(l, r);
            if Tristate::from_value(&eval(on, Some(&env), None)?.scalar()?) == Tristate::True {
                out.push(env);
            }
        }
    }
    Ok(out)
}

fn project(
    sel: &Select,
    env: Option<&Env>,
    group: Option<&[Env]>,
) -> Result<Arc<Record>, ExecError> {
    if sel.value {
        let SelectItem::Expr { expr, .. } = &sel.items[0] else {
            unreachable!("checked by the parser")
        };
        return Ok(match eval(expr, env, group)? {
            Val::Row(r) => r,
            Val::Scalar(v) => Arc::new(Record::from_pairs([("$1", v)])),
        });
    }
    if let ([SelectItem::Star(None)], Some(env)) = (sel.items.as_slice(), env) {
        if env.binds.len() == 1 {
            return Ok(env.binds[0].1.clone());
        }
    }
    let mut out = Record::new();
    for (i, item) in sel.items.iter().enumerate() {
        match item {
            SelectItem::Star(q) => {
                let Some(env) = env else { continue };
                for (alias, rec) in &env.binds {
                    if q.as_deref().is_some_and(|q| q != &**alias) {
                        continue;
                    }
                    for (name, v) in rec.iter() {
                        let name = if out.contains(name) {
                            format!("{alias}.{name}")
                        } else {
                            name.to_string()
                        };
                        out.set(name, v.clone());
                    }
                }
                if let Some(q) = q {
                    if !env.binds.iter().any(|(a, _)| &**a == q.as_str()) {
                        return Err(eval_err(format!("unknown alias `{q}`")));
                    }
                }
            }
            SelectItem::Expr { expr, alias } => {
                let name = alias
                    .clone()
                    .unwrap_or_else(|| expr.default_name(i + 1, false));
                match eval(expr, env, group)? {
                    Val::Scalar(Value::Missing) => {}
                    Val::Scalar(v) => out.set(name, v),
                    // A whole row in a plain SELECT list is flattened under its name.
                    Val::Row(rec) => {
                        for (k, v) in rec.iter() {
                            out.set(format!("{name}.{k}"), v.clone());
                        }
                    }
                }
            }
        }
    }
    Ok(Arc::new(out))
}

fn run_select(sel: &Select, catalog: &Catalog) -> Result<Vec<Arc<Record>>, ExecError> {
    let mut rows = source_rows(&sel.from, catalog)?;
    if let Some(f) = &sel.filter {
        let mut kept = Vec::with_capacity(rows.len());
        for env in rows {
            if Tristate::from_value(&eval(f, Some(&env), None)?.scalar()?) == Tristate::True {
                kept.push(env);
            }
        }
        rows = kept;
    }
    let aggregate = !sel.group_by.is_empty()
        || sel
            .items
            .iter()
            .any(|i| matches!(i, SelectItem::Expr { expr, .. } if expr.has_aggregate()));

    // Each output row keeps what its sort keys are evaluated against.
    let mut out: Vec<(Arc<Record>, Vec<Value>)> = Vec::new();
    let sort_keys =
        |env: Option<&Env>, group: Option<&[Env]>, rec: &Record| -> Result<Vec<Value>, ExecError> {
            sel.order_by
                .iter()
                .map(|(e, _)| {
                    let v = eval(e, env, group)?.scalar()?;
                    if v.is_missing() {
                        if let Expr::Column {
                            qualifier: None,
                            name,
                        } = e
                        {
                            return Ok(rec.get(name).clone());
                        }
                    }
                    Ok(v)
                })
                .collect()
        };
    if aggregate {
        let mut groups: Vec<Vec<Env>> = Vec::new();
        if sel.group_by.is_empty() {
            groups.push(rows);
        } else {
            let mut slot: HashMap<Vec<GroupKey>, usize> = HashMap::new();
            for env in rows {
                let key = sel
                    .group_by
                    .iter()
                    .map(|e| {
                        eval(e, Some(&env), None)
                            .and_then(Val::scalar)
                            .map(GroupKey::from)
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                let i = *slot.entry(key).or_insert_with(|| {
                    groups.push(Vec::new());
                    groups.len() - 1
                });
                groups[i].push(env);
            }
        }
        for g in &groups {
            let first = g.first();
            let rec = project(sel, first, Some(g))?;
            let keys = sort_keys(first, Some(g), &rec)?;
            out.push((rec, keys));
        }
    } else {
        for env in &rows {
            let rec = project(sel, Some(env), None)?;
            let keys = sort_keys(Some(env), None, &rec)?;
            out.push((rec, keys));
        }
    }
    if !sel.order_by.is_empty() {
        out.sort_by(|(_, a), (_, b)| {
            for (i, (_, desc)) in sel.order_by.iter().enumerate() {
                let o = sql_order(&a[i], &b[i]);
                let o = if *desc { o.reverse() } else { o };
                if o.is_ne() {
                    return o;
                }
            }
            std::cmp::Ordering::Equal
        });
    }
    let mut rows: Vec<Arc<Record>> = out
        .into_iter()
        .skip(sel.offset as usize)
        .map(|(r, _)| r)
        .collect();
    if let Some(n) = sel.limit {
        rows.truncate(n as usize);
    }
    Ok(rows)
}

/// Sort order for ORDER BY: NULL and MISSING sort as the largest values, so
/// they come last ascending and first descending.
fn sql_order(a: &Value, b: &Value) -> std::cmp::Ordering {
    use std::cmp::Ordering::*;
    match (a.is_unknown(), b.is_unknown()) {
        (true, true) => Equal,
        (true, false) => Greater,
        (false, true) => Less,
        (false, false) => crate::value::mongo_total_order(a, b),
    }
}

/// Grouping key. NULL and MISSING form one group, numbers group by value.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum GroupKey {
    Unknown,
    Bool(bool),
    Int(i64),
    Float(u64),
    Str(String),
}

impl From<Value> for GroupKey {
    fn from(v: Value) -> Self {
        match v {
            Value::Missing | Value::Null => GroupKey::Unknown,
            Value::Bool(b) => GroupKey::Bool(b),
            Value::Int(i) => GroupKey::Int(i),
            Value::Float(f) if f.fract() == 0.0 && f.abs() < 9.0e15 => GroupKey::Int(f as i64),
            Value::Float(f) => GroupKey::Float(if f == 0.0 { 0 } else { f.to_bits() }),
            Value::Str(s) => GroupKey::Str(s),
        }
    }
}

/// Runs a parsed statement. Statements that store a result return an empty
/// table.
pub fn run_statement(
    stmt: &Statement,
    catalog: &mut Catalog,
    allow_overwrite: bool,
) -> Result<Table, ExecError> {
    match stmt {
        Statement::Query(q) => {
            let rows = run_select(q, catalog)?;
            Ok(Table::new(
                rows.into_iter().map(Arc::unwrap_or_clone).collect(),
            ))
        }
        Statement::CreateTableAs { target, query } | Statement::InsertInto { target, query } => {
            let rows = run_select(query, catalog)?;
            catalog.store(&target.namespace, &target.name, rows, allow_overwrite)?;
            Ok(Table::empty())
        }
    }
}
