//! Lazy frames.
//!
//! A [`Frame`] carries a query, never data. Transformations build the next
//! query from the current one through the pack's rules and return a new
//! frame; they never talk to the connector. Actions render a final query and
//! run it through the connector exactly once.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering as AtomicOrdering};
use std::sync::Arc;

use thiserror::Error;

use crate::connector::{Connector, ConnectorError, Request};
use crate::rewrite::{
    chain_attributes, substitute, DialectKind, LanguagePack, RewriteError, Template, Token,
    VarBindings,
};
use crate::value::{mongo_total_order, CompareOp, Table, Value};

/// A rendered query: flat text, or the stage list of a pipeline.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum QueryText {
    Text(String),
    Stages(Vec<String>),
}

impl QueryText {
    /// The text a child query receives as `$subquery`.
    pub fn as_subquery(&self) -> String {
        match self {
            QueryText::Text(s) => s.clone(),
            QueryText::Stages(stages) => stages.join(",\n"),
        }
    }

    pub fn stages(&self) -> Option<&[String]> {
        match self {
            QueryText::Stages(s) => Some(s),
            QueryText::Text(_) => None,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            QueryText::Text(s) => Some(s),
            QueryText::Stages(_) => None,
        }
    }
}

impl fmt::Display for QueryText {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.as_subquery())
    }
}

/// Splits rendered pipeline text into its top-level `{...}` stage objects.
/// Stage text is kept byte for byte, so a parent's stages come back out of a
/// child rendering unchanged.
pub fn split_stages(text: &str) -> Result<Vec<String>, String> {
    let mut out = Vec::new();
    let mut depth = 0usize;
    let mut start = 0usize;
    let mut in_str = false;
    let mut escaped = false;
    for (i, c) in text.char_indices() {
        if in_str {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_str = false;
            }
            continue;
        }
        match c {
            '"' if depth > 0 => in_str = true,
            '{' | '[' => {
                if depth == 0 {
                    if c == '[' {
                        return Err(format!("stage list entry at byte {i} is not an object"));
                    }
                    start = i;
                }
                depth += 1;
            }
            '}' | ']' => {
                if depth == 0 {
                    return Err(format!("unbalanced `{c}` at byte {i}"));
                }
                depth -= 1;
                if depth == 0 {
                    out.push(text[start..=i].to_string());
                }
            }
            ',' if depth == 0 => {}
            c if c.is_whitespace() => {}
            c if depth == 0 => return Err(format!("unexpected `{c}` between stages at byte {i}")),
            _ => {}
        }
    }
    if depth != 0 || in_str {
        return Err("unterminated stage".into());
    }
    if out.is_empty() {
        return Err("no stages".into());
    }
    Ok(out)
}

/// Identifies the scan (or other fresh origin) a frame descends from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RootId(u64);

impl RootId {
    fn fresh() -> RootId {
        static NEXT: AtomicU64 = AtomicU64::new(1);
        RootId(NEXT.fetch_add(1, AtomicOrdering::Relaxed))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Base {
    pub namespace: String,
    pub collection: String,
}

impl Base {
    /// `namespace.collection`, or the bare collection when the namespace is
    /// empty.
    pub fn qualified(&self) -> String {
        if self.namespace.is_empty() {
            self.collection.clone()
        } else {
            format!("{}.{}", self.namespace, self.collection)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arity {
    Boolean,
    Numeric,
    String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExprInfo {
    /// Bare predicate or arithmetic text, ready to drop into a WHERE clause,
    /// a `$match` or another expression.
    pub snippet: String,
    pub arity: Arity,
    prec: u8,
    /// The first column the expression reads, used for generated aliases.
    pub column: Option<String>,
    /// Query the expression is projected over.
    pub base_query: QueryText,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FrameKind {
    Scan,
    Projected(Vec<String>),
    Expr(ExprInfo),
    Filtered,
    Grouped,
    Sorted,
    Joined,
    Aggregated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggFunc {
    Min,
    Max,
    Avg,
    Std,
    Count,
}

impl AggFunc {
    pub const ALL: [AggFunc; 5] = [
        AggFunc::Min,
        AggFunc::Max,
        AggFunc::Avg,
        AggFunc::Std,
        AggFunc::Count,
    ];

    /// Order used by `describe`.
    pub const DESCRIBE: [AggFunc; 5] = [
        AggFunc::Min,
        AggFunc::Max,
        AggFunc::Avg,
        AggFunc::Count,
        AggFunc::Std,
    ];

    pub fn key(self) -> &'static str {
        match self {
            AggFunc::Min => "min",
            AggFunc::Max => "max",
            AggFunc::Avg => "avg",
            AggFunc::Std => "std",
            AggFunc::Count => "count",
        }
    }
}

impl FromStr for AggFunc {
    type Err = FrameError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AggFunc::ALL
            .into_iter()
            .find(|f| f.key() == s)
            .ok_or_else(|| FrameError::UnknownFunction(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArithOp {
    Add,
    Sub,
    Mul,
    Div,
    Mod,
}

impl ArithOp {
    pub fn key(self) -> &'static str {
        match self {
            ArithOp::Add => "add",
            ArithOp::Sub => "sub",
            ArithOp::Mul => "mul",
            ArithOp::Div => "div",
            ArithOp::Mod => "mod",
        }
    }

    fn prec(self) -> u8 {
        match self {
            ArithOp::Add | ArithOp::Sub => PREC_ADD,
            ArithOp::Mul | ArithOp::Div | ArithOp::Mod => PREC_MUL,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Conversion {
    ToInt,
    ToStr,
}

impl Conversion {
    pub fn key(self) -> &'static str {
        match self {
            Conversion::ToInt => "to_int",
            Conversion::ToStr => "to_str",
        }
    }
}

const PREC_OR: u8 = 1;
const PREC_AND: u8 = 2;
const PREC_NOT: u8 = 3;
const PREC_CMP: u8 = 4;
const PREC_ADD: u8 = 6;
const PREC_MUL: u8 = 7;
const PREC_ATOM: u8 = 100;

#[derive(Debug, Clone, PartialEq)]
pub enum Literal {
    Int(i64),
    Float(f64),
    Str(String),
    Bool(bool),
    Null,
    /// Emitted as-is. Used for placeholder names such as `x` in query
    /// templates shown to people.
    Symbol(String),
}

#[derive(Debug, Clone)]
pub enum Operand {
    Lit(Literal),
    Frame(Frame),
}

impl Operand {
    pub fn symbol(name: &str) -> Operand {
        Operand::Lit(Literal::Symbol(name.to_string()))
    }
}

impl From<i64> for Operand {
    fn from(v: i64) -> Self {
        Operand::Lit(Literal::Int(v))
    }
}

impl From<i32> for Operand {
    fn from(v: i32) -> Self {
        Operand::Lit(Literal::Int(v.into()))
    }
}

impl From<f64> for Operand {
    fn from(v: f64) -> Self {
        Operand::Lit(Literal::Float(v))
    }
}

impl From<bool> for Operand {
    fn from(v: bool) -> Self {
        Operand::Lit(Literal::Bool(v))
    }
}

impl From<&str> for Operand {
    fn from(v: &str) -> Self {
        Operand::Lit(Literal::Str(v.to_string()))
    }
}

impl From<String> for Operand {
    fn from(v: String) -> Self {
        Operand::Lit(Literal::Str(v))
    }
}

impl From<&Frame> for Operand {
    fn from(f: &Frame) -> Self {
        Operand::Frame(f.clone())
    }
}

impl From<Literal> for Operand {
    fn from(l: Literal) -> Self {
        Operand::Lit(l)
    }
}

impl TryFrom<&Value> for Literal {
    type Error = FrameError;
    fn try_from(v: &Value) -> Result<Self, Self::Error> {
        Ok(match v {
            Value::Missing => return Err(FrameError::Unsupported("MISSING has no literal".into())),
            Value::Null => Literal::Null,
            Value::Bool(b) => Literal::Bool(*b),
            Value::Int(i) => Literal::Int(*i),
            Value::Float(f) => Literal::Float(*f),
            Value::Str(s) => Literal::Str(s.clone()),
        })
    }
}

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("column list is empty")]
    EmptyColumns,
    #[error("operands come from different frames; combine expressions built on the same source")]
    Lineage,
    #[error("a mask must be a boolean expression")]
    NotAMask,
    #[error("operand must be a single column or an expression, found {0}")]
    NotAColumn(String),
    #[error("unknown aggregate function `{0}`")]
    UnknownFunction(String),
    #[error("not supported: {0}")]
    Unsupported(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Rewrite(#[from] RewriteError),
    #[error("rendered pipeline is malformed: {0}")]
    Stages(String),
    #[error("column `{column}` has {found} distinct values, more than the limit of {max}")]
    Cardinality {
        column: String,
        found: usize,
        max: usize,
    },
    #[error("join: {0}")]
    Join(String),
    #[error("expected a single value, got {0}")]
    Shape(String),
    #[error("{source}\nquery:\n{query}")]
    Action {
        query: String,
        #[source]
        source: ConnectorError,
    },
}

impl FrameError {
    /// The rendered query for errors raised while executing an action.
    pub fn query(&self) -> Option<&str> {
        match self {
            FrameError::Action { query, .. } => Some(query),
            _ => None,
        }
    }
}

type Result<T, E = FrameError> = std::result::Result<T, E>;

/// Default cap on generated columns for [`Frame::get_dummies`].
pub const DEFAULT_MAX_DUMMIES: usize = 64;

#[derive(Clone)]
pub struct Frame {
    pack: Arc<LanguagePack>,
    connector: Arc<dyn Connector>,
    query: QueryText,
    base: Base,
    root: RootId,
    root_query: QueryText,
    kind: FrameKind,
}

impl fmt::Debug for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Frame")
            .field("pack", &self.pack.name)
            .field("base", &self.base)
            .field("kind", &self.kind)
            .field("query", &self.query)
            .finish()
    }
}

/// An operand after resolution against a pack.
enum Piece {
    Column(String),
    Expr { snippet: String, prec: u8 },
    Literal(String),
}

#[derive(Clone, Copy, PartialEq)]
enum Slot {
    /// Written as `"$$var"`: needs a bare field name.
    FieldPath,
    /// Written as `{ $var }`: needs an expression body.
    Braced,
    Value,
}

fn slot_kind(t: &Template, var: &str) -> Slot {
    let mut prev: Option<&str> = None;
    for tok in t.tokens() {
        match tok {
            Token::Var(v) if v == var => {
                let before = prev.unwrap_or("");
                if before.ends_with("\"$") {
                    return Slot::FieldPath;
                }
                if before.trim_end().ends_with('{') {
                    return Slot::Braced;
                }
                return Slot::Value;
            }
            Token::Literal(s) => prev = Some(s),
            _ => prev = None,
        }
    }
    Slot::Value
}

struct ExprSpec<'a> {
    section: &'static str,
    key: &'a str,
    prec: u8,
    arity: Arity,
    alias: AliasRule<'a>,
}

enum AliasRule<'a> {
    Compare(&'a str),
    Scalar(&'a str),
}

impl Frame {
    /// The scan every chain starts from. Nothing is sent to the connector;
    /// whether the collection exists is only discovered by an action.
    pub fn scan(
        namespace: &str,
        collection: &str,
        pack: Arc<LanguagePack>,
        connector: Arc<dyn Connector>,
    ) -> Result<Frame> {
        let base = Base {
            namespace: namespace.to_string(),
            collection: collection.to_string(),
        };
        let b = VarBindings::new()
            .with("namespace", namespace)
            .with("collection", collection);
        let text = render(&pack, "QUERIES", "q1", &b)?;
        let query = to_query(&pack, text)?;
        Ok(Frame {
            pack,
            connector,
            root_query: query.clone(),
            query,
            base,
            root: RootId::fresh(),
            kind: FrameKind::Scan,
        })
    }

    pub fn query(&self) -> &QueryText {
        &self.query
    }

    /// The query as one string: the text, or the stages joined by `,\n`.
    pub fn query_text(&self) -> String {
        self.query.as_subquery()
    }

    pub fn kind(&self) -> &FrameKind {
        &self.kind
    }

    pub fn root(&self) -> RootId {
        self.root
    }

    pub fn base(&self) -> &Base {
        &self.base
    }

    pub fn pack(&self) -> &Arc<LanguagePack> {
        &self.pack
    }

    pub fn connector(&self) -> &Arc<dyn Connector> {
        &self.connector
    }

    /// Same lineage, same query, different connector.
    pub fn with_connector(&self, connector: Arc<dyn Connector>) -> Frame {
        Frame {
            connector,
            ..self.clone()
        }
    }

    fn is_pipeline(&self) -> bool {
        self.pack.dialect == DialectKind::Pipeline
    }

    fn rule(&self, section: &str, key: &str, b: &VarBindings) -> Result<String> {
        Ok(render(&self.pack, section, key, b)?)
    }

    /// Renders a QUERIES rule whose `$subquery` is this frame's query.
    fn derive_query(&self, key: &str, b: VarBindings) -> Result<QueryText> {
        self.wrap(&self.query, "QUERIES", key, b)
    }

    fn wrap(
        &self,
        parent: &QueryText,
        section: &str,
        key: &str,
        b: VarBindings,
    ) -> Result<QueryText> {
        let b = b
            .with("subquery", parent.as_subquery())
            .with("namespace", self.base.namespace.clone())
            .with("collection", self.base.collection.clone());
        let text = self.rule(section, key, &b)?;
        to_query(&self.pack, text)
    }

    fn child(&self, query: QueryText, kind: FrameKind) -> Frame {
        Frame {
            query,
            kind,
            ..self.clone()
        }
    }

    fn fresh_root(&self, query: QueryText, kind: FrameKind) -> Frame {
        Frame {
            root_query: query.clone(),
            query,
            kind,
            root: RootId::fresh(),
            ..self.clone()
        }
    }

    /// `df[col]` for one column, `df[[a, b]]` for several.
    pub fn project(&self, columns: &[&str]) -> Result<Frame> {
        let alias = match columns {
            [] => return Err(FrameError::EmptyColumns),
            [single] => self.rule(
                "ATTRIBUTE ALIAS",
                "project_single",
                &VarBindings::new()
                    .with("attribute", *single)
                    .with("alias", *single),
            )?,
            many => {
                let items = many
                    .iter()
                    .map(|c| {
                        self.rule(
                            "ATTRIBUTE ALIAS",
                            "project_item",
                            &VarBindings::new().with("attribute", *c).with("alias", *c),
                        )
                    })
                    .collect::<Result<Vec<_>>>()?;
                chain_attributes(&items, &self.pack)?
            }
        };
        let q = self.derive_query("q2", VarBindings::new().with("attribute_alias", alias))?;
        Ok(self.child(
            q,
            FrameKind::Projected(columns.iter().map(|c| c.to_string()).collect()),
        ))
    }

    /// Shorthand for a one-column projection.
    pub fn col(&self, name: &str) -> Result<Frame> {
        self.project(&[name])
    }

    fn render_literal(&self, lit: &Literal) -> Result<String> {
        Ok(match lit {
            Literal::Int(i) => i.to_string(),
            Literal::Float(f) => format!("{f:?}"),
            Literal::Symbol(s) => s.clone(),
            Literal::Null => self.pack.literal("LITERALS", "null")?,
            Literal::Bool(true) => self.pack.literal("LITERALS", "true")?,
            Literal::Bool(false) => self.pack.literal("LITERALS", "false")?,
            Literal::Str(s) => {
                let q = self.pack.literal("LITERALS", "string_quote")?;
                quote_string(s, &q)
            }
        })
    }

    fn piece_of_frame(&self, f: &Frame) -> Result<(Piece, Option<String>, QueryText)> {
        if f.root != self.root {
            return Err(FrameError::Lineage);
        }
        match &f.kind {
            FrameKind::Projected(cols) if cols.len() == 1 => Ok((
                Piece::Column(cols[0].clone()),
                Some(cols[0].clone()),
                f.query.clone(),
            )),
            FrameKind::Expr(info) => Ok((
                Piece::Expr {
                    snippet: info.snippet.clone(),
                    prec: info.prec,
                },
                info.column.clone(),
                info.base_query.clone(),
            )),
            other => Err(FrameError::NotAColumn(format!("{other:?}"))),
        }
    }

    /// Renders one operand into the slot `var` of `template`. `min_prec` is
    /// the weakest operator precedence that may appear unparenthesized.
    fn bind_piece(
        &self,
        template: &Template,
        var: &str,
        piece: &Piece,
        right_side: bool,
        min_prec: u8,
    ) -> Result<String> {
        if self.is_pipeline() {
            let slot = slot_kind(template, var);
            return match (slot, piece) {
                (Slot::FieldPath, Piece::Column(c)) => self.rule(
                    "ATTRIBUTE ALIAS",
                    "single_attribute",
                    &VarBindings::new().with("attribute", c.clone()),
                ),
                (Slot::Braced, Piece::Expr { snippet, .. }) => Ok(snippet.clone()),
                (Slot::Value, Piece::Column(c)) => self.rule(
                    "ATTRIBUTE ALIAS",
                    "right_attribute",
                    &VarBindings::new().with("attribute", c.clone()),
                ),
                (Slot::Value, Piece::Expr { snippet, .. }) => Ok(format!("{{ {snippet} }}")),
                (Slot::Value, Piece::Literal(l)) => Ok(l.clone()),
                (Slot::FieldPath, _) => Err(FrameError::Unsupported(format!(
                    "`${var}` in this rule must be a plain column"
                ))),
                (Slot::Braced, _) => Err(FrameError::Unsupported(format!(
                    "`${var}` in this rule must be an expression, not a column or literal"
                ))),
            };
        }
        match piece {
            Piece::Column(c) => self.rule(
                "ATTRIBUTE ALIAS",
                if right_side {
                    "right_attribute"
                } else {
                    "single_attribute"
                },
                &VarBindings::new().with("attribute", c.clone()),
            ),
            Piece::Literal(l) => Ok(l.clone()),
            Piece::Expr { snippet, prec } => {
                if *prec < min_prec && self.pack.entry("ATTRIBUTE ALIAS", "parenthesize").is_some()
                {
                    self.rule(
                        "ATTRIBUTE ALIAS",
                        "parenthesize",
                        &VarBindings::new().with("statement", snippet.clone()),
                    )
                } else {
                    Ok(snippet.clone())
                }
            }
        }
    }

    /// Shared builder for every column expression. `operands` pairs each
    /// template variable with its operand and minimum unparenthesized
    /// precedence.
    fn expr(&self, spec: ExprSpec<'_>, operands: Vec<(&str, Operand, bool, u8)>) -> Result<Frame> {
        let template = self.pack.template(spec.section, spec.key)?.clone();
        let mut b = VarBindings::new();
        let mut column: Option<String> = None;
        let mut bases: Vec<QueryText> = Vec::new();
        for (var, operand, right_side, min_prec) in operands {
            let piece = match operand {
                Operand::Lit(l) => Piece::Literal(self.render_literal(&l)?),
                Operand::Frame(f) => {
                    let (piece, col, base) = self.piece_of_frame(&f)?;
                    if column.is_none() {
                        column = col;
                    }
                    bases.push(base);
                    piece
                }
            };
            b.set(
                var,
                self.bind_piece(&template, var, &piece, right_side, min_prec)?,
            );
        }
        let snippet = substitute(&template, &b)?;
        let base_query = match bases.split_first() {
            Some((first, rest)) if rest.iter().all(|q| q == first) => first.clone(),
            _ => self.root_query.clone(),
        };
        let alias = match spec.alias {
            AliasRule::Compare(func) => self.rule(
                "ATTRIBUTE ALIAS",
                "compare_alias",
                &VarBindings::new().with("func", func),
            )?,
            AliasRule::Scalar(func) => self.rule(
                "ATTRIBUTE ALIAS",
                "scalar_alias",
                &VarBindings::new()
                    .with("func", func)
                    .with("attribute", column.clone().unwrap_or_else(|| "expr".into()))
                    .with("statement", snippet.clone()),
            )?,
        };
        let attribute_alias = self.rule(
            "ATTRIBUTE ALIAS",
            "attribute_alias",
            &VarBindings::new()
                .with("alias", alias)
                .with("attribute", snippet.clone()),
        )?;
        let query = self.wrap(
            &base_query,
            "QUERIES",
            "q10",
            VarBindings::new()
                .with("statement", snippet.clone())
                .with("attribute_alias", attribute_alias),
        )?;
        Ok(self.child(
            query,
            FrameKind::Expr(ExprInfo {
                snippet,
                arity: spec.arity,
                prec: spec.prec,
                column,
                base_query,
            }),
        ))
    }

    fn binary(&self, spec: ExprSpec<'_>, rhs: Operand) -> Result<Frame> {
        let p = spec.prec;
        self.expr(
            spec,
            vec![
                ("left", Operand::Frame(self.clone()), false, p),
                ("right", rhs, true, p + 1),
            ],
        )
    }

    fn unary(&self, spec: ExprSpec<'_>, var: &str, min_prec: u8) -> Result<Frame> {
        self.expr(
            spec,
            vec![(var, Operand::Frame(self.clone()), false, min_prec)],
        )
    }

    pub fn compare(&self, op: CompareOp, rhs: impl Into<Operand>) -> Result<Frame> {
        let key = op.key();
        self.binary(
            ExprSpec {
                section: "COMPARISON STATEMENTS",
                key,
                prec: PREC_CMP,
                arity: Arity::Boolean,
                alias: AliasRule::Compare(key),
            },
            rhs.into(),
        )
    }

    pub fn eq(&self, rhs: impl Into<Operand>) -> Result<Frame> {
        self.compare(CompareOp::Eq, rhs)
    }

    pub fn ne(&self, rhs: impl Into<Operand>) -> Result<Frame> {
        self.compare(CompareOp::Ne, rhs)
    }

    pub fn gt(&self, rhs: impl Into<Operand>) -> Result<Frame> {
        self.compare(CompareOp::Gt, rhs)
    }

    pub fn lt(&self, rhs: impl Into<Operand>) -> Result<Frame> {
        self.compare(CompareOp::Lt, rhs)
    }

    pub fn ge(&self, rhs: impl Into<Operand>) -> Result<Frame> {
        self.compare(CompareOp::Ge, rhs)
    }

    pub fn le(&self, rhs: impl Into<Operand>) -> Result<Frame> {
        self.compare(CompareOp::Le, rhs)
    }

    pub fn arith(&self, op: ArithOp, rhs: impl Into<Operand>) -> Result<Frame> {
        let key = op.key();
        self.binary(
            ExprSpec {
                section: "ARITHMETIC STATEMENTS",
                key,
                prec: op.prec(),
                arity: Arity::Numeric,
                alias: AliasRule::Scalar(key),
            },
            rhs.into(),
        )
    }

    fn expect_bool(&self, f: &Frame) -> Result<()> {
        match &f.kind {
            FrameKind::Expr(info) if info.arity == Arity::Boolean => Ok(()),
            _ => Err(FrameError::NotAMask),
        }
    }

    fn logical(&self, key: &'static str, prec: u8, rhs: &Frame) -> Result<Frame> {
        self.expect_bool(self)?;
        self.expect_bool(rhs)?;
        self.binary(
            ExprSpec {
                section: "LOGICAL STATEMENTS",
                key,
                prec,
                arity: Arity::Boolean,
                alias: AliasRule::Compare(key),
            },
            Operand::Frame(rhs.clone()),
        )
    }

    /// `a & b`.
    pub fn and(&self, rhs: &Frame) -> Result<Frame> {
        self.logical("and", PREC_AND, rhs)
    }

    /// `a | b`.
    pub fn or(&self, rhs: &Frame) -> Result<Frame> {
        self.logical("or", PREC_OR, rhs)
    }

    /// `~a`.
    pub fn not(&self) -> Result<Frame> {
        self.expect_bool(self)?;
        self.unary(
            ExprSpec {
                section: "LOGICAL STATEMENTS",
                key: "not",
                prec: PREC_NOT,
                arity: Arity::Boolean,
                alias: AliasRule::Compare("not"),
            },
            "left",
            PREC_NOT,
        )
    }

    fn null_check(&self, key: &'static str) -> Result<Frame> {
        self.unary(
            ExprSpec {
                section: "NULL CHECK",
                key,
                prec: PREC_CMP,
                arity: Arity::Boolean,
                alias: AliasRule::Scalar(key),
            },
            "statement",
            PREC_CMP + 1,
        )
    }

    pub fn isna(&self) -> Result<Frame> {
        self.null_check("isna")
    }

    pub fn notna(&self) -> Result<Frame> {
        self.null_check("notna")
    }

    pub fn astype(&self, to: Conversion) -> Result<Frame> {
        let key = to.key();
        self.unary(
            ExprSpec {
                section: "TYPE CONVERSION",
                key,
                prec: PREC_ATOM,
                arity: match to {
                    Conversion::ToInt => Arity::Numeric,
                    Conversion::ToStr => Arity::String,
                },
                alias: AliasRule::Scalar(key),
            },
            "statement",
            0,
        )
    }

    /// `map(str.upper)`.
    pub fn upper(&self) -> Result<Frame> {
        self.unary(
            ExprSpec {
                section: "SCALAR FUNCTIONS",
                key: "upper",
                prec: PREC_ATOM,
                arity: Arity::String,
                alias: AliasRule::Scalar("upper"),
            },
            "attribute",
            0,
        )
    }

    /// `df[mask]`. The mask's bare predicate is applied to this frame, so a
    /// mask built on the scan can filter any frame of the same lineage.
    pub fn filter(&self, mask: &Frame) -> Result<Frame> {
        let FrameKind::Expr(info) = &mask.kind else {
            return Err(FrameError::NotAMask);
        };
        if info.arity != Arity::Boolean {
            return Err(FrameError::NotAMask);
        }
        if mask.root != self.root {
            return Err(FrameError::Lineage);
        }
        let q = self.derive_query(
            "q6",
            VarBindings::new().with("statement", info.snippet.clone()),
        )?;
        Ok(self.child(q, FrameKind::Filtered))
    }

    pub fn sort(&self, column: &str, descending: bool) -> Result<Frame> {
        let (key, rule, var) = if descending {
            ("q4", "sort_desc_attr", "sort_desc_attr")
        } else {
            ("q5", "sort_asc_attr", "sort_asc_attr")
        };
        let attr = self.rule(
            "ATTRIBUTE ALIAS",
            rule,
            &VarBindings::new().with("attribute", column),
        )?;
        let q = self.derive_query(key, VarBindings::new().with(var, attr))?;
        Ok(self.child(q, FrameKind::Sorted))
    }

    /// `df.groupby(key)[column].agg(func)`.
    pub fn groupby_agg(&self, key: &str, func: AggFunc, column: &str) -> Result<Frame> {
        let agg = self.rule(
            "FUNCTIONS",
            func.key(),
            &VarBindings::new().with("attribute", column),
        )?;
        let agg_expr = self.rule(
            "GROUP AGGREGATES",
            func.key(),
            &VarBindings::new()
                .with("agg", agg)
                .with("attribute", column)
                .with("func", func.key()),
        )?;
        let q = self.derive_query(
            "q8",
            VarBindings::new()
                .with("group_attr", key)
                .with("agg_expr", agg_expr),
        )?;
        Ok(self.fresh_root(q, FrameKind::Grouped))
    }

    /// Inner equi-join.
    pub fn join(&self, right: &Frame, left_on: &str, right_on: &str) -> Result<Frame> {
        self.merge(right, left_on, right_on, "inner")
    }

    pub fn merge(&self, right: &Frame, left_on: &str, right_on: &str, how: &str) -> Result<Frame> {
        if how != "inner" {
            return Err(FrameError::Join(format!(
                "only inner joins are supported, got `{how}`"
            )));
        }
        if !Arc::ptr_eq(&self.pack, &right.pack) && self.pack.name != right.pack.name {
            return Err(FrameError::Join(
                "frames use different language packs".into(),
            ));
        }
        let template = self.pack.template("QUERIES", "q9")?;
        let right_is_scan = right.kind == FrameKind::Scan;
        let uses_right_query = [
            "right_subquery",
            "right_source",
            "right_subquery_or_collection",
        ]
        .iter()
        .any(|v| template.uses(v));
        if !uses_right_query && !right_is_scan {
            return Err(FrameError::Join(
                "this pack joins against a collection by name; the right side must be a plain scan"
                    .into(),
            ));
        }
        if self.is_pipeline() && right.base.namespace != self.base.namespace {
            return Err(FrameError::Join(
                "a pipeline lookup can only read collections in the same namespace".into(),
            ));
        }
        let source = |f: &Frame| {
            if f.kind == FrameKind::Scan {
                f.base.qualified()
            } else {
                format!("({})", f.query.as_subquery())
            }
        };
        let b = VarBindings::new()
            .with("left_subquery", self.query.as_subquery())
            .with("right_subquery", right.query.as_subquery())
            .with("left_source", source(self))
            .with("right_source", source(right))
            .with(
                "right_subquery_or_collection",
                if self.is_pipeline() {
                    right.base.collection.clone()
                } else {
                    right.query.as_subquery()
                },
            )
            .with("left_collection", self.base.collection.clone())
            .with("right_collection", right.base.collection.clone())
            .with("left_on", left_on)
            .with("right_on", right_on)
            .with("join_var", "left")
            .with("namespace", self.base.namespace.clone())
            .with("collection", self.base.collection.clone());
        let text = self.rule("QUERIES", "q9", &b)?;
        let q = to_query(&self.pack, text)?;
        Ok(self.fresh_root(q, FrameKind::Joined))
    }

    /// min, max, avg, count and std of each column in one query.
    pub fn describe(&self, columns: &[&str]) -> Result<Frame> {
        if columns.is_empty() {
            return Err(FrameError::EmptyColumns);
        }
        let mut items = Vec::new();
        for col in columns {
            for func in AggFunc::DESCRIBE {
                let agg = self.rule(
                    "FUNCTIONS",
                    func.key(),
                    &VarBindings::new().with("attribute", *col),
                )?;
                items.push(
                    self.rule(
                        "ATTRIBUTE ALIAS",
                        "describe_item",
                        &VarBindings::new()
                            .with("agg", agg)
                            .with("func", func.key())
                            .with("attribute", *col),
                    )?,
                );
            }
        }
        let agg_func = chain_attributes(&items, &self.pack)?;
        let q = self.derive_query("q7", VarBindings::new().with("agg_func", agg_func))?;
        Ok(self.fresh_root(q, FrameKind::Aggregated))
    }

    /// One-hot encoding of `column` with at most [`DEFAULT_MAX_DUMMIES`]
    /// generated columns. Runs one query to learn the distinct values.
    pub fn get_dummies(&self, column: &str) -> Result<Frame> {
        self.get_dummies_with_limit(column, DEFAULT_MAX_DUMMIES)
    }

    pub fn get_dummies_with_limit(&self, column: &str, max: usize) -> Result<Frame> {
        let groups = self
            .groupby_agg(column, AggFunc::Count, column)?
            .collect()?;
        let mut values: Vec<Value> = groups
            .column(column)
            .into_iter()
            .filter(|v| !v.is_unknown())
            .collect();
        values.sort_by(mongo_total_order);
        values.dedup();
        if values.len() > max {
            return Err(FrameError::Cardinality {
                column: column.to_string(),
                found: values.len(),
                max,
            });
        }
        if values.is_empty() {
            return Err(FrameError::EmptyColumns);
        }
        let col = self.col(column)?;
        let mut items = Vec::new();
        let mut names = Vec::new();
        for v in &values {
            let ind = col.eq(Literal::try_from(v)?)?.astype(Conversion::ToInt)?;
            let FrameKind::Expr(info) = &ind.kind else {
                unreachable!("column expressions are Expr frames")
            };
            let name = format!("{column}_{}", plain(v));
            items.push(
                self.rule(
                    "ATTRIBUTE ALIAS",
                    "attribute_alias",
                    &VarBindings::new()
                        .with("alias", name.clone())
                        .with("attribute", info.snippet.clone()),
                )?,
            );
            names.push(name);
        }
        let chained = chain_attributes(&items, &self.pack)?;
        let q = self.derive_query("q2", VarBindings::new().with("attribute_alias", chained))?;
        Ok(self.child(q, FrameKind::Projected(names)))
    }

    fn request(&self, query: QueryText) -> Request {
        Request::new(&self.base.namespace, &self.base.collection, query)
    }

    fn run(&self, req: Request) -> Result<Table> {
        self.connector
            .run(&req)
            .map_err(|source| FrameError::Action {
                query: self.connector.pre_process(&req).render(),
                source,
            })
    }

    pub fn head_request(&self, n: usize) -> Result<Request> {
        if n == 0 {
            return Err(FrameError::InvalidArgument("head needs n >= 1".into()));
        }
        let q = self.wrap(
            &self.query,
            "LIMIT",
            "limit",
            VarBindings::new().with("num", n.to_string()),
        )?;
        Ok(self.request(q))
    }

    pub fn count_request(&self) -> Result<Request> {
        Ok(self.request(self.derive_query("q3", VarBindings::new())?))
    }

    pub fn collect_request(&self) -> Result<Request> {
        Ok(self.request(self.wrap(&self.query, "LIMIT", "return_all", VarBindings::new())?))
    }

    pub fn agg_value_request(&self, func: AggFunc, column: &str) -> Result<Request> {
        let projected = match &self.kind {
            FrameKind::Projected(cols) if cols.len() == 1 && cols[0] == column => self.clone(),
            _ => self.col(column)?,
        };
        let agg = self.rule(
            "FUNCTIONS",
            func.key(),
            &VarBindings::new().with("attribute", column),
        )?;
        let agg_func = self.rule(
            "ATTRIBUTE ALIAS",
            "value_agg",
            &VarBindings::new()
                .with("agg", agg)
                .with("func", func.key())
                .with("attribute", column),
        )?;
        let q7 = projected.derive_query("q7", VarBindings::new().with("agg_func", agg_func))?;
        let q = self.wrap(&q7, "LIMIT", "return_all", VarBindings::new())?;
        Ok(self.request(q))
    }

    pub fn persist_request(&self, target: &str) -> Result<Request> {
        if target.is_empty() {
            return Err(FrameError::InvalidArgument(
                "persist needs a target name".into(),
            ));
        }
        let b = VarBindings::new()
            .with("subquery", self.query.as_subquery())
            .with("namespace", self.base.namespace.clone())
            .with("collection", target);
        let text = self.rule("SAVE RESULTS", "to_collection", &b)?;
        Ok(self.request(to_query(&self.pack, text)?))
    }

    /// First `n` rows.
    pub fn head(&self, n: usize) -> Result<Table> {
        self.run(self.head_request(n)?)
    }

    /// `len(df)`.
    pub fn count(&self) -> Result<i64> {
        let t = self.run(self.count_request()?)?;
        match single_value(&t)? {
            None => Ok(0),
            Some(Value::Int(i)) => Ok(i),
            Some(Value::Float(f)) if f.fract() == 0.0 => Ok(f as i64),
            Some(other) => Err(FrameError::Shape(format!("count returned {other:?}"))),
        }
    }

    /// `df[column].min()` and friends. An empty input gives `Null`.
    pub fn agg_value(&self, func: AggFunc, column: &str) -> Result<Value> {
        let t = self.run(self.agg_value_request(func, column)?)?;
        Ok(single_value(&t)?.unwrap_or(Value::Null))
    }

    pub fn collect(&self) -> Result<Table> {
        self.run(self.collect_request()?)
    }

    /// Saves the result as a new collection in this frame's namespace.
    pub fn persist(&self, target: &str) -> Result<()> {
        self.run(self.persist_request(target)?)?;
        Ok(())
    }
}

fn single_value(t: &Table) -> Result<Option<Value>> {
    match t.rows.as_slice() {
        [] => Ok(None),
        [row] => {
            let present: Vec<_> = row.present().collect();
            match present.as_slice() {
                [] => Ok(None),
                [(_, v)] => Ok(Some((*v).clone())),
                _ => Err(FrameError::Shape(format!(
                    "one row with {} values",
                    present.len()
                ))),
            }
        }
        rows => Err(FrameError::Shape(format!("{} rows", rows.len()))),
    }
}

fn plain(v: &Value) -> String {
    match v {
        Value::Str(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Quotes a string with the pack's quote character. A single quote escapes
/// by doubling, anything else with a backslash.
pub fn quote_string(s: &str, quote: &str) -> String {
    let escaped = if quote == "'" {
        s.replace('\'', "''")
    } else {
        let mut out = String::with_capacity(s.len());
        for c in s.chars() {
            if c == '\\' || quote.contains(c) {
                out.push('\\');
            }
            out.push(c);
        }
        out
    };
    format!("{quote}{escaped}{quote}")
}

/// Looks up a rule and substitutes into it. When the namespace is empty,
/// `$namespace.` prefixes are dropped so the collection stands alone.
pub(crate) fn render(
    pack: &LanguagePack,
    section: &str,
    key: &str,
    b: &VarBindings,
) -> Result<String, RewriteError> {
    let t = pack.template(section, key)?;
    if b.get("namespace") == Some("") && t.uses("namespace") {
        substitute(&t.without_prefix_var("namespace", "."), b)
    } else {
        substitute(t, b)
    }
}

fn to_query(pack: &LanguagePack, text: String) -> Result<QueryText> {
    match pack.dialect {
        DialectKind::Text => Ok(QueryText::Text(text)),
        DialectKind::Pipeline => split_stages(&text)
            .map(QueryText::Stages)
            .map_err(FrameError::Stages),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::connector::DryRunConnector;
    use crate::packs::load_builtin;
    use crate::rewrite::normalize_whitespace;

    fn scan(pack: &str) -> Frame {
        let pack = Arc::new(load_builtin(pack).unwrap());
        Frame::scan("Test", "Users", pack, Arc::new(DryRunConnector::new())).unwrap()
    }

    fn norm(f: &Frame) -> String {
        normalize_whitespace(&f.query_text())
    }

    #[test]
    fn scans() {
        assert_eq!(norm(&scan("sqlpp")), "SELECT VALUE t FROM Test.Users t");
        assert_eq!(norm(&scan("cypher")), "MATCH(t: Users)");
        assert_eq!(
            scan("mongo").query(),
            &QueryText::Stages(vec![r#"{ "$match": {} }"#.into()])
        );
    }

    #[test]
    fn comparison_snippet_and_full_query() {
        let af = scan("sqlpp");
        let lang = af.col("lang").unwrap();
        let m = lang.eq("en").unwrap();
        let FrameKind::Expr(info) = m.kind() else {
            panic!()
        };
        assert_eq!(info.snippet, "lang = 'en'");
        assert!(norm(&m).starts_with("SELECT VALUE lang = 'en' FROM (SELECT lang"));
    }

    #[test]
    fn isna_in_sql() {
        let af = scan("sql");
        let m = af.col("tenPercent").unwrap().isna().unwrap();
        let FrameKind::Expr(info) = m.kind() else {
            panic!()
        };
        assert_eq!(info.snippet, r#""tenPercent" IS NULL"#);
    }

    #[test]
    fn nested_logic_and_parentheses() {
        let af = scan("sql");
        let a = af.col("a").unwrap().eq(1).unwrap();
        let b = af.col("b").unwrap().eq(2).unwrap();
        let c = af.col("c").unwrap().eq(3).unwrap();
        let FrameKind::Expr(i) = a.and(&b).unwrap().and(&c).unwrap().kind().clone() else {
            panic!()
        };
        assert_eq!(i.snippet, r#""a" = 1 AND "b" = 2 AND "c" = 3"#);
        let FrameKind::Expr(i) = a.and(&b.or(&c).unwrap()).unwrap().kind().clone() else {
            panic!()
        };
        assert_eq!(i.snippet, r#""a" = 1 AND ("b" = 2 OR "c" = 3)"#);
        let x = af.col("x").unwrap();
        let sum = x.arith(ArithOp::Add, 1).unwrap();
        let FrameKind::Expr(i) = sum.arith(ArithOp::Mul, 2).unwrap().kind().clone() else {
            panic!()
        };
        assert_eq!(i.snippet, r#"("x" + 1) * 2"#);
    }

    #[test]
    fn pipeline_operands() {
        let af = scan("mongo");
        let m = af
            .col("ten")
            .unwrap()
            .eq(3)
            .unwrap()
            .and(&af.col("two").unwrap().eq(1).unwrap())
            .unwrap();
        let f = af.filter(&m).unwrap();
        let stages = f.query().stages().unwrap();
        assert_eq!(stages.len(), 2);
        assert_eq!(
            normalize_whitespace(&stages[1]),
            r#"{ "$match": { "$expr": { "$and": [ { "$eq": ["$ten", 3] }, { "$eq": ["$two", 1] } ] } } }"#
        );
        let err = af
            .col("ten")
            .unwrap()
            .astype(Conversion::ToInt)
            .unwrap_err();
        assert!(matches!(err, FrameError::Unsupported(_)));
    }

    #[test]
    fn string_literals_escape() {
        assert_eq!(quote_string("it's", "'"), "'it''s'");
        assert_eq!(quote_string(r#"a"b\c"#, "\""), r#""a\"b\\c""#);
    }

    #[test]
    fn lineage_is_checked() {
        let a = scan("sql");
        let b = scan("sql");
        let mask = b.col("x").unwrap().eq(1).unwrap();
        assert!(matches!(a.filter(&mask), Err(FrameError::Lineage)));
        let other = b.col("y").unwrap();
        assert!(matches!(
            a.col("x").unwrap().eq(&other),
            Err(FrameError::Lineage)
        ));
    }

    #[test]
    fn mask_must_be_boolean() {
        let af = scan("sql");
        let n = af.col("x").unwrap().arith(ArithOp::Add, 1).unwrap();
        assert!(matches!(af.filter(&n), Err(FrameError::NotAMask)));
        assert!(matches!(
            af.filter(&af.col("x").unwrap()),
            Err(FrameError::NotAMask)
        ));
    }

    #[test]
    fn split_stages_rejects_garbage() {
        assert!(split_stages("{}, {}").is_ok());
        assert!(split_stages("").is_err());
        assert!(split_stages("{ ").is_err());
        assert!(split_stages("CREATE FUNCTION x() {}").is_err());
        assert_eq!(split_stages(r#"{"a":"}"}"#).unwrap(), vec![r#"{"a":"}"}"#]);
    }

    #[test]
    fn non_inner_join_rejected() {
        let af = scan("sql");
        assert!(matches!(
            af.merge(&af, "a", "a", "left"),
            Err(FrameError::Join(_))
        ));
    }

    #[test]
    fn cypher_join_needs_scan_on_the_right() {
        let af = scan("cypher");
        let right = af.sort("a", true).unwrap();
        assert!(matches!(
            af.join(&right, "a", "a"),
            Err(FrameError::Join(_))
        ));
        assert!(af.join(&scan("cypher"), "a", "a").is_ok());
    }
}
