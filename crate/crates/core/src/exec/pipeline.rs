//! An interpreter for aggregation pipelines.
//!
//! Requests have the form `ns.coll.aggregate([ stage, ... ])`. Supported
//! stages: `$match`, `$project`, `$group`, `$addFields`/`$set`, `$sort`,
//! `$limit`, `$skip`, `$count`, `$lookup`, `$unwind` and `$out`.
//! Nested documents are flattened to dotted column names on output.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::sync::Arc;

use serde_json::Value as Json;

use super::{arith, to_int, to_str, Accumulator, Arith, Catalog, ExecError};
use crate::value::{mongo_total_order, number_to_value, CompareOp, Record, Table, Value};

#[derive(Debug, Clone, PartialEq)]
pub enum Doc {
    Val(Value),
    Obj(Vec<(String, Doc)>),
    Arr(Vec<Doc>),
}

const MISSING: Doc = Doc::Val(Value::Missing);

impl Doc {
    fn get_path(&self, path: &[String]) -> &Doc {
        let mut cur = self;
        for p in path {
            match cur {
                Doc::Obj(fields) => match fields.iter().find(|(k, _)| k == p) {
                    Some((_, v)) => cur = v,
                    None => return &MISSING,
                },
                _ => return &MISSING,
            }
        }
        cur
    }

    fn value(&self) -> Result<&Value, String> {
        match self {
            Doc::Val(v) => Ok(v),
            Doc::Obj(_) => Err("expected a scalar, found an object".into()),
            Doc::Arr(_) => Err("expected a scalar, found an array".into()),
        }
    }

    fn truthy(&self) -> bool {
        match self {
            Doc::Val(v) => {
                !matches!(
                    v,
                    Value::Missing | Value::Null | Value::Bool(false) | Value::Int(0)
                ) && !matches!(v, Value::Float(f) if *f == 0.0)
            }
            _ => true,
        }
    }

    fn from_json(j: &Json) -> Doc {
        match j {
            Json::Null => Doc::Val(Value::Null),
            Json::Bool(b) => Doc::Val(Value::Bool(*b)),
            Json::Number(n) => Doc::Val(number_to_value(n)),
            Json::String(s) => Doc::Val(Value::Str(s.clone())),
            Json::Array(a) => Doc::Arr(a.iter().map(Doc::from_json).collect()),
            Json::Object(o) => Doc::Obj(
                o.iter()
                    .map(|(k, v)| (k.clone(), Doc::from_json(v)))
                    .collect(),
            ),
        }
    }
}

fn set_path(fields: &mut Vec<(String, Doc)>, path: &[String], v: Doc) {
    let (head, rest) = (&path[0], &path[1..]);
    let slot = match fields.iter().position(|(k, _)| k == head) {
        Some(i) => i,
        None => {
            fields.push((head.clone(), Doc::Obj(Vec::new())));
            fields.len() - 1
        }
    };
    if rest.is_empty() {
        fields[slot].1 = v;
        return;
    }
    if !matches!(fields[slot].1, Doc::Obj(_)) {
        fields[slot].1 = Doc::Obj(Vec::new());
    }
    if let Doc::Obj(inner) = &mut fields[slot].1 {
        set_path(inner, rest, v);
    }
}

fn bracket(d: &Doc) -> u8 {
    match d {
        Doc::Val(Value::Missing) => 0,
        Doc::Val(Value::Null) => 1,
        Doc::Val(Value::Int(_) | Value::Float(_)) => 2,
        Doc::Val(Value::Str(_)) => 3,
        Doc::Obj(_) => 4,
        Doc::Arr(_) => 5,
        Doc::Val(Value::Bool(_)) => 6,
    }
}

/// The total order over documents: scalars as in [`mongo_total_order`], with
/// objects and arrays placed between strings and booleans.
pub fn doc_order(a: &Doc, b: &Doc) -> Ordering {
    match (a, b) {
        (Doc::Val(x), Doc::Val(y)) => mongo_total_order(x, y),
        (Doc::Obj(x), Doc::Obj(y)) => {
            for ((ka, va), (kb, vb)) in x.iter().zip(y) {
                let o = ka.cmp(kb).then_with(|| doc_order(va, vb));
                if o.is_ne() {
                    return o;
                }
            }
            x.len().cmp(&y.len())
        }
        (Doc::Arr(x), Doc::Arr(y)) => {
            for (va, vb) in x.iter().zip(y) {
                let o = doc_order(va, vb);
                if o.is_ne() {
                    return o;
                }
            }
            x.len().cmp(&y.len())
        }
        _ => bracket(a).cmp(&bracket(b)),
    }
}

#[derive(Debug, Clone)]
struct DocKey(Doc);

impl PartialEq for DocKey {
    fn eq(&self, o: &Self) -> bool {
        doc_order(&self.0, &o.0).is_eq()
    }
}
impl Eq for DocKey {}
impl PartialOrd for DocKey {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for DocKey {
    fn cmp(&self, o: &Self) -> Ordering {
        doc_order(&self.0, &o.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Op {
    Cmp(CompareOp),
    And,
    Or,
    Not,
    Arith(Arith),
    ToUpper,
    ToLower,
    ToInt,
    ToString,
    Abs,
    IfNull,
}

impl Op {
    fn parse(name: &str) -> Option<Op> {
        Some(match name {
            "$eq" => Op::Cmp(CompareOp::Eq),
            "$ne" => Op::Cmp(CompareOp::Ne),
            "$gt" => Op::Cmp(CompareOp::Gt),
            "$lt" => Op::Cmp(CompareOp::Lt),
            "$gte" => Op::Cmp(CompareOp::Ge),
            "$lte" => Op::Cmp(CompareOp::Le),
            "$and" => Op::And,
            "$or" => Op::Or,
            "$not" => Op::Not,
            "$add" => Op::Arith(Arith::Add),
            "$subtract" => Op::Arith(Arith::Sub),
            "$multiply" => Op::Arith(Arith::Mul),
            "$divide" => Op::Arith(Arith::Div),
            "$mod" => Op::Arith(Arith::Mod),
            "$toUpper" => Op::ToUpper,
            "$toLower" => Op::ToLower,
            "$toInt" | "$toLong" => Op::ToInt,
            "$toString" => Op::ToString,
            "$abs" => Op::Abs,
            "$ifNull" => Op::IfNull,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Expr {
    Lit(Doc),
    Field(Vec<String>),
    Var(String, Vec<String>),
    Obj(Vec<(String, Expr)>),
    Arr(Vec<Expr>),
    /// The operator as written, for error messages, and its meaning.
    Op(String, Op, Vec<Expr>),
}

fn split_path(s: &str) -> Vec<String> {
    s.split('.').map(str::to_string).collect()
}

fn parse_expr(j: &Json) -> Result<Expr, String> {
    Ok(match j {
        Json::String(s) if s.starts_with("$$") => {
            let mut parts = split_path(&s[2..]);
            let name = parts.remove(0);
            Expr::Var(name, parts)
        }
        Json::String(s) if s.starts_with('$') && s.len() > 1 => Expr::Field(split_path(&s[1..])),
        Json::Array(a) => Expr::Arr(a.iter().map(parse_expr).collect::<Result<_, _>>()?),
        Json::Object(o) if o.len() == 1 && o.keys().next().is_some_and(|k| k.starts_with('$')) => {
            let (k, v) = o.iter().next().expect("one entry");
            if k == "$literal" {
                return Ok(Expr::Lit(Doc::from_json(v)));
            }
            let op = Op::parse(k).ok_or_else(|| format!("unknown operator {k}"))?;
            let args = match v {
                Json::Array(a) => a.iter().map(parse_expr).collect::<Result<_, _>>()?,
                other => vec![parse_expr(other)?],
            };
            let arity_ok = match op {
                Op::Cmp(_) | Op::Arith(Arith::Sub | Arith::Div | Arith::Mod) | Op::IfNull => {
                    args.len() == 2
                }
                Op::Not | Op::ToUpper | Op::ToLower | Op::ToInt | Op::ToString | Op::Abs => {
                    args.len() == 1
                }
                _ => true,
            };
            if !arity_ok {
                return Err(format!("{k} got {} arguments", args.len()));
            }
            Expr::Op(k.clone(), op, args)
        }
        Json::Object(o) => Expr::Obj(
            o.iter()
                .map(|(k, v)| Ok((k.clone(), parse_expr(v)?)))
                .collect::<Result<_, String>>()?,
        ),
        other => Expr::Lit(Doc::from_json(other)),
    })
}

struct Ctx<'a> {
    root: &'a Doc,
    vars: &'a [(String, Doc)],
}

fn eval(e: &Expr, cx: &Ctx) -> Result<Doc, String> {
    Ok(match e {
        Expr::Lit(d) => d.clone(),
        Expr::Field(p) => cx.root.get_path(p).clone(),
        Expr::Var(name, p) => {
            let base = if name == "ROOT" || name == "CURRENT" {
                cx.root
            } else {
                &cx.vars
                    .iter()
                    .rev()
                    .find(|(n, _)| n == name)
                    .ok_or_else(|| format!("undefined variable $${name}"))?
                    .1
            };
            base.get_path(p).clone()
        }
        Expr::Obj(fields) => {
            let mut out = Vec::with_capacity(fields.len());
            for (k, v) in fields {
                let d = eval(v, cx)?;
                if d != MISSING {
                    out.push((k.clone(), d));
                }
            }
            Doc::Obj(out)
        }
        Expr::Arr(items) => Doc::Arr(
            items
                .iter()
                .map(|i| eval(i, cx))
                .collect::<Result<_, _>>()?,
        ),
        Expr::Op(name, op, args) => {
            let arg = |i: usize| eval(&args[i], cx);
            let scalar = |i: usize| -> Result<Value, String> {
                let d = arg(i)?;
                d.value().cloned().map_err(|m| format!("{name}: {m}"))
            };
            Doc::Val(match op {
                Op::Cmp(c) => Value::Bool(c.holds(doc_order(&arg(0)?, &arg(1)?))),
                Op::And => {
                    let mut all = true;
                    for i in 0..args.len() {
                        if !arg(i)?.truthy() {
                            all = false;
                            break;
                        }
                    }
                    Value::Bool(all)
                }
                Op::Or => {
                    let mut any = false;
                    for i in 0..args.len() {
                        if arg(i)?.truthy() {
                            any = true;
                            break;
                        }
                    }
                    Value::Bool(any)
                }
                Op::Not => Value::Bool(!arg(0)?.truthy()),
                Op::Arith(a) => {
                    if args.is_empty() {
                        return Err(format!("{name} needs arguments"));
                    }
                    let mut acc = scalar(0)?;
                    for i in 1..args.len() {
                        acc = arith(*a, &acc, &scalar(i)?).map_err(|m| format!("{name}: {m}"))?;
                    }
                    if acc.is_missing() {
                        Value::Null
                    } else {
                        acc
                    }
                }
                Op::ToUpper | Op::ToLower => match scalar(0)? {
                    Value::Str(s) if *op == Op::ToUpper => Value::Str(s.to_uppercase()),
                    Value::Str(s) => Value::Str(s.to_lowercase()),
                    Value::Missing | Value::Null => Value::Str(String::new()),
                    Value::Int(i) => Value::Str(i.to_string()),
                    Value::Float(f) => Value::Str(f.to_string()),
                    Value::Bool(_) => return Err(format!("{name} cannot convert a bool")),
                },
                Op::ToInt => to_int(&scalar(0)?).map_err(|m| format!("{name}: {m}"))?,
                Op::ToString => to_str(&scalar(0)?),
                Op::Abs => match scalar(0)? {
                    Value::Int(i) => Value::Int(i.checked_abs().ok_or("integer overflow")?),
                    Value::Float(f) => Value::Float(f.abs()),
                    v if v.is_unknown() => Value::Null,
                    v => return Err(format!("{name} expects a number, got {}", v.type_name())),
                },
                Op::IfNull => {
                    let first = arg(0)?;
                    return Ok(match first {
                        Doc::Val(Value::Missing | Value::Null) => arg(1)?,
                        other => other,
                    });
                }
            })
        }
    })
}

/// Field-level query used by plain `$match` documents.
#[derive(Debug, Clone, PartialEq)]
enum Query {
    All(Vec<Query>),
    Any(Vec<Query>),
    Nor(Vec<Query>),
    Field(Vec<String>, CompareOp, Doc),
    Expr(Expr),
}

fn parse_query(j: &Json) -> Result<Query, String> {
    let Json::Object(o) = j else {
        return Err("$match expects an object".into());
    };
    let mut parts = Vec::new();
    for (k, v) in o {
        match k.as_str() {
            "$expr" => parts.push(Query::Expr(parse_expr(v)?)),
            "$and" | "$or" | "$nor" => {
                let Json::Array(items) = v else {
                    return Err(format!("{k} expects an array"));
                };
                let qs = items
                    .iter()
                    .map(parse_query)
                    .collect::<Result<Vec<_>, _>>()?;
                parts.push(match k.as_str() {
                    "$and" => Query::All(qs),
                    "$or" => Query::Any(qs),
                    _ => Query::Nor(qs),
                });
            }
            other if other.starts_with('$') => {
                return Err(format!("unsupported query operator {other}"))
            }
            field => {
                let path = split_path(field);
                match v {
                    Json::Object(ops) if ops.keys().next().is_some_and(|k| k.starts_with('$')) => {
                        for (op, arg) in ops {
                            let c = match Op::parse(op) {
                                Some(Op::Cmp(c)) => c,
                                _ => return Err(format!("unsupported query operator {op}")),
                            };
                            parts.push(Query::Field(path.clone(), c, Doc::from_json(arg)));
                        }
                    }
                    other => parts.push(Query::Field(path, CompareOp::Eq, Doc::from_json(other))),
                }
            }
        }
    }
    Ok(if parts.len() == 1 {
        parts.pop().expect("one part")
    } else {
        Query::All(parts)
    })
}

fn query_matches(q: &Query, cx: &Ctx) -> Result<bool, String> {
    Ok(match q {
        Query::All(qs) => {
            for q in qs {
                if !query_matches(q, cx)? {
                    return Ok(false);
                }
            }
            true
        }
        Query::Any(qs) => {
            for q in qs {
                if query_matches(q, cx)? {
                    return Ok(true);
                }
            }
            false
        }
        Query::Nor(qs) => !query_matches(&Query::Any(qs.clone()), cx)?,
        Query::Expr(e) => eval(e, cx)?.truthy(),
        Query::Field(path, op, target) => {
            let v = cx.root.get_path(path);
            // Query equality with null also matches an absent field, and
            // range operators only compare values of the same type.
            let null_target = matches!(target, Doc::Val(Value::Null));
            let eq = if null_target {
                matches!(v, Doc::Val(Value::Null | Value::Missing))
            } else {
                doc_order(v, target).is_eq()
            };
            match op {
                CompareOp::Eq => eq,
                CompareOp::Ne => !eq,
                _ if null_target => matches!(op, CompareOp::Ge | CompareOp::Le) && eq,
                _ => bracket(v) == bracket(target) && op.holds(doc_order(v, target)),
            }
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
enum Projection {
    Include,
    Exclude,
    Computed(Expr),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum AccKind {
    Sum,
    Min,
    Max,
    Avg,
    StdDevPop,
    Count,
    First,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    kind: StageKind,
}

#[derive(Debug, Clone, PartialEq)]
enum StageKind {
    Match(Query),
    Project(Vec<(String, Projection)>),
    Group {
        id: Expr,
        accs: Vec<(String, AccKind, Expr)>,
    },
    AddFields(Vec<(Vec<String>, Expr)>),
    Sort(Vec<(Vec<String>, bool)>),
    Limit(usize),
    Skip(usize),
    Count(String),
    Lookup {
        from: String,
        as_field: Vec<String>,
        lets: Vec<(String, Expr)>,
        pipeline: Vec<Stage>,
    },
    Unwind {
        path: Vec<String>,
        preserve: bool,
    },
    Out(String),
}

fn as_usize(j: &Json, what: &str) -> Result<usize, String> {
    j.as_u64()
        .map(|n| n as usize)
        .ok_or_else(|| format!("{what} expects a non-negative integer"))
}

fn parse_stage(j: &Json) -> Result<Stage, String> {
    let Json::Object(o) = j else {
        return Err("a stage must be an object".into());
    };
    if o.len() != 1 {
        return Err(format!(
            "a stage must have exactly one key, found {}",
            o.len()
        ));
    }
    let (name, arg) = o.iter().next().expect("one key");
    let obj = || {
        arg.as_object()
            .ok_or_else(|| format!("{name} expects an object"))
    };
    let kind = match name.as_str() {
        "$match" => StageKind::Match(parse_query(arg)?),
        "$project" => {
            let mut specs = Vec::new();
            for (k, v) in obj()? {
                let p = match v {
                    Json::Bool(false) => Projection::Exclude,
                    Json::Number(n) if n.as_f64() == Some(0.0) => Projection::Exclude,
                    Json::Bool(true) | Json::Number(_) => Projection::Include,
                    other => Projection::Computed(parse_expr(other)?),
                };
                specs.push((k.clone(), p));
            }
            let excl = specs
                .iter()
                .filter(|(_, p)| *p == Projection::Exclude)
                .count();
            let excluded_non_id = specs
                .iter()
                .any(|(k, p)| *p == Projection::Exclude && k != "_id");
            if excluded_non_id && excl != specs.len() {
                return Err("$project cannot mix inclusion and exclusion".into());
            }
            StageKind::Project(specs)
        }
        "$group" => {
            let o = obj()?;
            let id = parse_expr(o.get("_id").ok_or("$group needs an _id")?)?;
            let mut accs = Vec::new();
            for (k, v) in o.iter().filter(|(k, _)| *k != "_id") {
                let Some((op, e)) = v
                    .as_object()
                    .filter(|m| m.len() == 1)
                    .and_then(|m| m.iter().next())
                else {
                    return Err(format!("accumulator for `{k}` must be a single-key object"));
                };
                let kind = match op.as_str() {
                    "$sum" => AccKind::Sum,
                    "$min" => AccKind::Min,
                    "$max" => AccKind::Max,
                    "$avg" => AccKind::Avg,
                    "$stdDevPop" => AccKind::StdDevPop,
                    "$count" => AccKind::Count,
                    "$first" => AccKind::First,
                    other => return Err(format!("unknown accumulator {other}")),
                };
                accs.push((k.clone(), kind, parse_expr(e)?));
            }
            StageKind::Group { id, accs }
        }
        "$addFields" | "$set" => StageKind::AddFields(
            obj()?
                .iter()
                .map(|(k, v)| Ok((split_path(k), parse_expr(v)?)))
                .collect::<Result<_, String>>()?,
        ),
        "$sort" => {
            let mut keys = Vec::new();
            for (k, v) in obj()? {
                let desc = match v.as_i64() {
                    Some(1) => false,
                    Some(-1) => true,
                    _ => return Err(format!("sort direction for `{k}` must be 1 or -1")),
                };
                keys.push((split_path(k), desc));
            }
            StageKind::Sort(keys)
        }
        "$limit" => StageKind::Limit(as_usize(arg, "$limit")?),
        "$skip" => StageKind::Skip(as_usize(arg, "$skip")?),
        "$count" => StageKind::Count(
            arg.as_str()
                .ok_or("$count expects a field name")?
                .to_string(),
        ),
        "$lookup" => {
            let o = obj()?;
            let text = |k: &str| -> Result<String, String> {
                o.get(k)
                    .and_then(Json::as_str)
                    .map(str::to_string)
                    .ok_or_else(|| format!("$lookup needs `{k}`"))
            };
            let from = text("from")?;
            let as_field = split_path(&text("as")?);
            let (lets, pipeline) = if let Some(p) = o.get("pipeline") {
                let lets = match o.get("let") {
                    Some(Json::Object(l)) => l
                        .iter()
                        .map(|(k, v)| Ok((k.clone(), parse_expr(v)?)))
                        .collect::<Result<_, String>>()?,
                    Some(_) => return Err("$lookup `let` must be an object".into()),
                    None => Vec::new(),
                };
                (
                    lets,
                    parse_stage_list(p)
                        .map_err(|(i, m)| format!("$lookup pipeline stage {i}: {m}"))?,
                )
            } else {
                let local = text("localField")?;
                let foreign = text("foreignField")?;
                let stage = serde_json::json!({"$match": {"$expr": {"$eq": [format!("${foreign}"), "$$__local"]}}});
                (
                    vec![("__local".to_string(), Expr::Field(split_path(&local)))],
                    vec![parse_stage(&stage)?],
                )
            };
            StageKind::Lookup {
                from,
                as_field,
                lets,
                pipeline,
            }
        }
        "$unwind" => {
            let (path, preserve) = match arg {
                Json::String(s) => (s.clone(), false),
                Json::Object(o) => (
                    o.get("path")
                        .and_then(Json::as_str)
                        .ok_or("$unwind needs a path")?
                        .to_string(),
                    o.get("preserveNullAndEmptyArrays")
                        .and_then(Json::as_bool)
                        .unwrap_or(false),
                ),
                _ => return Err("$unwind expects a path".into()),
            };
            let path = path
                .strip_prefix('$')
                .ok_or("$unwind path must start with `$`")?;
            StageKind::Unwind {
                path: split_path(path),
                preserve,
            }
        }
        "$out" => StageKind::Out(
            arg.as_str()
                .ok_or("$out expects a collection name")?
                .to_string(),
        ),
        other => return Err(format!("unsupported stage {other}")),
    };
    Ok(Stage { kind })
}

fn parse_stage_list(j: &Json) -> Result<Vec<Stage>, (usize, String)> {
    let Json::Array(items) = j else {
        return Err((0, "a pipeline must be an array".into()));
    };
    items
        .iter()
        .enumerate()
        .map(|(i, s)| parse_stage(s).map_err(|m| (i, m)))
        .collect()
}

/// Parses a JSON array of stages.
pub fn parse_pipeline(text: &str) -> Result<Vec<Stage>, ExecError> {
    let j: Json = serde_json::from_str(text).map_err(|e| ExecError::Syntax {
        pos: 0,
        message: e.to_string(),
    })?;
    parse_stage_list(&j).map_err(|(index, message)| ExecError::Stage { index, message })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineRequest {
    pub namespace: String,
    pub collection: String,
    pub pipeline: Vec<Stage>,
}

/// Parses `ns.coll.aggregate([...])`, or `coll.aggregate([...])` for the
/// empty namespace.
pub fn parse_request(text: &str) -> Result<PipelineRequest, ExecError> {
    let syntax = |pos: usize, m: &str| ExecError::Syntax {
        pos,
        message: m.to_string(),
    };
    let at = text
        .find(".aggregate(")
        .ok_or_else(|| syntax(0, "expected `<collection>.aggregate([...])`"))?;
    let target = text[..at].trim();
    let (namespace, collection) = match target.rsplit_once('.') {
        Some((n, c)) => (n.to_string(), c.to_string()),
        None => (String::new(), target.to_string()),
    };
    if collection.is_empty() {
        return Err(syntax(0, "missing collection name"));
    }
    let body_start = at + ".aggregate(".len();
    let body = text[body_start..].trim_end();
    let body = body.strip_suffix(';').unwrap_or(body).trim_end();
    let body = body
        .strip_suffix(')')
        .ok_or_else(|| syntax(text.len(), "missing closing `)`"))?;
    let pipeline = parse_pipeline(body)?;
    Ok(PipelineRequest {
        namespace,
        collection,
        pipeline,
    })
}

fn record_to_doc(r: &Record) -> Doc {
    Doc::Obj(
        r.iter()
            .map(|(k, v)| (k.to_string(), Doc::Val(v.clone())))
            .collect(),
    )
}

fn flatten_into(prefix: &str, d: &Doc, out: &mut Record) {
    match d {
        Doc::Val(Value::Missing) => {}
        Doc::Val(v) => out.set(prefix, v.clone()),
        Doc::Obj(fields) => {
            for (k, v) in fields {
                let name = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten_into(&name, v, out);
            }
        }
        Doc::Arr(items) => {
            for (i, v) in items.iter().enumerate() {
                flatten_into(&format!("{prefix}.{i}"), v, out);
            }
        }
    }
}

fn doc_to_record(d: &Doc) -> Record {
    let mut r = Record::new();
    flatten_into("", d, &mut r);
    r
}

fn fields_of(d: Doc) -> Vec<(String, Doc)> {
    match d {
        Doc::Obj(f) => f,
        _ => Vec::new(),
    }
}

struct Runner<'a> {
    catalog: &'a mut Catalog,
    namespace: &'a str,
    allow_overwrite: bool,
}

impl Runner<'_> {
    fn run(
        &mut self,
        stages: &[Stage],
        mut docs: Vec<Doc>,
        vars: &[(String, Doc)],
    ) -> Result<Vec<Doc>, ExecError> {
        for (index, stage) in stages.iter().enumerate() {
            docs = self
                .stage(stage, docs, vars)
                .map_err(|message| ExecError::Stage { index, message })?;
        }
        Ok(docs)
    }

    fn stage(
        &mut self,
        stage: &Stage,
        docs: Vec<Doc>,
        vars: &[(String, Doc)],
    ) -> Result<Vec<Doc>, String> {
        Ok(match &stage.kind {
            StageKind::Match(q) => {
                let mut out = Vec::with_capacity(docs.len());
                for d in docs {
                    if query_matches(q, &Ctx { root: &d, vars })? {
                        out.push(d);
                    }
                }
                out
            }
            StageKind::Project(specs) => {
                let exclusion = specs.iter().all(|(_, p)| *p == Projection::Exclude);
                docs.into_iter()
                    .map(|d| project(&d, specs, exclusion, vars))
                    .collect::<Result<_, _>>()?
            }
            StageKind::Group { id, accs } => group(docs, id, accs, vars)?,
            StageKind::AddFields(fields) => {
                let mut out = Vec::with_capacity(docs.len());
                for d in docs {
                    let mut values = Vec::with_capacity(fields.len());
                    for (_, e) in fields {
                        values.push(eval(e, &Ctx { root: &d, vars })?);
                    }
                    let mut f = fields_of(d);
                    for ((path, _), v) in fields.iter().zip(values) {
                        set_path(&mut f, path, v);
                    }
                    out.push(Doc::Obj(f));
                }
                out
            }
            StageKind::Sort(keys) => {
                let mut docs = docs;
                docs.sort_by(|a, b| {
                    for (path, desc) in keys {
                        let o = doc_order(a.get_path(path), b.get_path(path));
                        let o = if *desc { o.reverse() } else { o };
                        if o.is_ne() {
                            return o;
                        }
                    }
                    Ordering::Equal
                });
                docs
            }
            StageKind::Limit(n) => docs.into_iter().take(*n).collect(),
            StageKind::Skip(n) => docs.into_iter().skip(*n).collect(),
            StageKind::Count(name) => {
                if docs.is_empty() {
                    Vec::new()
                } else {
                    vec![Doc::Obj(vec![(
                        name.clone(),
                        Doc::Val(Value::Int(docs.len() as i64)),
                    )])]
                }
            }
            StageKind::Lookup {
                from,
                as_field,
                lets,
                pipeline,
            } => self.lookup(docs, from, as_field, lets, pipeline, vars)?,
            StageKind::Unwind { path, preserve } => {
                let mut out = Vec::with_capacity(docs.len());
                for d in docs {
                    match d.get_path(path).clone() {
                        Doc::Arr(items) if !items.is_empty() => {
                            for item in items {
                                let mut f = fields_of(d.clone());
                                set_path(&mut f, path, item);
                                out.push(Doc::Obj(f));
                            }
                        }
                        Doc::Arr(_) | Doc::Val(Value::Null | Value::Missing) => {
                            if *preserve {
                                out.push(d);
                            }
                        }
                        _ => out.push(d),
                    }
                }
                out
            }
            StageKind::Out(name) => {
                let rows = docs.iter().map(|d| Arc::new(doc_to_record(d))).collect();
                self.catalog
                    .store(self.namespace, name, rows, self.allow_overwrite)
                    .map_err(|e| e.to_string())?;
                Vec::new()
            }
        })
    }

    fn lookup(
        &mut self,
        docs: Vec<Doc>,
        from: &str,
        as_field: &[String],
        lets: &[(String, Expr)],
        pipeline: &[Stage],
        outer_vars: &[(String, Doc)],
    ) -> Result<Vec<Doc>, String> {
        let source: Vec<Doc> = self
            .catalog
            .rows(self.namespace, from)
            .map_err(|e| e.to_string())?
            .iter()
            .map(|r| record_to_doc(r))
            .collect();
        let names: Vec<&str> = lets.iter().map(|(n, _)| n.as_str()).collect();
        // Stages before the first reference to a `let` variable do not
        // depend on the outer document, so they run once.
        let split = pipeline
            .iter()
            .position(|s| stage_uses_vars(s, &names))
            .unwrap_or(pipeline.len());
        let shared = self
            .run(&pipeline[..split], source, outer_vars)
            .map_err(|e| e.to_string())?;
        let rest = &pipeline[split..];
        // An equality between a field and a variable can use an index.
        let index = rest
            .first()
            .and_then(|s| equality_probe(s, &names))
            .map(|(path, var)| {
                let mut map: BTreeMap<DocKey, Vec<usize>> = BTreeMap::new();
                for (i, d) in shared.iter().enumerate() {
                    map.entry(DocKey(d.get_path(&path).clone()))
                        .or_default()
                        .push(i);
                }
                (map, var)
            });
        let mut out = Vec::with_capacity(docs.len());
        for d in docs {
            let mut vars = outer_vars.to_vec();
            for (n, e) in lets {
                let v = eval(
                    e,
                    &Ctx {
                        root: &d,
                        vars: outer_vars,
                    },
                )?;
                vars.push((n.clone(), v));
            }
            let matched = match &index {
                Some((map, var)) => {
                    let key = &vars
                        .iter()
                        .rev()
                        .find(|(n, _)| n == var)
                        .expect("bound above")
                        .1;
                    let hits: Vec<Doc> = map
                        .get(&DocKey(key.clone()))
                        .map(|ix| ix.iter().map(|&i| shared[i].clone()).collect())
                        .unwrap_or_default();
                    self.run(&rest[1..], hits, &vars)
                        .map_err(|e| e.to_string())?
                }
                None => self
                    .run(rest, shared.clone(), &vars)
                    .map_err(|e| e.to_string())?,
            };
            let mut f = fields_of(d);
            set_path(&mut f, as_field, Doc::Arr(matched));
            out.push(Doc::Obj(f));
        }
        Ok(out)
    }
}

fn expr_uses_vars(e: &Expr, names: &[&str]) -> bool {
    match e {
        Expr::Var(n, _) => names.contains(&n.as_str()),
        Expr::Obj(f) => f.iter().any(|(_, e)| expr_uses_vars(e, names)),
        Expr::Arr(items) | Expr::Op(_, _, items) => items.iter().any(|e| expr_uses_vars(e, names)),
        Expr::Lit(_) | Expr::Field(_) => false,
    }
}

fn query_uses_vars(q: &Query, names: &[&str]) -> bool {
    match q {
        Query::All(qs) | Query::Any(qs) | Query::Nor(qs) => {
            qs.iter().any(|q| query_uses_vars(q, names))
        }
        Query::Field(..) => false,
        Query::Expr(e) => expr_uses_vars(e, names),
    }
}

fn stage_uses_vars(s: &Stage, names: &[&str]) -> bool {
    match &s.kind {
        StageKind::Match(q) => query_uses_vars(q, names),
        StageKind::Project(specs) => specs
            .iter()
            .any(|(_, p)| matches!(p, Projection::Computed(e) if expr_uses_vars(e, names))),
        StageKind::Group { id, accs } => {
            expr_uses_vars(id, names) || accs.iter().any(|(_, _, e)| expr_uses_vars(e, names))
        }
        StageKind::AddFields(f) => f.iter().any(|(_, e)| expr_uses_vars(e, names)),
        StageKind::Lookup { lets, pipeline, .. } => {
            lets.iter().any(|(_, e)| expr_uses_vars(e, names))
                || pipeline.iter().any(|s| stage_uses_vars(s, names))
        }
        _ => false,
    }
}

/// `{"$match": {"$expr": {"$eq": ["$field", "$$var"]}}}` in either order.
fn equality_probe(s: &Stage, names: &[&str]) -> Option<(Vec<String>, String)> {
    let StageKind::Match(Query::Expr(Expr::Op(_, Op::Cmp(CompareOp::Eq), args))) = &s.kind else {
        return None;
    };
    match (&args[0], &args[1]) {
        (Expr::Field(p), Expr::Var(v, vp)) | (Expr::Var(v, vp), Expr::Field(p))
            if vp.is_empty() && names.contains(&v.as_str()) =>
        {
            Some((p.clone(), v.clone()))
        }
        _ => None,
    }
}

fn project(
    d: &Doc,
    specs: &[(String, Projection)],
    exclusion: bool,
    vars: &[(String, Doc)],
) -> Result<Doc, String> {
    let Doc::Obj(fields) = d else {
        return Err("cannot project a non-document".into());
    };
    if exclusion {
        let kept = fields
            .iter()
            .filter(|(k, _)| !specs.iter().any(|(s, _)| s == k))
            .cloned()
            .collect();
        return Ok(Doc::Obj(kept));
    }
    let mut out = Vec::new();
    let id_excluded = specs
        .iter()
        .any(|(k, p)| k == "_id" && *p == Projection::Exclude);
    let id_listed = specs.iter().any(|(k, _)| k == "_id");
    if !id_excluded && !id_listed {
        if let Some(id) = fields.iter().find(|(k, _)| k == "_id") {
            out.push(id.clone());
        }
    }
    for (k, v) in fields {
        if specs
            .iter()
            .any(|(s, p)| s == k && *p == Projection::Include)
        {
            out.push((k.clone(), v.clone()));
        }
    }
    for (k, p) in specs {
        if let Projection::Computed(e) = p {
            let v = eval(e, &Ctx { root: d, vars })?;
            if v != MISSING {
                set_path(&mut out, &split_path(k), v);
            }
        }
    }
    Ok(Doc::Obj(out))
}

fn group(
    docs: Vec<Doc>,
    id: &Expr,
    accs: &[(String, AccKind, Expr)],
    vars: &[(String, Doc)],
) -> Result<Vec<Doc>, String> {
    let mut slots: BTreeMap<DocKey, usize> = BTreeMap::new();
    let mut groups: Vec<(Doc, Vec<Accumulator>, Vec<Option<Doc>>)> = Vec::new();
    for d in &docs {
        let cx = Ctx { root: d, vars };
        let mut key = eval(id, &cx)?;
        if key == MISSING {
            key = Doc::Val(Value::Null);
        }
        let i = *slots.entry(DocKey(key.clone())).or_insert_with(|| {
            groups.push((
                key,
                vec![Accumulator::new(); accs.len()],
                vec![None; accs.len()],
            ));
            groups.len() - 1
        });
        let (_, state, firsts) = &mut groups[i];
        for (j, (name, kind, e)) in accs.iter().enumerate() {
            let v = eval(e, &cx)?;
            match kind {
                AccKind::Count => state[j].push(&Value::Int(1)),
                AccKind::First => {
                    if firsts[j].is_none() {
                        firsts[j] = Some(v);
                    }
                }
                _ => match v {
                    Doc::Val(v) => state[j].push(&v),
                    _ if matches!(kind, AccKind::Sum | AccKind::Avg | AccKind::StdDevPop) => {}
                    _ => return Err(format!("accumulator `{name}` cannot order documents")),
                },
            }
        }
    }
    Ok(groups
        .into_iter()
        .map(|(key, state, firsts)| {
            let mut f = vec![("_id".to_string(), key)];
            for (j, (name, kind, _)) in accs.iter().enumerate() {
                let v = match kind {
                    AccKind::Sum => Doc::Val(state[j].sum()),
                    AccKind::Count => Doc::Val(state[j].count()),
                    AccKind::Min => Doc::Val(state[j].min()),
                    AccKind::Max => Doc::Val(state[j].max()),
                    AccKind::Avg => Doc::Val(state[j].avg()),
                    AccKind::StdDevPop => Doc::Val(state[j].std_pop()),
                    AccKind::First => firsts[j].clone().unwrap_or(Doc::Val(Value::Null)),
                };
                f.push((name.clone(), v));
            }
            Doc::Obj(f)
        })
        .collect())
}

/// Runs a pipeline over `namespace.collection`.
pub fn run_pipeline(
    stages: &[Stage],
    catalog: &mut Catalog,
    namespace: &str,
    collection: &str,
    allow_overwrite: bool,
) -> Result<Table, ExecError> {
    let docs: Vec<Doc> = catalog
        .rows(namespace, collection)?
        .iter()
        .map(|r| record_to_doc(r))
        .collect();
    let mut runner = Runner {
        catalog,
        namespace,
        allow_overwrite,
    };
    let out = runner.run(stages, docs, &[])?;
    Ok(Table::new(out.iter().map(doc_to_record).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::{run_text, ExecDialect};

    fn catalog() -> Catalog {
        let mut c = Catalog::new();
        let rows = (0..6)
            .map(|i| {
                let mut r = Record::from_pairs([
                    ("k", Value::Int(i)),
                    ("g", Value::Int(i % 2)),
                    ("s", Value::Str(format!("s{i}"))),
                ]);
                if i != 3 {
                    r.set("m", Value::Int(i * 10));
                }
                r
            })
            .collect();
        c.insert("ns", "c", Table::new(rows));
        c
    }

    fn run(q: &str) -> Table {
        let mut c = catalog();
        run_text(ExecDialect::Mongo, q, &mut c, false).unwrap_or_else(|e| panic!("{q}: {e}"))
    }

    #[test]
    fn request_parsing() {
        let r = parse_request("a.b.c.aggregate([{\"$limit\": 1}])").unwrap();
        assert_eq!((r.namespace.as_str(), r.collection.as_str()), ("a.b", "c"));
        let r = parse_request("c.aggregate([\n])").unwrap();
        assert_eq!(r.namespace, "");
        assert!(parse_request("c.find({})").is_err());
        assert!(matches!(
            parse_request("c.aggregate([{\"$bogus\": 1}])"),
            Err(ExecError::Stage { index: 0, .. })
        ));
    }

    #[test]
    fn match_expr_and_plain() {
        let t = run(
            r#"ns.c.aggregate([{"$match":{}}, {"$match":{"$expr":{"$and":[{"$gte":["$k",2]},{"$lte":["$k",4]}]}}}])"#,
        );
        assert_eq!(t.len(), 3);
        let t = run(r#"ns.c.aggregate([{"$match":{"m":null}}])"#);
        assert_eq!(t.column("k"), vec![Value::Int(3)]);
        let t = run(r#"ns.c.aggregate([{"$match":{"$expr":{"$lte":["$m",null]}}}])"#);
        assert_eq!(t.column("k"), vec![Value::Int(3)]);
        let t = run(r#"ns.c.aggregate([{"$match":{"m":{"$gt":20}}}])"#);
        assert_eq!(t.len(), 2);
    }

    #[test]
    fn group_and_project() {
        let t = run(
            r#"ns.c.aggregate([{"$group":{"_id":{"g":"$g"},"mx":{"$max":"$k"},"n":{"$sum":1}}},{"$addFields":{"g":"$_id.g"}},{"$project":{"_id":0}},{"$sort":{"g":1}}])"#,
        );
        assert_eq!(t.column("g"), vec![Value::Int(0), Value::Int(1)]);
        assert_eq!(t.column("mx"), vec![Value::Int(4), Value::Int(5)]);
        assert_eq!(t.column("n"), vec![Value::Int(3), Value::Int(3)]);
        assert!(!t.rows[0].contains("_id"));
        let t = run(
            r#"ns.c.aggregate([{"$group":{"_id":{},"v":{"$min":"$m"}}},{"$project":{"_id":0}}])"#,
        );
        assert_eq!(t.column("v"), vec![Value::Int(0)]);
    }

    #[test]
    fn count_sort_limit() {
        let t = run(r#"ns.c.aggregate([{"$sort":{"k":-1}},{"$limit":2},{"$project":{"k":1}}])"#);
        assert_eq!(t.column("k"), vec![Value::Int(5), Value::Int(4)]);
        let t = run(r#"ns.c.aggregate([{"$count":"n"}])"#);
        assert_eq!(t.column("n"), vec![Value::Int(6)]);
        let t = run(r#"ns.c.aggregate([{"$match":{"k":99}},{"$count":"n"}])"#);
        assert!(t.is_empty());
    }

    #[test]
    fn lookup_unwind_uses_the_index_and_agrees_with_the_scan() {
        let indexed = run(
            r#"ns.c.aggregate([{"$lookup":{"from":"c","let":{"v":"$g"},"pipeline":[{"$match":{}},{"$match":{"$expr":{"$eq":["$g","$$v"]}}}],"as":"o"}},{"$unwind":{"path":"$o"}}])"#,
        );
        let scanned = run(
            r#"ns.c.aggregate([{"$lookup":{"from":"c","let":{"v":"$g"},"pipeline":[{"$match":{"$expr":{"$and":[{"$eq":["$g","$$v"]}]}}}],"as":"o"}},{"$unwind":"$o"}])"#,
        );
        assert_eq!(indexed.len(), 18);
        assert_eq!(indexed, scanned);
        assert!(indexed.rows[0].contains("o.k"));
    }

    #[test]
    fn expressions() {
        let t = run(
            r#"ns.c.aggregate([{"$project":{"u":{"$toUpper":"$s"},"d":{"$divide":["$k",2]},"i":{"$toInt":{"$eq":["$k",1]}}}},{"$limit":2}])"#,
        );
        assert_eq!(
            t.column("u"),
            vec![Value::Str("S0".into()), Value::Str("S1".into())]
        );
        assert_eq!(t.column("d"), vec![Value::Float(0.0), Value::Float(0.5)]);
        assert_eq!(t.column("i"), vec![Value::Int(0), Value::Int(1)]);
        let mut c = catalog();
        let err = run_text(
            ExecDialect::Mongo,
            r#"ns.c.aggregate([{"$limit":1},{"$project":{"x":{"$add":["$s",1]}}}])"#,
            &mut c,
            false,
        );
        assert!(matches!(err, Err(ExecError::Stage { index: 1, .. })));
    }

    #[test]
    fn out_stage_stores() {
        let mut c = catalog();
        run_text(
            ExecDialect::Mongo,
            r#"ns.c.aggregate([{"$match":{"g":1}},{"$out":"odd"}])"#,
            &mut c,
            false,
        )
        .unwrap();
        assert_eq!(c.table("ns", "odd").unwrap().len(), 3);
        let again = run_text(
            ExecDialect::Mongo,
            r#"ns.c.aggregate([{"$out":"odd"}])"#,
            &mut c,
            false,
        );
        assert!(again.is_err());
    }
}
