//! The thirteen dataframe benchmark expressions.
//!
//! Each expression is built through the frame API and split into the two
//! timed phases: building the frame (creation) and running its action
//! (expression). Results can be checked against [`oracle_eval`], a direct
//! evaluation over the in-memory table.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::connector::{
    Connector, DryRunConnector, HttpConnector, HttpEndpointConfig, LocalConnector, Request,
};
use crate::datagen::{self, GeneratorSpec};
use crate::exec::Catalog;
use crate::frame::{AggFunc, Frame, FrameError, Operand};
use crate::packs::{self, PackError};
use crate::rewrite::{normalize_query, LanguagePack};
use crate::value::{mongo_total_order, read_jsonl, Record, Table, Value};

pub const EXPRESSION_IDS: std::ops::RangeInclusive<u8> = 1..=13;

pub const EXPRESSION_NAMES: [&str; 13] = [
    "Total Count",
    "Project",
    "Filter & Count",
    "Group By",
    "Map Function",
    "Max",
    "Min",
    "Group By & Max",
    "Sort",
    "Selection",
    "Range Selection",
    "Join",
    "Count Missing Value",
];

/// Values substituted for `x`, `y` and `z`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ExprVars {
    pub x: i64,
    pub y: i64,
    pub z: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Vars {
    /// Render `x`, `y` and `z` as bare names, as in printed query listings.
    Symbolic,
    Values(ExprVars),
}

impl Vars {
    fn operand(&self, name: &str) -> Operand {
        match self {
            Vars::Symbolic => Operand::symbol(name),
            Vars::Values(v) => Operand::from(match name {
                "x" => v.x,
                "y" => v.y,
                _ => v.z,
            }),
        }
    }
}

/// Draws `x`, `y` and `z` within the ranges of the attributes the expression
/// compares: `ten`, `twentyPercent` and `two` for 3, `ten` for 10 and an
/// ordered pair of `onePercent` values for 11.
pub fn draw_vars(expr: u8, seed: u64) -> ExprVars {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (u64::from(expr) << 56));
    match expr {
        3 => ExprVars {
            x: rng.random_range(0..=9),
            y: rng.random_range(0..=4),
            z: rng.random_range(0..=1),
        },
        10 => ExprVars {
            x: rng.random_range(0..=9),
            y: 0,
            z: 0,
        },
        11 => {
            let a = rng.random_range(0..=99);
            let b = rng.random_range(0..=99);
            ExprVars {
                x: a.min(b),
                y: a.max(b),
                z: 0,
            }
        }
        _ => ExprVars { x: 0, y: 0, z: 0 },
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Count,
    Head(usize),
    Collect,
    AggValue(AggFunc, String),
}

/// A built expression: the frame plus the action that runs it.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub frame: Frame,
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Count(i64),
    Scalar(Value),
    Rows(Table),
}

impl Prepared {
    pub fn request(&self) -> Result<Request, FrameError> {
        match &self.action {
            Action::Count => self.frame.count_request(),
            Action::Head(n) => self.frame.head_request(*n),
            Action::Collect => self.frame.collect_request(),
            Action::AggValue(f, c) => self.frame.agg_value_request(*f, c),
        }
    }

    /// The text the connector would execute.
    pub fn query_text(&self) -> Result<String, FrameError> {
        let req = self.request()?;
        Ok(self.frame.connector().pre_process(&req).render())
    }

    pub fn run(&self) -> Result<Outcome, FrameError> {
        Ok(match &self.action {
            Action::Count => Outcome::Count(self.frame.count()?),
            Action::Head(n) => Outcome::Rows(self.frame.head(*n)?),
            Action::Collect => Outcome::Rows(self.frame.collect()?),
            Action::AggValue(f, c) => Outcome::Scalar(self.frame.agg_value(*f, c)?),
        })
    }
}

/// Builds expression `id` over `df`; expression 12 joins `df` with `df2`.
pub fn build_expression(
    id: u8,
    df: &Frame,
    df2: &Frame,
    vars: &Vars,
) -> Result<Prepared, FrameError> {
    let v = |n: &str| vars.operand(n);
    let (frame, action) = match id {
        1 => (df.clone(), Action::Count),
        2 => (df.project(&["two", "four"])?, Action::Head(5)),
        3 => {
            let mask = df
                .col("ten")?
                .eq(v("x"))?
                .and(&df.col("twentyPercent")?.eq(v("y"))?)?
                .and(&df.col("two")?.eq(v("z"))?)?;
            (df.filter(&mask)?, Action::Count)
        }
        4 => (
            df.groupby_agg("oddOnePercent", AggFunc::Count, "oddOnePercent")?,
            Action::Collect,
        ),
        5 => (df.col("stringu1")?.upper()?, Action::Head(5)),
        6 => (df.clone(), Action::AggValue(AggFunc::Max, "unique1".into())),
        7 => (df.clone(), Action::AggValue(AggFunc::Min, "unique1".into())),
        8 => (
            df.groupby_agg("twenty", AggFunc::Max, "four")?,
            Action::Collect,
        ),
        9 => (df.sort("unique1", true)?, Action::Head(5)),
        10 => (df.filter(&df.col("ten")?.eq(v("x"))?)?, Action::Head(5)),
        11 => {
            let mask = df
                .col("onePercent")?
                .ge(v("x"))?
                .and(&df.col("onePercent")?.le(v("y"))?)?;
            (df.filter(&mask)?, Action::Count)
        }
        12 => (df.join(df2, "unique1", "unique1")?, Action::Count),
        13 => (df.filter(&df.col("tenPercent")?.isna()?)?, Action::Count),
        other => {
            return Err(FrameError::InvalidArgument(format!(
                "no benchmark expression {other}"
            )))
        }
    };
    Ok(Prepared { frame, action })
}

/// Collection names used in the printed query listings for each built-in
/// pack: `(namespace, collection, join left, join right)`.
pub fn listing_fixture(pack: &str) -> (&'static str, &'static str, &'static str, &'static str) {
    match pack {
        "sqlpp" => ("", "data", "leftData", "rightData"),
        "sql" => ("", "data", "left", "right"),
        "mongo" => ("namespace", "collection", "collection", "collection2"),
        _ => ("", "data", "data", "wisconsin2"),
    }
}

/// Renders expression `id` with symbolic variables against the listing
/// collection names, without executing anything.
pub fn render_listing(pack: &Arc<LanguagePack>, id: u8) -> Result<String, FrameError> {
    let (ns, coll, left, right) = listing_fixture(&pack.name);
    let dry: Arc<dyn Connector> = Arc::new(DryRunConnector::new());
    let scan = |c: &str| Frame::scan(ns, c, pack.clone(), dry.clone());
    let (df, df2) = if id == 12 {
        (scan(left)?, scan(right)?)
    } else {
        (scan(coll)?, scan(right)?)
    };
    build_expression(id, &df, &df2, &Vars::Symbolic)?.query_text()
}

/// What the oracle expects from an expression.
#[derive(Debug, Clone, PartialEq)]
pub enum Expected {
    Count(i64),
    Scalar(Value),
    /// Rows of an unordered `head(n)`: any `n` of the candidates, or all of
    /// them when there are fewer.
    Head {
        n: usize,
        candidates: Vec<Record>,
    },
    /// One row per group: key value and aggregate value.
    Groups {
        key: String,
        groups: Vec<(Value, Value)>,
    },
    /// Rows in order on `key`.
    Ordered {
        key: String,
        rows: Vec<Record>,
    },
}

fn int_of(r: &Record, c: &str) -> Option<i64> {
    r.get(c).as_i64()
}

/// Direct evaluation of expression `id` with dataframe semantics. `isna`
/// counts both NULL and MISSING; comparisons with an absent value are false.
pub fn oracle_eval(id: u8, table: &Table, vars: &ExprVars) -> Expected {
    let rows = &table.rows;
    let count_where = |f: &dyn Fn(&Record) -> bool| rows.iter().filter(|r| f(r)).count() as i64;
    let project = |r: &Record, cols: &[&str]| {
        let mut out = Record::new();
        for c in cols {
            if !r.get(c).is_missing() {
                out.set(*c, r.get(c).clone());
            }
        }
        out
    };
    match id {
        1 => Expected::Count(rows.len() as i64),
        2 => Expected::Head {
            n: 5,
            candidates: rows.iter().map(|r| project(r, &["two", "four"])).collect(),
        },
        3 => Expected::Count(count_where(&|r| {
            int_of(r, "ten") == Some(vars.x)
                && int_of(r, "twentyPercent") == Some(vars.y)
                && int_of(r, "two") == Some(vars.z)
        })),
        4 | 8 => {
            let (key, col) = if id == 4 {
                ("oddOnePercent", "oddOnePercent")
            } else {
                ("twenty", "four")
            };
            let mut acc: BTreeMap<i64, Option<i64>> = BTreeMap::new();
            for r in rows {
                let Some(k) = int_of(r, key) else { continue };
                let slot = acc.entry(k).or_insert(if id == 4 { Some(0) } else { None });
                if let Some(v) = int_of(r, col) {
                    *slot = Some(if id == 4 {
                        slot.unwrap_or(0) + 1
                    } else {
                        slot.map_or(v, |m| m.max(v))
                    });
                }
            }
            Expected::Groups {
                key: key.to_string(),
                groups: acc
                    .into_iter()
                    .map(|(k, v)| (Value::Int(k), v.map_or(Value::Null, Value::Int)))
                    .collect(),
            }
        }
        5 => Expected::Head {
            n: 5,
            candidates: rows
                .iter()
                .map(|r| {
                    let v = match r.get("stringu1") {
                        Value::Str(s) => Value::Str(s.to_uppercase()),
                        _ => Value::Null,
                    };
                    Record::from_pairs([("stringu1", v)])
                })
                .collect(),
        },
        6 | 7 => {
            let vals = rows.iter().filter_map(|r| int_of(r, "unique1"));
            let v = if id == 6 { vals.max() } else { vals.min() };
            Expected::Scalar(v.map_or(Value::Null, Value::Int))
        }
        9 => {
            let mut sorted: Vec<&Record> = rows.iter().collect();
            sorted.sort_by(|a, b| mongo_total_order(b.get("unique1"), a.get("unique1")));
            Expected::Ordered {
                key: "unique1".into(),
                rows: sorted.into_iter().take(5).cloned().collect(),
            }
        }
        10 => Expected::Head {
            n: 5,
            candidates: rows
                .iter()
                .filter(|r| int_of(r, "ten") == Some(vars.x))
                .cloned()
                .collect(),
        },
        11 => Expected::Count(count_where(&|r| {
            int_of(r, "onePercent").is_some_and(|v| vars.x <= v && v <= vars.y)
        })),
        12 => {
            let mut right: HashMap<i64, i64> = HashMap::new();
            for r in rows {
                if let Some(k) = int_of(r, "unique1") {
                    *right.entry(k).or_default() += 1;
                }
            }
            Expected::Count(
                rows.iter()
                    .filter_map(|r| int_of(r, "unique1"))
                    .map(|k| right.get(&k).copied().unwrap_or(0))
                    .sum(),
            )
        }
        13 => Expected::Count(count_where(&|r| r.get("tenPercent").is_unknown())),
        _ => Expected::Count(0),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MatchReport {
    pub matched: bool,
    pub detail: String,
}

impl MatchReport {
    fn ok() -> Self {
        MatchReport {
            matched: true,
            detail: String::new(),
        }
    }

    fn fail(detail: impl Into<String>) -> Self {
        MatchReport {
            matched: false,
            detail: detail.into(),
        }
    }
}

/// Numbers match exactly when both are integers and within 1e-9 relative
/// otherwise; anything else must be identical.
pub fn values_match(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Int(x), Value::Int(y)) => x == y,
        (x, y) if x.is_numeric() && y.is_numeric() => {
            let (x, y) = (x.as_f64().unwrap_or(0.0), y.as_f64().unwrap_or(0.0));
            x == y || (x - y).abs() <= 1e-9 * x.abs().max(y.abs())
        }
        (Value::Missing | Value::Null, Value::Missing | Value::Null) => true,
        _ => a == b,
    }
}

fn single_present(r: &Record) -> Option<&Value> {
    let mut it = r.present();
    match (it.next(), it.next()) {
        (Some((_, v)), None) => Some(v),
        _ => None,
    }
}

fn row_matches(engine: &Record, expected: &Record) -> bool {
    // A single-column expectation compares by value: dialects name computed
    // columns differently.
    if expected.len() == 1 {
        if let (Some(a), Some(b)) = (single_present(engine), single_present(expected)) {
            return values_match(a, b);
        }
    }
    let present = |r: &Record| r.present().count();
    present(engine) == present(expected)
        && expected
            .present()
            .all(|(k, v)| values_match(engine.get(k), v))
}

/// Compares an engine result with the oracle's expectation.
pub fn diff_results(engine: &Outcome, expected: &Expected) -> MatchReport {
    match (engine, expected) {
        (Outcome::Count(a), Expected::Count(b)) => {
            if a == b {
                MatchReport::ok()
            } else {
                MatchReport::fail(format!("count {a}, expected {b}"))
            }
        }
        (Outcome::Scalar(a), Expected::Scalar(b)) => {
            if values_match(a, b) {
                MatchReport::ok()
            } else {
                MatchReport::fail(format!("value {a}, expected {b}"))
            }
        }
        (Outcome::Rows(t), Expected::Head { n, candidates }) => {
            let want = (*n).min(candidates.len());
            if t.len() != want {
                return MatchReport::fail(format!("{} rows, expected {want}", t.len()));
            }
            match t
                .rows
                .iter()
                .find(|r| !candidates.iter().any(|c| row_matches(r, c)))
            {
                Some(r) => MatchReport::fail(format!("row {r:?} is not in the expected result")),
                None => MatchReport::ok(),
            }
        }
        (Outcome::Rows(t), Expected::Groups { key, groups }) => {
            let mut got = Vec::with_capacity(t.len());
            for r in &t.rows {
                let k = r.get(key).clone();
                let others: Vec<&Value> = r
                    .present()
                    .filter(|(n, _)| n != key)
                    .map(|(_, v)| v)
                    .collect();
                let [v] = others.as_slice() else {
                    return MatchReport::fail(format!(
                        "group row {r:?} should hold a key and one value"
                    ));
                };
                got.push((k, (*v).clone()));
            }
            let order = |a: &(Value, Value), b: &(Value, Value)| mongo_total_order(&a.0, &b.0);
            got.sort_by(order);
            let mut want = groups.clone();
            want.sort_by(order);
            if got.len() != want.len() {
                return MatchReport::fail(format!("{} groups, expected {}", got.len(), want.len()));
            }
            for (g, w) in got.iter().zip(&want) {
                if !values_match(&g.0, &w.0) || !values_match(&g.1, &w.1) {
                    return MatchReport::fail(format!("group {:?}, expected {:?}", g, w));
                }
            }
            MatchReport::ok()
        }
        (Outcome::Rows(t), Expected::Ordered { key, rows }) => {
            if t.len() != rows.len() {
                return MatchReport::fail(format!("{} rows, expected {}", t.len(), rows.len()));
            }
            for (i, (g, w)) in t.rows.iter().zip(rows).enumerate() {
                if !values_match(g.get(key), w.get(key)) {
                    return MatchReport::fail(format!(
                        "row {i} has {key} = {}, expected {}",
                        g.get(key),
                        w.get(key)
                    ));
                }
                if !row_matches(g, w) {
                    return MatchReport::fail(format!("row {i} differs: {g:?}"));
                }
            }
            MatchReport::ok()
        }
        (e, x) => MatchReport::fail(format!("result shape {e:?} does not fit {x:?}")),
    }
}

fn digest(o: &Outcome) -> String {
    match o {
        Outcome::Count(n) => format!("count={n}"),
        Outcome::Scalar(v) => format!("value={v}"),
        Outcome::Rows(t) => format!("rows={}", t.len()),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExprReport {
    pub id: u8,
    pub name: &'static str,
    pub vars: ExprVars,
    pub query: Option<String>,
    pub creation_ms: f64,
    pub expression_ms: f64,
    pub total_ms: f64,
    pub result: Option<String>,
    pub oracle_match: Option<bool>,
    pub oracle_detail: Option<String>,
    pub golden_match: Option<bool>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub pack: String,
    pub connector: String,
    pub rows: Option<usize>,
    pub repeat: usize,
    pub expressions: Vec<ExprReport>,
}

impl BenchReport {
    pub fn all_matched(&self) -> bool {
        self.expressions.iter().all(|e| {
            e.error.is_none() && e.oracle_match != Some(false) && e.golden_match != Some(false)
        })
    }
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Pack(#[from] PackError),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Connector(#[from] crate::connector::ConnectorError),
    #[error(transparent)]
    Data(#[from] datagen::DatagenError),
    #[error("cannot read {path}: {message}")]
    Input { path: PathBuf, message: String },
    #[error("{0}")]
    Usage(String),
}

/// Everything a benchmark run needs.
pub struct BenchParams {
    pub pack: Arc<LanguagePack>,
    pub connector: Arc<dyn Connector>,
    pub connector_name: String,
    pub namespace: String,
    pub collection: String,
    /// Second collection for expression 12; the first one when `None`.
    pub join_collection: Option<String>,
    pub exprs: Vec<u8>,
    pub repeat: usize,
    pub seed: u64,
    /// Data for the oracle; no differential check without it.
    pub oracle_table: Option<Table>,
    pub golden_dir: Option<PathBuf>,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    xs.get(xs.len() / 2).copied().unwrap_or(0.0)
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1000.0
}

/// Runs the selected expressions in order. A failing expression is recorded
/// and the run continues.
pub fn run_benchmark(p: &BenchParams) -> BenchReport {
    let mut reports = Vec::new();
    for &id in &p.exprs {
        let vars = draw_vars(id, p.seed);
        let mut rep = ExprReport {
            id,
            name: EXPRESSION_NAMES
                .get(usize::from(id).wrapping_sub(1))
                .copied()
                .unwrap_or("?"),
            vars,
            query: None,
            creation_ms: 0.0,
            expression_ms: 0.0,
            total_ms: 0.0,
            result: None,
            oracle_match: None,
            oracle_detail: None,
            golden_match: None,
            error: None,
        };
        if let Some(dir) = &p.golden_dir {
            rep.golden_match = Some(
                match (
                    render_listing(&p.pack, id),
                    read_golden(dir, &p.pack.name, id),
                ) {
                    (Ok(q), Some(g)) => normalize_query(&q) == normalize_query(&g),
                    _ => false,
                },
            );
        }
        let (mut creation, mut expression) = (Vec::new(), Vec::new());
        let mut last = None;
        for _ in 0..p.repeat.max(1) {
            let t0 = Instant::now();
            let built = (|| {
                let df = Frame::scan(
                    &p.namespace,
                    &p.collection,
                    p.pack.clone(),
                    p.connector.clone(),
                )?;
                let df2 = Frame::scan(
                    &p.namespace,
                    p.join_collection.as_deref().unwrap_or(&p.collection),
                    p.pack.clone(),
                    p.connector.clone(),
                )?;
                build_expression(id, &df, &df2, &Vars::Values(vars))
            })();
            creation.push(ms(t0));
            let prepared = match built {
                Ok(b) => b,
                Err(e) => {
                    last = Some(Err(e));
                    break;
                }
            };
            rep.query = prepared.query_text().ok();
            let t1 = Instant::now();
            let out = prepared.run();
            expression.push(ms(t1));
            let failed = out.is_err();
            last = Some(out);
            if failed {
                break;
            }
        }
        rep.creation_ms = median(creation);
        rep.expression_ms = median(expression);
        rep.total_ms = rep.creation_ms + rep.expression_ms;
        match last {
            Some(Ok(outcome)) => {
                rep.result = Some(digest(&outcome));
                if let Some(t) = &p.oracle_table {
                    let m = diff_results(&outcome, &oracle_eval(id, t, &vars));
                    rep.oracle_match = Some(m.matched);
                    if !m.matched {
                        rep.oracle_detail = Some(m.detail);
                    }
                }
            }
            Some(Err(e)) => rep.error = Some(e.to_string()),
            None => {}
        }
        reports.push(rep);
    }
    BenchReport {
        pack: p.pack.name.clone(),
        connector: p.connector_name.clone(),
        rows: p.oracle_table.as_ref().map(Table::len),
        repeat: p.repeat.max(1),
        expressions: reports,
    }
}

/// Path of a stored listing: `<dir>/<pack>/<NN>.txt`.
pub fn golden_path(dir: &Path, pack: &str, id: u8) -> PathBuf {
    dir.join(pack).join(format!("{id:02}.txt"))
}

pub fn read_golden(dir: &Path, pack: &str, id: u8) -> Option<String> {
    fs::read_to_string(golden_path(dir, pack, id)).ok()
}

/// Parses `1-13`, `2,5,9` or a mix such as `1-3,12`.
pub fn parse_expr_list(s: &str) -> Result<Vec<u8>, String> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let num = |t: &str| -> Result<u8, String> {
            let n: u8 = t
                .trim()
                .parse()
                .map_err(|_| format!("`{t}` is not an expression number"))?;
            if EXPRESSION_IDS.contains(&n) {
                Ok(n)
            } else {
                Err(format!("expression {n} is outside 1-13"))
            }
        };
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b) = (num(a)?, num(b)?);
                if a > b {
                    return Err(format!("empty range {part}"));
                }
                out.extend(a..=b);
            }
            None => out.push(num(part)?),
        }
    }
    if out.is_empty() {
        return Err("no expressions selected".into());
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ConnectorChoice {
    Dryrun,
    Local,
    Http,
}

/// `bench` command line.
#[derive(Debug, Clone, clap::Args)]
pub struct BenchArgs {
    /// Built-in pack name or a path to a pack file.
    #[arg(long, default_value = "sqlpp")]
    pub pack: String,
    #[arg(long, value_enum, default_value_t = ConnectorChoice::Dryrun)]
    pub connector: ConnectorChoice,
    /// JSON lines input; generated from --max and --seed when omitted.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 10_000)]
    pub max: u64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Fraction of rows without `tenPercent` in generated data.
    #[arg(long, default_value_t = 0.1)]
    pub missing_rate: f64,
    #[arg(long, default_value = "1-13")]
    pub exprs: String,
    #[arg(long, default_value_t = 1)]
    pub repeat: usize,
    /// Where to write the JSON report; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Directory of stored listings to compare rendered queries against.
    #[arg(long)]
    pub golden_dir: Option<PathBuf>,
    #[arg(long, default_value = "")]
    pub namespace: String,
    #[arg(long, default_value = "data")]
    pub collection: String,
    /// Endpoint for `--connector http`.
    #[arg(long)]
    pub url: Option<String>,
    /// Header sent with every HTTP request, as `Name: value`.
    #[arg(long)]
    pub auth_header: Option<String>,
    #[arg(long, default_value_t = 30_000)]
    pub timeout_ms: u64,
}

fn load_pack(spec: &str) -> Result<LanguagePack, PackError> {
    if packs::BUILTIN_NAMES.contains(&spec) {
        packs::load_builtin(spec)
    } else {
        packs::load_user_pack(Path::new(spec))
    }
}

/// Loads the data and pack named by `args` and runs the benchmark.
pub fn run_cli(args: &BenchArgs) -> Result<BenchReport, BenchError> {
    let pack = Arc::new(load_pack(&args.pack)?);
    let exprs = parse_expr_list(&args.exprs).map_err(BenchError::Usage)?;
    let table = match &args.data {
        Some(path) => {
            let bytes = fs::read(path).map_err(|e| BenchError::Input {
                path: path.clone(),
                message: e.to_string(),
            })?;
            read_jsonl(&bytes).map_err(|e| BenchError::Input {
                path: path.clone(),
                message: e.to_string(),
            })?
        }
        None => datagen::generate(
            &GeneratorSpec::new(args.max, args.seed)
                .with_missing(args.missing_rate, &["tenPercent"]),
        )?,
    };
    let (connector, oracle_table): (Arc<dyn Connector>, Option<Table>) = match args.connector {
        ConnectorChoice::Dryrun => (Arc::new(DryRunConnector::new()), None),
        ConnectorChoice::Local => {
            let mut catalog = Catalog::new();
            catalog.insert(&args.namespace, &args.collection, table.clone());
            let local = LocalConnector::for_pack(&pack, Arc::new(Mutex::new(catalog)))?;
            (Arc::new(local), Some(table))
        }
        ConnectorChoice::Http => {
            let url = args
                .url
                .clone()
                .ok_or_else(|| BenchError::Usage("--connector http needs --url".into()))?;
            let mut cfg = HttpEndpointConfig::new(&url);
            cfg.auth_header = args.auth_header.clone();
            cfg.timeout_ms = args.timeout_ms;
            (Arc::new(HttpConnector::new(cfg)?), Some(table))
        }
    };
    let name = match args.connector {
        ConnectorChoice::Dryrun => "dryrun",
        ConnectorChoice::Local => "local",
        ConnectorChoice::Http => "http",
    };
    let params = BenchParams {
        pack,
        connector,
        connector_name: name.to_string(),
        namespace: args.namespace.clone(),
        collection: args.collection.clone(),
        join_collection: None,
        exprs,
        repeat: args.repeat,
        seed: args.seed,
        oracle_table,
        golden_dir: args.golden_dir.clone(),
    };
    let report = run_benchmark(&params);
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    match &args.out {
        Some(path) => fs::write(path, json + "\n").map_err(|e| BenchError::Input {
            path: path.clone(),
            message: e.to_string(),
        })?,
        None => println!("{json}"),
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::generate;

    #[test]
    fn expression_lists() {
        assert_eq!(parse_expr_list("1-13").unwrap().len(), 13);
        assert_eq!(parse_expr_list("1-3,12").unwrap(), vec![1, 2, 3, 12]);
        assert!(parse_expr_list("0").is_err());
        assert!(parse_expr_list("5-2").is_err());
        assert!(parse_expr_list("").is_err());
    }

    #[test]
    fn drawn_vars_stay_in_range() {
        for seed in 0..200 {
            let v = draw_vars(3, seed);
            assert!((0..=9).contains(&v.x) && (0..=4).contains(&v.y) && (0..=1).contains(&v.z));
            let v = draw_vars(11, seed);
            assert!(0 <= v.x && v.x <= v.y && v.y <= 99);
            assert!((0..=9).contains(&draw_vars(10, seed).x));
        }
    }

    #[test]
    fn oracle_examples() {
        let t = generate(&GeneratorSpec::new(500, 1)).unwrap();
        let zero = ExprVars { x: 0, y: 0, z: 0 };
        assert_eq!(oracle_eval(1, &t, &zero), Expected::Count(500));
        assert_eq!(oracle_eval(6, &t, &zero), Expected::Scalar(Value::Int(499)));
        assert_eq!(oracle_eval(12, &t, &zero), Expected::Count(500));
        let t = generate(&GeneratorSpec::new(10_000, 1)).unwrap();
        assert_eq!(
            oracle_eval(11, &t, &ExprVars { x: 10, y: 19, z: 0 }),
            Expected::Count(1000)
        );
        // ten = x forces two = x mod 2 and twentyPercent = x mod 5.
        assert_eq!(
            oracle_eval(3, &t, &ExprVars { x: 7, y: 2, z: 1 }),
            Expected::Count(1000)
        );
        assert_eq!(
            oracle_eval(3, &t, &ExprVars { x: 7, y: 2, z: 0 }),
            Expected::Count(0)
        );
    }

    #[test]
    fn diff_rules() {
        assert!(diff_results(&Outcome::Count(3), &Expected::Count(3)).matched);
        assert!(!diff_results(&Outcome::Count(3), &Expected::Count(4)).matched);
        assert!(
            diff_results(
                &Outcome::Scalar(Value::Float(1.0 + 1e-12)),
                &Expected::Scalar(Value::Float(1.0))
            )
            .matched
        );
        let g = |k: i64, v: i64| Record::from_pairs([("k", Value::Int(k)), ("n", Value::Int(v))]);
        let rows = Table::new(vec![g(2, 5), g(1, 4)]);
        let want = Expected::Groups {
            key: "k".into(),
            groups: vec![
                (Value::Int(1), Value::Int(4)),
                (Value::Int(2), Value::Int(5)),
            ],
        };
        assert!(diff_results(&Outcome::Rows(rows), &want).matched);
        let ordered = Expected::Ordered {
            key: "k".into(),
            rows: vec![g(2, 5), g(1, 4)],
        };
        assert!(diff_results(&Outcome::Rows(Table::new(vec![g(2, 5), g(1, 4)])), &ordered).matched);
        assert!(
            !diff_results(&Outcome::Rows(Table::new(vec![g(1, 4), g(2, 5)])), &ordered).matched
        );
    }
}
