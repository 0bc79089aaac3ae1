//! Acceptance suite. Each criterion prints one PASS/FAIL line; the test
//! fails if any criterion fails.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines.

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use framequery::bench::{self, BenchParams, Expected};
use framequery::connector::{
    Connector, ConnectorError, DryRunConnector, HttpConnector, HttpEndpointConfig, LocalConnector,
    Phase, SpyConnector,
};
use framequery::datagen::{self, GeneratorSpec};
use framequery::exec::Catalog;
use framequery::frame::{AggFunc, ArithOp, Conversion};
use framequery::packs::{self, BUILTIN_NAMES};
use framequery::rewrite::{
    normalize_query, substitute, validate_pack, DiagnosticKind, Template, VarBindings, REGISTRY,
};
use framequery::{Frame, FrameError, LanguagePack, Record, Table, Value};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn goldens() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("goldens")
}

fn pack(name: &str) -> Arc<LanguagePack> {
    Arc::new(packs::load_builtin(name).unwrap())
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// Golden translation suite ------------------------------------------------

fn golden_translations() -> Outcome {
    let t0 = Instant::now();
    let dir = goldens();
    let (mut matched, mut verbatim, mut failures) = (0, 0, Vec::new());
    for name in BUILTIN_NAMES {
        let p = pack(name);
        for id in bench::EXPRESSION_IDS {
            let rendered =
                bench::render_listing(&p, id).map_err(|e| format!("{name} {id}: {e}"))?;
            let golden =
                bench::read_golden(&dir, name, id).ok_or(format!("no golden for {name} {id}"))?;
            if normalize_query(&rendered) == normalize_query(&golden) {
                matched += 1;
            } else {
                failures.push(format!("{name}/{id:02}"));
            }
            let printed = std::fs::read_to_string(
                dir.join(name).join("printed").join(format!("{id:02}.txt")),
            )
            .map_err(|e| e.to_string())?;
            if normalize_query(&rendered) == normalize_query(&printed) {
                verbatim += 1;
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    ensure(failures.is_empty(), || {
        format!("mismatches: {}", failures.join(" "))
    })?;
    ensure(matched == 52, || format!("{matched}/52"))?;
    ensure(secs < 5.0, || format!("took {secs:.2}s"))?;
    Ok(format!(
        "{matched}/52 match the stored listings ({verbatim}/52 also match the printed text unedited) in {secs:.2}s"
    ))
}

// Table I replay ----------------------------------------------------------

fn table1_template(pack: &str, step: usize) -> String {
    let path = goldens()
        .join("table1")
        .join(pack)
        .join(format!("{step}.txt"));
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Expected text for each step with `<<k>>` replaced by expected step k.
fn table1_expected(pack: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for step in 1..=6 {
        let mut t = table1_template(pack, step);
        for (k, prev) in out.iter().enumerate() {
            t = t.replace(&format!("<<{}>>", k + 1), prev.trim_end());
        }
        out.push(t);
    }
    out
}

fn table1_chain(
    p: Arc<LanguagePack>,
    conn: Arc<dyn Connector>,
) -> Result<(Vec<String>, Frame), FrameError> {
    let af = Frame::scan("Test", "Users", p, conn)?;
    let s2 = af.col("lang")?;
    let s3 = s2.eq("en")?;
    let s4 = af.filter(&s3)?;
    let s5 = s4.project(&["name", "address"])?;
    let s6 = s5.head_request(10)?.query.as_subquery();
    Ok((
        vec![
            af.query_text(),
            s2.query_text(),
            s3.query_text(),
            s4.query_text(),
            s5.query_text(),
            s6,
        ],
        s5,
    ))
}

fn table1_replay() -> Outcome {
    let mut assertions = 0;
    for name in BUILTIN_NAMES {
        let (steps, s5) = table1_chain(pack(name), Arc::new(DryRunConnector::new()))
            .map_err(|e| e.to_string())?;
        for (i, (got, want)) in steps.iter().zip(table1_expected(name)).enumerate() {
            ensure(normalize_query(got) == normalize_query(&want), || {
                format!("{name} step {}:\n{got}\n-- expected --\n{want}", i + 1)
            })?;
            assertions += 1;
        }
        if *name == "mongo" {
            let req = s5.head_request(10).map_err(|e| e.to_string())?;
            let stages = req
                .query
                .stages()
                .ok_or("head on a pipeline pack is not a stage list")?;
            let n = stages.len();
            let id_exclusion = |s: &str| normalize_query(s) == r#"{"$project":{"_id":0}}"#;
            ensure(n >= 2 && id_exclusion(&stages[n - 2]), || {
                format!("`_id` exclusion is not the stage before the limit: {stages:?}")
            })?;
            ensure(
                normalize_query(&stages[n - 1]).starts_with(r#"{"$limit":"#),
                || "last stage is not $limit".into(),
            )?;
            ensure(stages[..n - 2].iter().all(|s| !s.contains("_id")), || {
                "`_id` is touched before the final projection".into()
            })?;
            let whole =
                std::fs::read_to_string(goldens().join("table1/mongo/pipeline.txt")).unwrap();
            ensure(
                normalize_query(&req.render()) == normalize_query(&whole),
                || format!("full pipeline differs:\n{}", req.render()),
            )?;
        }
    }
    ensure(assertions == 24, || format!("{assertions}/24"))?;
    Ok(format!(
        "{assertions}/24 intermediate queries, `_id` exclusion last before $limit"
    ))
}

// Differential semantics --------------------------------------------------

/// Counts and extremes computed straight from the rows, used to confirm the
/// library oracle before trusting it for the remaining expressions.
fn independent_checks(table: &Table, seed: u64) -> Result<(), String> {
    let int = |r: &Record, c: &str| match r.get(c) {
        Value::Int(i) => Some(*i),
        _ => None,
    };
    let n = table.rows.len() as i64;
    let mut expect: Vec<(u8, Expected)> = vec![(1, Expected::Count(n))];
    let v3 = bench::draw_vars(3, seed);
    expect.push((
        3,
        Expected::Count(
            table
                .rows
                .iter()
                .filter(|r| {
                    int(r, "ten") == Some(v3.x)
                        && int(r, "twentyPercent") == Some(v3.y)
                        && int(r, "two") == Some(v3.z)
                })
                .count() as i64,
        ),
    ));
    let u1: Vec<i64> = table
        .rows
        .iter()
        .filter_map(|r| int(r, "unique1"))
        .collect();
    expect.push((6, Expected::Scalar(Value::Int(*u1.iter().max().unwrap()))));
    expect.push((7, Expected::Scalar(Value::Int(*u1.iter().min().unwrap()))));
    let v11 = bench::draw_vars(11, seed);
    expect.push((
        11,
        Expected::Count(
            table
                .rows
                .iter()
                .filter(|r| int(r, "onePercent").is_some_and(|p| p >= v11.x && p <= v11.y))
                .count() as i64,
        ),
    ));
    let keys: BTreeSet<i64> = u1.iter().copied().collect();
    expect.push((
        12,
        Expected::Count(u1.iter().filter(|k| keys.contains(k)).count() as i64),
    ));
    expect.push((
        13,
        Expected::Count(
            table
                .rows
                .iter()
                .filter(|r| r.get("tenPercent").is_unknown())
                .count() as i64,
        ),
    ));
    for (id, want) in expect {
        let got = bench::oracle_eval(id, table, &bench::draw_vars(id, seed));
        ensure(got == want, || {
            format!("oracle disagrees on expression {id}: {got:?} vs {want:?}")
        })?;
    }
    Ok(())
}

fn differential() -> Outcome {
    let t0 = Instant::now();
    let mut checked = 0;
    for seed in 1..=3u64 {
        let table =
            datagen::generate(&GeneratorSpec::new(10_000, seed).with_missing(0.1, &["tenPercent"]))
                .map_err(|e| e.to_string())?;
        independent_checks(&table, seed)?;
        for name in ["sql", "sqlpp", "mongo"] {
            let p = pack(name);
            let mut catalog = Catalog::new();
            catalog.insert("", "data", table.clone());
            let local = LocalConnector::for_pack(&p, Arc::new(Mutex::new(catalog)))
                .map_err(|e| e.to_string())?;
            let report = bench::run_benchmark(&BenchParams {
                pack: p,
                connector: Arc::new(local),
                connector_name: "local".into(),
                namespace: String::new(),
                collection: "data".into(),
                join_collection: None,
                exprs: bench::EXPRESSION_IDS.collect(),
                repeat: 1,
                seed,
                oracle_table: Some(table.clone()),
                golden_dir: None,
            });
            for e in &report.expressions {
                ensure(e.error.is_none(), || {
                    format!("seed {seed} {name} expr {}: {:?}", e.id, e.error)
                })?;
                ensure(e.oracle_match == Some(true), || {
                    format!("seed {seed} {name} expr {}: {:?}", e.id, e.oracle_detail)
                })?;
                checked += 1;
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    ensure(checked == 117, || format!("{checked}/117 runs"))?;
    ensure(secs < 60.0, || format!("took {secs:.1}s"))?;
    Ok(format!("{checked}/117 runs match the oracle in {secs:.1}s"))
}

// Laziness ----------------------------------------------------------------

fn transform(f: &Frame, op: u8, k: i64) -> Result<Frame, FrameError> {
    Ok(match op % 12 {
        0 => f.filter(&f.col("a")?.gt(k)?)?,
        1 => f.sort("b", k % 2 == 0)?,
        2 => f.project(&["a", "b", "c"])?,
        3 => f.filter(&f.col("c")?.isna()?.not()?)?,
        4 => f.filter(
            &f.col("a")?
                .eq(k)?
                .and(&f.col("b")?.lt(k)?)?
                .or(&f.col("c")?.notna()?)?,
        )?,
        5 => {
            f.col("a")?.arith(ArithOp::Mul, k)?;
            f.col("a")?.arith(ArithOp::Add, &f.col("b")?)?;
            f.clone()
        }
        6 => {
            f.groupby_agg("a", AggFunc::Avg, "b")?;
            f.clone()
        }
        7 => f.join(
            &Frame::scan("ns", "u", f.pack().clone(), f.connector().clone())?,
            "a",
            "a",
        )?,
        8 => {
            f.describe(&["a", "b"])?;
            f.clone()
        }
        9 => {
            f.col("c")?.eq(k)?.astype(Conversion::ToInt)?;
            f.col("c")?.upper()?;
            f.clone()
        }
        10 => {
            f.head_request(5)?;
            f.count_request()?;
            f.clone()
        }
        _ => f.filter(&f.col("b")?.compare(framequery::value::CompareOp::Ne, "x")?)?,
    })
}

fn laziness() -> Outcome {
    let mut runner = TestRunner::new(Config {
        cases: 64,
        failure_persistence: None,
        ..Config::default()
    });
    let strategy = (
        0usize..4,
        prop::collection::vec((any::<u8>(), 0i64..10), 10),
    );
    runner
        .run(&strategy, |(pi, ops)| {
            let spy = Arc::new(SpyConnector::new(DryRunConnector::new()));
            let mut f = Frame::scan("ns", "t", pack(BUILTIN_NAMES[pi]), spy.clone()).unwrap();
            for (op, k) in &ops {
                f = transform(&f, *op, *k)
                    .map_err(|e| TestCaseError::fail(format!("op {op}: {e}")))?;
            }
            prop_assert_eq!(spy.log().count(Phase::Execute), 0);
            prop_assert!(spy.log().phases().is_empty());
            Ok(())
        })
        .map_err(|e| e.to_string())?;

    let table = datagen::generate(&GeneratorSpec::new(200, 5)).unwrap();
    let mut actions = 0;
    for name in BUILTIN_NAMES {
        let p = pack(name);
        let spy: Arc<SpyConnector<Box<dyn Connector>>> =
            Arc::new(SpyConnector::new(if *name == "cypher" {
                Box::new(
                    DryRunConnector::new().respond_with(Table::new(vec![Record::from_pairs([(
                        "four",
                        Value::Int(1),
                    )])])),
                )
            } else {
                let mut catalog = Catalog::new();
                catalog.insert("", "data", table.clone());
                Box::new(
                    LocalConnector::for_pack(&p, Arc::new(Mutex::new(catalog)))
                        .unwrap()
                        .allow_overwrite(true),
                )
            }));
        let df = Frame::scan("", "data", p, spy.clone()).map_err(|e| e.to_string())?;
        let chain = (|| df.filter(&df.col("ten")?.lt(5)?)?.sort("unique1", false))()
            .map_err(|e| e.to_string())?;
        let executes = |f: &dyn Fn() -> Result<(), FrameError>,
                        want: usize,
                        what: &str|
         -> Result<(), String> {
            spy.log().clear();
            f().map_err(|e| format!("{name} {what}: {e}"))?;
            let got = spy.log().count(Phase::Execute);
            ensure(got == want, || {
                format!("{name} {what}: {got} executes, expected {want}")
            })
        };
        executes(&|| chain.count().map(drop), 1, "count")?;
        executes(&|| chain.head(3).map(drop), 1, "head")?;
        executes(&|| chain.collect().map(drop), 1, "collect")?;
        executes(
            &|| chain.agg_value(AggFunc::Max, "unique1").map(drop),
            1,
            "agg_value",
        )?;
        executes(
            &|| chain.describe(&["unique1"])?.collect().map(drop),
            1,
            "describe",
        )?;
        executes(
            &|| df.get_dummies("four")?.collect().map(drop),
            2,
            "get_dummies",
        )?;
        if *name != "cypher" {
            executes(&|| chain.persist("saved"), 1, "persist")?;
        }
        actions += if *name == "cypher" { 6 } else { 7 };
    }
    Ok(format!(
        "64 random 10-op chains ran nothing; {actions} actions ran exactly their expected executes"
    ))
}

// Generator ---------------------------------------------------------------

fn letters(mut u: u64) -> String {
    let mut out = vec!['A'; 7];
    for slot in out.iter_mut().rev() {
        *slot = (b'A' + (u % 26) as u8) as char;
        u /= 26;
    }
    out.into_iter().collect()
}

fn generator() -> Outcome {
    const MAX: u64 = 100_000;
    let t0 = Instant::now();
    let spec = GeneratorSpec::new(MAX, 42);
    let table = datagen::generate(&spec).map_err(|e| e.to_string())?;
    ensure(table.rows.len() as u64 == MAX, || "wrong row count".into())?;
    let mut seen1 = vec![false; MAX as usize];
    let mut buckets = [0u32; 100];
    let pad = "x".repeat(45);
    for (i, r) in table.rows.iter().enumerate() {
        let g = |c: &str| {
            r.get(c)
                .as_i64()
                .ok_or(format!("row {i}: {c} is {:?}", r.get(c)))
        };
        let u1 = g("unique1")?;
        ensure(g("unique2")? == i as i64, || {
            format!("row {i}: unique2 not sequential")
        })?;
        ensure((0..MAX as i64).contains(&u1) && !seen1[u1 as usize], || {
            format!("row {i}: unique1 {u1} repeats or is out of range")
        })?;
        seen1[u1 as usize] = true;
        let one = u1 % 100;
        buckets[one as usize] += 1;
        let derived = [
            ("two", u1 % 2),
            ("four", u1 % 4),
            ("ten", u1 % 10),
            ("twenty", u1 % 20),
            ("onePercent", one),
            ("tenPercent", u1 % 10),
            ("twentyPercent", u1 % 5),
            ("fiftyPercent", u1 % 2),
            ("unique3", u1),
            ("evenOnePercent", one * 2),
            ("oddOnePercent", one * 2 + 1),
        ];
        for (c, want) in derived {
            ensure(g(c)? == want, || {
                format!("row {i}: {c} is not derived from unique1 {u1}")
            })?;
        }
        let s = |c: &str| r.get(c).as_str().map(str::to_string).unwrap_or_default();
        ensure(s("stringu1") == letters(u1 as u64) + &pad, || {
            format!("row {i}: stringu1")
        })?;
        ensure(s("stringu2") == letters(i as u64) + &pad, || {
            format!("row {i}: stringu2")
        })?;
        let cyc = ["A", "H", "O", "V"][i % 4].to_string() + &"x".repeat(51);
        ensure(s("string4") == cyc, || format!("row {i}: string4"))?;
    }
    ensure(buckets.iter().all(|&b| b == 1_000), || {
        "onePercent buckets are not 1,000 each".into()
    })?;
    let a = datagen::generate_jsonl(&spec).map_err(|e| e.to_string())?;
    let b = datagen::generate_jsonl(&spec).map_err(|e| e.to_string())?;
    ensure(a == b, || "regeneration differs".into())?;
    let secs = t0.elapsed().as_secs_f64();
    ensure(secs < 30.0, || format!("took {secs:.1}s"))?;
    Ok(format!(
        "100,000 rows: bijective keys, 14 derivations, 100 buckets of 1,000, {} identical bytes twice, {secs:.1}s",
        a.len()
    ))
}

// Pack validation ---------------------------------------------------------

fn pack_validation() -> Outcome {
    let mut deletions = 0;
    for name in BUILTIN_NAMES {
        let p = packs::load_builtin(name).map_err(|e| e.to_string())?;
        let d = validate_pack(&p);
        ensure(d.is_empty(), || format!("{name}: {d:?}"))?;
        for (section, keys) in REGISTRY {
            for key in *keys {
                let mut broken = p.clone();
                broken
                    .remove_rule(section, key)
                    .ok_or(format!("{name} lacks [{section}] {key}"))?;
                let d = validate_pack(&broken);
                ensure(
                    d.iter().any(|x| {
                        x.kind == DiagnosticKind::MissingKey
                            && x.key == *key
                            && x.section == *section
                    }) && d.iter().any(|x| x.to_string().contains(key)),
                    || format!("{name}: deleting [{section}] {key} gave {d:?}"),
                )?;
                deletions += 1;
            }
        }
    }
    Ok(format!(
        "4 packs clean; {deletions} single-key deletions each named"
    ))
}

// Escaping ----------------------------------------------------------------

#[derive(Debug, Clone)]
enum Tok {
    Lit(String),
    /// `$$` on its own.
    Dollar,
    Var(&'static str),
    /// `$$name`.
    DollarVar(&'static str),
}

const NAMES: [&str; 6] = [
    "left",
    "left_on",
    "left_subquery",
    "right",
    "right_subquery_or_collection",
    "num",
];

/// Source text and expected output of a token sequence.
fn oracle(toks: &[Tok], b: &dyn Fn(&str) -> String) -> (String, String) {
    let (mut src, mut out) = (String::new(), String::new());
    for t in toks {
        match t {
            Tok::Lit(s) => {
                src.push_str(s);
                out.push_str(s);
            }
            Tok::Dollar => {
                src.push_str("$$");
                out.push('$');
            }
            Tok::Var(v) => {
                src.push('$');
                src.push_str(v);
                out.push_str(&b(v));
            }
            Tok::DollarVar(v) => {
                src.push_str("$$");
                src.push_str(v);
                out.push('$');
                out.push_str(&b(v));
            }
        }
    }
    (src, out)
}

/// A literal may not continue a preceding name, and a bare `$$` may not be
/// followed by a name.
fn well_formed(toks: &[Tok]) -> bool {
    toks.windows(2).all(|w| match (&w[0], &w[1]) {
        (Tok::Var(_) | Tok::DollarVar(_) | Tok::Dollar, Tok::Lit(s)) => {
            !s.starts_with(|c: char| c.is_ascii_alphanumeric() || c == '_')
        }
        _ => true,
    }) && toks.iter().all(|t| match t {
        Tok::Lit(s) => !s.contains('$'),
        _ => true,
    })
}

fn check_escape(toks: &[Tok]) -> Result<(), String> {
    let bind = |v: &str| format!("<{v}$$left>");
    let (src, want) = oracle(toks, &bind);
    let b: VarBindings = NAMES.iter().map(|n| (*n, bind(n))).collect();
    let got = substitute(&Template::parse(&src), &b).map_err(|e| format!("{src}: {e}"))?;
    ensure(got == want, || {
        format!("template {src:?}: got {got:?}, want {want:?}")
    })
}

fn escaping() -> Outcome {
    let alphabet = [
        Tok::Lit(" ".into()),
        Tok::Lit("\"".into()),
        Tok::Lit("x".into()),
        Tok::Dollar,
        Tok::Var("left"),
        Tok::Var("left_on"),
        Tok::DollarVar("left"),
        Tok::DollarVar("left_subquery"),
    ];
    let mut exhaustive = 0;
    let k = alphabet.len();
    for len in 0..=4u32 {
        for mut code in 0..k.pow(len) {
            let mut toks = Vec::new();
            for _ in 0..len {
                toks.push(alphabet[code % k].clone());
                code /= k;
            }
            if well_formed(&toks) {
                check_escape(&toks)?;
                exhaustive += 1;
            }
        }
    }
    let tok = prop_oneof![
        "[ a-z\",.:\\[\\]{}()]{1,4}".prop_map(Tok::Lit),
        Just(Tok::Dollar),
        prop::sample::select(NAMES.to_vec()).prop_map(Tok::Var),
        prop::sample::select(NAMES.to_vec()).prop_map(Tok::DollarVar),
    ];
    let mut runner = TestRunner::new(Config {
        cases: 2_000,
        failure_persistence: None,
        ..Config::default()
    });
    runner
        .run(&prop::collection::vec(tok, 0..12), |toks| {
            if well_formed(&toks) {
                check_escape(&toks).map_err(TestCaseError::fail)?;
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    let rendered = substitute(
        &Template::parse(r#""$eq": ["$$left", $right]"#),
        &VarBindings::new()
            .with("left", "lang")
            .with("right", "\"en\""),
    )
    .map_err(|e| e.to_string())?;
    ensure(rendered == r#""$eq": ["$lang", "en"]"#, || rendered.clone())?;
    Ok(format!(
        "{exhaustive} enumerated and 2,000 random templates agree with the token oracle"
    ))
}

// HTTP connector ----------------------------------------------------------

enum Reply {
    Status(u16, &'static str),
    Stall(Duration),
}

/// Serves one request and hands back what it received.
fn stub(reply: Reply) -> (String, thread::JoinHandle<(Vec<String>, String)>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let handle = thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut headers = Vec::new();
        let mut len = 0;
        loop {
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            let line = line.trim_end().to_string();
            if line.is_empty() {
                break;
            }
            if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                len = v.trim().parse().unwrap();
            }
            headers.push(line);
        }
        let mut body = vec![0; len];
        reader.read_exact(&mut body).unwrap();
        let mut stream = stream;
        match reply {
            Reply::Status(code, text) => {
                let _ = write!(
                    stream,
                    "HTTP/1.1 {code} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
                    text.len()
                );
            }
            Reply::Stall(d) => thread::sleep(d),
        }
        (headers, String::from_utf8(body).unwrap())
    });
    (url, handle)
}

fn http_frame(url: &str, timeout_ms: u64) -> Result<Frame, String> {
    let mut cfg = HttpEndpointConfig::new(url);
    cfg.timeout_ms = timeout_ms;
    cfg.auth_header = Some("Authorization: Bearer t0k".into());
    let conn = HttpConnector::new(cfg).map_err(|e| e.to_string())?;
    Frame::scan("Test", "Users", pack("sqlpp"), Arc::new(conn)).map_err(|e| e.to_string())
}

fn http_connector() -> Outcome {
    let (url, server) = stub(Reply::Status(
        200,
        r#"[{"name":"a","address":{"city":"x"}},{"name":"b"}]"#,
    ));
    let (_, s5) =
        table1_chain(pack("sqlpp"), Arc::new(DryRunConnector::new())).map_err(|e| e.to_string())?;
    let f = s5.with_connector(Arc::new({
        let mut cfg = HttpEndpointConfig::new(&url);
        cfg.auth_header = Some("Authorization: Bearer t0k".into());
        HttpConnector::new(cfg).map_err(|e| e.to_string())?
    }));
    let rows = f.head(10).map_err(|e| e.to_string())?;
    let (headers, body) = server.join().unwrap();
    ensure(body == f.head_request(10).unwrap().render(), || {
        format!("server saw {body:?}")
    })?;
    ensure(
        headers
            .iter()
            .any(|h| h.eq_ignore_ascii_case("Authorization: Bearer t0k")),
        || format!("{headers:?}"),
    )?;
    ensure(
        rows.len() == 2 && rows.rows[0].get("address.city") == &Value::Str("x".into()),
        || format!("{rows:?}"),
    )?;
    ensure(rows.rows[1].get("address.city").is_missing(), || {
        "absent field not missing".into()
    })?;

    let (url, server) = stub(Reply::Status(500, "engine on fire"));
    let f = http_frame(&url, 5_000)?;
    let err = f.count().expect_err("500 must fail");
    server.join().unwrap();
    let sent = f.count_request().unwrap().render();
    ensure(err.query() == Some(sent.as_str()), || {
        format!("query not attached: {err}")
    })?;
    ensure(err.to_string().contains(&sent), || {
        "query not in message".into()
    })?;
    match &err {
        FrameError::Action {
            source: ConnectorError::Status { code: 500, body },
            ..
        } if body.contains("engine on fire") => {}
        other => return Err(format!("unexpected error {other:?}")),
    }

    let timeout_ms = 300;
    let (url, server) = stub(Reply::Stall(Duration::from_millis(3_000)));
    let f = http_frame(&url, timeout_ms)?;
    let t0 = Instant::now();
    let err = f.count().expect_err("stalled server must time out");
    let waited = t0.elapsed();
    ensure(
        matches!(
            err,
            FrameError::Action {
                source: ConnectorError::Timeout { .. },
                ..
            }
        ),
        || format!("expected a timeout, got {err:?}"),
    )?;
    ensure(waited < Duration::from_millis(2 * timeout_ms), || {
        format!("waited {waited:?}")
    })?;
    drop(server);
    Ok(format!(
        "round trip of 2 rows, 500 reported with its query, {timeout_ms} ms timeout after {} ms",
        waited.as_millis()
    ))
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 8] = [
        ("golden translations", golden_translations),
        ("Table I replay", table1_replay),
        ("differential semantics", differential),
        ("laziness", laziness),
        ("generator properties", generator),
        ("pack validation", pack_validation),
        ("escaping", escaping),
        ("HTTP connector", http_connector),
    ];
    let mut failed = Vec::new();
    for (name, check) in criteria {
        match std::panic::catch_unwind(check) {
            Ok(Ok(detail)) => println!("PASS {name}: {detail}"),
            Ok(Err(why)) => {
                println!("FAIL {name}: {why}");
                failed.push(name);
            }
            Err(_) => {
                println!("FAIL {name}: panicked");
                failed.push(name);
            }
        }
    }
    assert!(failed.is_empty(), "failed: {}", failed.join(", "));
}
