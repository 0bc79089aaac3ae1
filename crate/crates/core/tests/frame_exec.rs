//! Frame chains executed by the local engines, checked against values worked
//! out by hand from a small fixture.

use std::sync::{Arc, Mutex};

use framequery::connector::LocalConnector;
use framequery::exec::Catalog;
use framequery::frame::{AggFunc, ArithOp, Conversion};
use framequery::packs;
use framequery::{Frame, Record, Table, Value};

const EXECUTABLE: [&str; 3] = ["sql", "sqlpp", "mongo"];

// Pipelines compare with a total order instead of three-valued logic: an
// absent or null field is "not equal" to a string, `$lt null` only catches
// absent fields, and `$sum: 1` counts documents rather than values.
fn pipeline(p: &str) -> bool {
    p == "mongo"
}

fn users() -> Table {
    let row = |id: i64, lang: Option<Value>, age: Option<i64>, name: &str| {
        let mut r = Record::from_pairs([("id", Value::Int(id)), ("name", Value::Str(name.into()))]);
        if let Some(l) = lang {
            r.set("lang", l);
        }
        if let Some(a) = age {
            r.set("age", Value::Int(a));
        }
        r
    };
    Table::new(vec![
        row(1, Some(Value::Str("en".into())), Some(30), "ann"),
        row(2, Some(Value::Str("fr".into())), Some(40), "bob"),
        row(3, Some(Value::Str("en".into())), None, "cy"),
        row(4, Some(Value::Null), Some(20), "dee"),
        row(5, None, Some(50), "eve"),
    ])
}

fn orders() -> Table {
    Table::new(
        [(1, 10), (1, 20), (2, 5), (9, 1)]
            .into_iter()
            .map(|(u, amt)| {
                Record::from_pairs([("uid", Value::Int(u)), ("amount", Value::Int(amt))])
            })
            .collect(),
    )
}

fn frames(pack: &str) -> (Frame, Frame, Arc<Mutex<Catalog>>) {
    let p = Arc::new(packs::load_builtin(pack).unwrap());
    let mut catalog = Catalog::new();
    catalog.insert("app", "users", users());
    catalog.insert("app", "orders", orders());
    let catalog = Arc::new(Mutex::new(catalog));
    let conn = Arc::new(LocalConnector::for_pack(&p, catalog.clone()).unwrap());
    (
        Frame::scan("app", "users", p.clone(), conn.clone()).unwrap(),
        Frame::scan("app", "orders", p, conn).unwrap(),
        catalog,
    )
}

fn ints(t: &Table, col: &str) -> Vec<i64> {
    let mut v: Vec<i64> = t.column(col).iter().filter_map(Value::as_i64).collect();
    v.sort();
    v
}

#[test]
fn filter_and_project() {
    for p in EXECUTABLE {
        let (df, _, _) = frames(p);
        let en = df
            .filter(&df.col("lang").unwrap().eq("en").unwrap())
            .unwrap();
        assert_eq!(en.count().unwrap(), 2, "{p}");
        let t = en.project(&["name", "id"]).unwrap().collect().unwrap();
        assert_eq!(ints(&t, "id"), vec![1, 3], "{p}");
        assert!(t.rows.iter().all(|r| !r.contains("lang")), "{p}");
    }
}

#[test]
fn comparisons_with_unknown_values() {
    for p in EXECUTABLE {
        let (df, _, _) = frames(p);
        let ne = df
            .filter(&df.col("lang").unwrap().ne("en").unwrap())
            .unwrap();
        let want = if pipeline(p) { vec![2, 4, 5] } else { vec![2] };
        assert_eq!(ints(&ne.collect().unwrap(), "id"), want, "{p}");
        let old = df.filter(&df.col("age").unwrap().gt(25).unwrap()).unwrap();
        assert_eq!(ints(&old.collect().unwrap(), "id"), vec![1, 2, 5], "{p}");
    }
}

#[test]
fn null_checks_by_dialect() {
    for p in EXECUTABLE {
        let (df, _, _) = frames(p);
        let na = df.filter(&df.col("lang").unwrap().isna().unwrap()).unwrap();
        let want = if pipeline(p) { vec![5] } else { vec![4, 5] };
        assert_eq!(ints(&na.collect().unwrap(), "id"), want, "{p}");
        let present = df.filter(&df.col("age").unwrap().notna().unwrap()).unwrap();
        assert_eq!(present.count().unwrap(), 4, "{p}");
    }
}

#[test]
fn boolean_combinations() {
    for p in EXECUTABLE {
        let (df, _, _) = frames(p);
        let c = |n: &str| df.col(n).unwrap();
        let mask = c("lang")
            .eq("en")
            .unwrap()
            .or(&c("age").ge(50).unwrap())
            .unwrap()
            .and(&c("id").ne(3).unwrap())
            .unwrap();
        assert_eq!(
            ints(&df.filter(&mask).unwrap().collect().unwrap(), "id"),
            vec![1, 5],
            "{p}"
        );
        let not_en = df
            .filter(&c("lang").eq("en").unwrap().not().unwrap())
            .unwrap();
        let want = if pipeline(p) { vec![2, 4, 5] } else { vec![2] };
        assert_eq!(ints(&not_en.collect().unwrap(), "id"), want, "{p}");
    }
}

#[test]
fn sort_and_head() {
    for p in EXECUTABLE {
        let (df, _, _) = frames(p);
        let top = df.sort("id", true).unwrap().head(2).unwrap();
        assert_eq!(top.column("id"), vec![Value::Int(5), Value::Int(4)], "{p}");
        let asc = df.sort("age", false).unwrap().collect().unwrap();
        let present: Vec<i64> = asc.column("age").iter().filter_map(Value::as_i64).collect();
        assert_eq!(present, vec![20, 30, 40, 50], "{p}");
    }
}

#[test]
fn aggregates() {
    for p in EXECUTABLE {
        let (df, _, _) = frames(p);
        assert_eq!(
            df.agg_value(AggFunc::Max, "age").unwrap(),
            Value::Int(50),
            "{p}"
        );
        assert_eq!(
            df.agg_value(AggFunc::Min, "age").unwrap(),
            Value::Int(20),
            "{p}"
        );
        let avg = df.agg_value(AggFunc::Avg, "age").unwrap().as_f64().unwrap();
        assert!((avg - 35.0).abs() < 1e-9, "{p}: {avg}");
        // population standard deviation of 30, 40, 20, 50
        let std = df.agg_value(AggFunc::Std, "age").unwrap().as_f64().unwrap();
        assert!((std - 125f64.sqrt()).abs() < 1e-9, "{p}: {std}");
        let n = if pipeline(p) { 5 } else { 4 };
        assert_eq!(
            df.agg_value(AggFunc::Count, "age").unwrap().as_i64(),
            Some(n),
            "{p}"
        );
        let none = df.filter(&df.col("id").unwrap().gt(100).unwrap()).unwrap();
        assert_eq!(
            none.agg_value(AggFunc::Max, "age").unwrap(),
            Value::Null,
            "{p}"
        );
        assert_eq!(none.count().unwrap(), 0, "{p}");
    }
}

#[test]
fn group_by() {
    for p in EXECUTABLE {
        let (_, orders, _) = frames(p);
        let g = orders
            .groupby_agg("uid", AggFunc::Max, "amount")
            .unwrap()
            .collect()
            .unwrap();
        let mut pairs: Vec<(i64, i64)> = g
            .rows
            .iter()
            .map(|r| {
                let key = r.get("uid").as_i64().unwrap();
                let val = r
                    .iter()
                    .find(|(n, _)| *n != "uid")
                    .unwrap()
                    .1
                    .as_i64()
                    .unwrap();
                (key, val)
            })
            .collect();
        pairs.sort();
        assert_eq!(pairs, vec![(1, 20), (2, 5), (9, 1)], "{p}");
    }
}

#[test]
fn join_on_key() {
    for p in EXECUTABLE {
        let (users, orders, _) = frames(p);
        let j = orders.join(&users, "uid", "id").unwrap();
        assert_eq!(j.count().unwrap(), 3, "{p}");
        assert!(orders.merge(&users, "uid", "id", "left").is_err(), "{p}");
    }
}

#[test]
fn arithmetic_and_conversion() {
    for p in EXECUTABLE {
        let (df, _, _) = frames(p);
        let doubled = df
            .col("age")
            .unwrap()
            .arith(ArithOp::Mul, 2)
            .unwrap()
            .collect()
            .unwrap();
        let mut got: Vec<i64> = doubled
            .rows
            .iter()
            .filter_map(|r| r.present().next().and_then(|(_, v)| v.as_i64()))
            .collect();
        got.sort();
        assert_eq!(got, vec![40, 60, 80, 100], "{p}");
        let flags = df
            .col("lang")
            .unwrap()
            .eq("en")
            .unwrap()
            .astype(Conversion::ToInt)
            .unwrap();
        let t = flags.collect().unwrap();
        let ones = t
            .rows
            .iter()
            .filter(|r| r.present().any(|(_, v)| v == &Value::Int(1)))
            .count();
        assert_eq!(ones, 2, "{p}");
    }
}

#[test]
fn upper_case() {
    for p in EXECUTABLE {
        let (df, _, _) = frames(p);
        let t = df.col("name").unwrap().upper().unwrap().head(5).unwrap();
        let mut names: Vec<String> = t
            .rows
            .iter()
            .filter_map(|r| {
                r.present()
                    .next()
                    .and_then(|(_, v)| v.as_str().map(str::to_string))
            })
            .collect();
        names.sort();
        assert_eq!(names, ["ANN", "BOB", "CY", "DEE", "EVE"], "{p}");
    }
}

#[test]
fn describe_reports_each_statistic() {
    for p in EXECUTABLE {
        let (df, _, _) = frames(p);
        let t = df.describe(&["age"]).unwrap().collect().unwrap();
        assert_eq!(t.len(), 1, "{p}");
        let row = &t.rows[0];
        let find = |needle: &str| {
            row.iter()
                .find(|(n, _)| n.contains(needle))
                .map(|(_, v)| v.clone())
                .unwrap_or_else(|| panic!("{p}: no {needle} in {row:?}"))
        };
        assert_eq!(find("min").as_i64(), Some(20), "{p}");
        assert_eq!(find("max").as_i64(), Some(50), "{p}");
        assert_eq!(
            find("count").as_i64(),
            Some(if pipeline(p) { 5 } else { 4 }),
            "{p}"
        );
        assert!((find("avg").as_f64().unwrap() - 35.0).abs() < 1e-9, "{p}");
        assert!(
            (find("std").as_f64().unwrap() - 125f64.sqrt()).abs() < 1e-9,
            "{p}"
        );
    }
}

#[test]
fn dummies_one_column_per_value() {
    for p in EXECUTABLE {
        let (df, _, _) = frames(p);
        let d = df.get_dummies("lang").unwrap();
        let t = d.collect().unwrap();
        assert_eq!(t.len(), 5, "{p}");
        let mut cols = t.column_names();
        cols.sort();
        assert_eq!(cols, ["lang_en", "lang_fr"], "{p}");
        let en: i64 = t.column("lang_en").iter().filter_map(Value::as_i64).sum();
        assert_eq!(en, 2, "{p}");
        assert!(df.get_dummies_with_limit("name", 3).is_err(), "{p}");
    }
}

#[test]
fn persist_then_read_back() {
    for p in EXECUTABLE {
        let (df, _, catalog) = frames(p);
        let en = df
            .filter(&df.col("lang").unwrap().eq("en").unwrap())
            .unwrap();
        en.persist("english").unwrap();
        assert_eq!(
            catalog
                .lock()
                .unwrap()
                .table("app", "english")
                .unwrap()
                .len(),
            2,
            "{p}"
        );
        let again =
            Frame::scan("app", "english", df.pack().clone(), df.connector().clone()).unwrap();
        assert_eq!(again.count().unwrap(), 2, "{p}");
        let err = en.persist("english").unwrap_err();
        assert!(err.query().is_some(), "{p}");
    }
}

#[test]
fn unknown_collection_is_reported_with_query() {
    for p in EXECUTABLE {
        let (df, _, _) = frames(p);
        let ghost = Frame::scan("app", "ghost", df.pack().clone(), df.connector().clone()).unwrap();
        let err = ghost.count().unwrap_err();
        assert!(err.to_string().contains("ghost"), "{p}: {err}");
        assert!(err.query().unwrap().contains("ghost"), "{p}");
    }
}
