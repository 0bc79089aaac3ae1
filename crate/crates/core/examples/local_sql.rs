//! Runs frame operations against the in-memory SQL engine.
//!
//! ```text
//! cargo run --example local_sql
//! ```

use std::sync::{Arc, Mutex};

use framequery::connector::LocalConnector;
use framequery::exec::Catalog;
use framequery::frame::AggFunc;
use framequery::packs;
use framequery::{Frame, Record, Table, Value};

fn users() -> Table {
    let rows = [
        ("ann", "en", 31),
        ("bob", "fr", 45),
        ("cy", "en", 27),
        ("dee", "de", 38),
    ];
    Table::new(
        rows.iter()
            .map(|(name, lang, age)| {
                Record::from_pairs([
                    ("name", Value::Str(name.to_string())),
                    ("lang", Value::Str(lang.to_string())),
                    ("age", Value::Int(*age)),
                ])
            })
            .collect(),
    )
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut catalog = Catalog::new();
    catalog.insert("Test", "Users", users());
    let catalog = Arc::new(Mutex::new(catalog));

    for name in ["sql", "sqlpp"] {
        let pack = Arc::new(packs::load_builtin(name)?);
        let conn = Arc::new(LocalConnector::for_pack(&pack, catalog.clone())?);
        let df = Frame::scan("Test", "Users", pack, conn)?;

        let english = df.filter(&df.col("lang")?.eq("en")?)?;
        println!("[{name}] english speakers: {}", english.count()?);
        println!("[{name}] oldest: {:?}", df.agg_value(AggFunc::Max, "age")?);

        let by_lang = df.groupby_agg("lang", AggFunc::Avg, "age")?;
        println!("[{name}] query:\n{}", by_lang.collect_request()?.render());
        for row in by_lang.sort("lang", false)?.collect()?.rows {
            println!("  {row:?}");
        }
    }
    Ok(())
}
