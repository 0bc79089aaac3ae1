//! Frames on the pipeline pack extend a stage list instead of nesting
//! subqueries. The local interpreter runs the result.
//!
//! ```text
//! cargo run --example pipeline
//! ```

use std::sync::{Arc, Mutex};

use framequery::connector::LocalConnector;
use framequery::datagen::{self, GeneratorSpec};
use framequery::exec::Catalog;
use framequery::frame::AggFunc;
use framequery::packs;
use framequery::Frame;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = datagen::generate(&GeneratorSpec::new(1_000, 3))?;
    let mut catalog = Catalog::new();
    catalog.insert("bench", "wisc", data);

    let pack = Arc::new(packs::load_builtin("mongo")?);
    let conn = Arc::new(LocalConnector::for_pack(
        &pack,
        Arc::new(Mutex::new(catalog)),
    )?);
    let df = Frame::scan("bench", "wisc", pack, conn)?;

    let small = df.filter(&df.col("onePercent")?.lt(3)?)?;
    let grouped = small.groupby_agg("twenty", AggFunc::Max, "unique1")?;

    for (i, stage) in grouped
        .query()
        .stages()
        .unwrap_or_default()
        .iter()
        .enumerate()
    {
        println!("stage {i}: {stage}");
    }
    println!();
    let mut rows = grouped.collect()?.rows;
    rows.sort_by_key(|r| r.get("twenty").as_i64());
    for r in rows {
        println!("{r:?}");
    }
    Ok(())
}
