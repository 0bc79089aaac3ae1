//! Runs the 13 benchmark expressions on the SQL++ engine and compares each
//! result with a direct evaluation over the same rows.
//!
//! ```text
//! cargo run --release --example bench
//! ```

use std::sync::{Arc, Mutex};

use framequery::bench::{self, BenchParams};
use framequery::connector::LocalConnector;
use framequery::datagen::{self, GeneratorSpec};
use framequery::exec::Catalog;
use framequery::packs;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let table =
        datagen::generate(&GeneratorSpec::new(10_000, 1).with_missing(0.1, &["tenPercent"]))?;
    let mut catalog = Catalog::new();
    catalog.insert("", "data", table.clone());
    let pack = Arc::new(packs::load_builtin("sqlpp")?);
    let local = LocalConnector::for_pack(&pack, Arc::new(Mutex::new(catalog)))?;

    let report = bench::run_benchmark(&BenchParams {
        pack,
        connector: Arc::new(local),
        connector_name: "local".into(),
        namespace: String::new(),
        collection: "data".into(),
        join_collection: None,
        exprs: bench::EXPRESSION_IDS.collect(),
        repeat: 3,
        seed: 1,
        oracle_table: Some(table),
        golden_dir: None,
    });

    println!(
        "{:>3} {:<22} {:>10} {:>10}  result",
        "id", "expression", "total ms", "expr ms"
    );
    for e in &report.expressions {
        println!(
            "{:>3} {:<22} {:>10.2} {:>10.2}  {} {}",
            e.id,
            e.name,
            e.total_ms,
            e.expression_ms,
            e.result.as_deref().unwrap_or("-"),
            if e.oracle_match == Some(true) {
                "ok"
            } else {
                "MISMATCH"
            },
        );
    }
    Ok(())
}
