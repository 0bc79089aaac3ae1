//! A language pack is a plain text file. This one starts from the SQL pack
//! and swaps a few rules, then checks it before use.
//!
//! ```text
//! cargo run --example custom_pack
//! ```

use std::sync::Arc;

use framequery::connector::DryRunConnector;
use framequery::packs::{self, PackCatalog};
use framequery::rewrite::validate_pack;
use framequery::Frame;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let src = packs::builtin_source("sql")
        .unwrap()
        .replace("name = sql\n", "name = tsql\n")
        .replace("LIMIT $num;", "OFFSET 0 ROWS FETCH NEXT $num ROWS ONLY;")
        .replace("upper($attribute)", "UPPER($attribute)");

    let pack = packs::load_pack_str(&src)?;
    let rules: usize = pack.section_names().map(|s| pack.keys(s).count()).sum();
    println!("{rules} rules, {} diagnostics", validate_pack(&pack).len());

    let mut catalog = PackCatalog::with_builtins();
    let pack = catalog.register(pack)?;
    let df = Frame::scan("dbo", "orders", pack, Arc::new(DryRunConnector::new()))?;
    let q = df
        .filter(&df.col("total")?.gt(100)?)?
        .project(&["id", "total"])?
        .head_request(20)?;
    println!("{}", q.render());

    // a broken pack is rejected with the missing rule named
    let broken = src.replace("isna = $statement IS NULL\n", "");
    if let Err(e) = packs::load_pack_str(&broken) {
        println!("\nrejected: {e}");
    }
    Ok(())
}
