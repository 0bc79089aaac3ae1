//! Builds `af[af['lang'] == 'en'][['name', 'address']].head(10)` step by step
//! and prints the query every step produces in each built-in language.
//!
//! ```text
//! cargo run --example table1_chain
//! ```

use std::sync::Arc;

use framequery::connector::DryRunConnector;
use framequery::packs::{self, BUILTIN_NAMES};
use framequery::Frame;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for name in BUILTIN_NAMES {
        let pack = Arc::new(packs::load_builtin(name)?);
        let af = Frame::scan("Test", "Users", pack, Arc::new(DryRunConnector::new()))?;
        let lang = af.col("lang")?;
        let is_en = lang.eq("en")?;
        let english = af.filter(&is_en)?;
        let picked = english.project(&["name", "address"])?;
        let head = picked.head_request(10)?;

        println!("==== {name}");
        for (i, q) in [&af, &lang, &is_en, &english, &picked].iter().enumerate() {
            println!("-- {}\n{}", i + 1, q.query_text());
        }
        // what a connector actually receives
        println!("-- 6\n{}\n", head.render());
    }
    Ok(())
}
