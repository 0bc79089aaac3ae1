//! `describe` and `get_dummies` are built from smaller rules. `describe` is
//! a single query; `get_dummies` first asks for the distinct values.
//!
//! ```text
//! cargo run --example describe_dummies
//! ```

use std::sync::{Arc, Mutex};

use framequery::connector::{Connector, LocalConnector, Phase, SpyConnector};
use framequery::datagen::{self, GeneratorSpec};
use framequery::exec::Catalog;
use framequery::packs;
use framequery::Frame;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut catalog = Catalog::new();
    catalog.insert("", "wisc", datagen::generate(&GeneratorSpec::new(500, 11))?);
    let pack = Arc::new(packs::load_builtin("sqlpp")?);
    let local = LocalConnector::for_pack(&pack, Arc::new(Mutex::new(catalog)))?;
    let spy = Arc::new(SpyConnector::new(local));
    let conn: Arc<dyn Connector> = spy.clone();
    let df = Frame::scan("", "wisc", pack, conn)?;

    let stats = df.describe(&["ten", "onePercent"])?;
    println!("{}\n", stats.query_text());
    for (name, value) in stats.collect()?.rows[0].iter() {
        println!("{name:>16} {value:?}");
    }

    spy.log().clear();
    let dummies = df.get_dummies("four")?;
    let t = dummies.head(4)?;
    println!("\ncolumns: {:?}", t.column_names());
    for r in &t.rows {
        println!("{r:?}");
    }
    println!("queries sent: {}", spy.log().count(Phase::Execute));
    Ok(())
}
