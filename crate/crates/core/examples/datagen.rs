//! Generates a small Wisconsin relation with some `tenPercent` values
//! removed and prints the first rows as JSON lines.
//!
//! ```text
//! cargo run --example datagen
//! ```

use framequery::datagen::{self, GeneratorSpec};
use framequery::value::write_jsonl;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = GeneratorSpec::new(20, 7).with_missing(0.25, &["tenPercent"]);
    let table = datagen::generate(&spec)?;
    let absent = table
        .rows
        .iter()
        .filter(|r| !r.contains("tenPercent"))
        .count();
    println!("{} rows, {absent} without tenPercent", table.len());

    let jsonl = write_jsonl(&table);
    for line in String::from_utf8(jsonl)?.lines().take(3) {
        println!("{line}");
    }
    Ok(())
}
