//! Wisconsin benchmark data.
//!
//! Every numeric attribute is a modular function of `unique1`, a seeded
//! permutation of `0..MAX`, so selectivities are exact. Missing values are
//! injected afterwards by removing attributes from an exact number of rows.

use std::fs;
use std::io;
use std::path::PathBuf;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::value::{write_jsonl, Record, Table, Value};

/// Attribute names in output order.
pub const ATTRIBUTES: [&str; 16] = [
    "unique1",
    "unique2",
    "two",
    "four",
    "ten",
    "twenty",
    "onePercent",
    "tenPercent",
    "twentyPercent",
    "fiftyPercent",
    "unique3",
    "evenOnePercent",
    "oddOnePercent",
    "stringu1",
    "stringu2",
    "string4",
];

const STRING_LEN: usize = 52;
const SIGNIFICANT: usize = 7;
const CYCLE: [char; 4] = ['A', 'H', 'O', 'V'];

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("invalid generator settings: {0}")]
    Spec(String),
    #[error("{0} does not fit in seven base-26 digits")]
    Range(u64),
    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSpec {
    pub max: u64,
    pub seed: u64,
    pub missing_rate: f64,
    pub missing_attrs: Vec<String>,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec {
            max: 1000,
            seed: 0,
            missing_rate: 0.0,
            missing_attrs: vec!["tenPercent".to_string()],
        }
    }
}

impl GeneratorSpec {
    pub fn new(max: u64, seed: u64) -> Self {
        GeneratorSpec {
            max,
            seed,
            ..Default::default()
        }
    }

    pub fn with_missing(mut self, rate: f64, attrs: &[&str]) -> Self {
        self.missing_rate = rate;
        self.missing_attrs = attrs.iter().map(|a| a.to_string()).collect();
        self
    }

    pub fn validate(&self) -> Result<(), DatagenError> {
        if self.max == 0 {
            return Err(DatagenError::Spec("MAX must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.missing_rate) {
            return Err(DatagenError::Spec(format!(
                "missing rate {} is outside [0, 1]",
                self.missing_rate
            )));
        }
        for a in &self.missing_attrs {
            if !ATTRIBUTES.contains(&a.as_str()) {
                return Err(DatagenError::UnknownAttribute(a.clone()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StringRole {
    /// `stringu1` and `stringu2`.
    Unique,
    /// `string4`.
    Cyclic,
}

/// `Unique`: seven base-26 letters of `u`, most significant first, padded
/// to 52 characters with `x`. `Cyclic`: one of A, H, O, V picked by
/// `cycle_index`, padded the same way.
pub fn derive_string(u: u64, role: StringRole, cycle_index: u64) -> Result<String, DatagenError> {
    let mut s = String::with_capacity(STRING_LEN);
    match role {
        StringRole::Unique => {
            if u >= 26u64.pow(SIGNIFICANT as u32) {
                return Err(DatagenError::Range(u));
            }
            let mut digits = [b'A'; SIGNIFICANT];
            let mut rest = u;
            for d in digits.iter_mut().rev() {
                *d = b'A' + (rest % 26) as u8;
                rest /= 26;
            }
            s.extend(digits.iter().map(|&b| b as char));
        }
        StringRole::Cyclic => s.push(CYCLE[(cycle_index % 4) as usize]),
    }
    while s.len() < STRING_LEN {
        s.push('x');
    }
    Ok(s)
}

/// One row of the relation for the given keys.
pub fn row(unique1: u64, unique2: u64) -> Result<Record, DatagenError> {
    let u = unique1 as i64;
    let one_percent = u % 100;
    Ok(Record::from_pairs([
        ("unique1", Value::Int(u)),
        ("unique2", Value::Int(unique2 as i64)),
        ("two", Value::Int(u % 2)),
        ("four", Value::Int(u % 4)),
        ("ten", Value::Int(u % 10)),
        ("twenty", Value::Int(u % 20)),
        ("onePercent", Value::Int(one_percent)),
        ("tenPercent", Value::Int(u % 10)),
        ("twentyPercent", Value::Int(u % 5)),
        ("fiftyPercent", Value::Int(u % 2)),
        ("unique3", Value::Int(u)),
        ("evenOnePercent", Value::Int(one_percent * 2)),
        ("oddOnePercent", Value::Int(one_percent * 2 + 1)),
        (
            "stringu1",
            Value::Str(derive_string(unique1, StringRole::Unique, 0)?),
        ),
        (
            "stringu2",
            Value::Str(derive_string(unique2, StringRole::Unique, 0)?),
        ),
        (
            "string4",
            Value::Str(derive_string(0, StringRole::Cyclic, unique2)?),
        ),
    ]))
}

/// The seeded permutation used for `unique1`.
pub fn permutation(max: u64, seed: u64) -> Vec<u64> {
    let mut keys: Vec<u64> = (0..max).collect();
    keys.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    keys
}

pub fn generate(spec: &GeneratorSpec) -> Result<Table, DatagenError> {
    spec.validate()?;
    let rows = permutation(spec.max, spec.seed)
        .into_iter()
        .enumerate()
        .map(|(i, u1)| row(u1, i as u64))
        .collect::<Result<Vec<_>, _>>()?;
    let table = Table::new(rows).with_columns(ATTRIBUTES.iter().map(|a| a.to_string()).collect());
    let attrs: Vec<&str> = spec.missing_attrs.iter().map(String::as_str).collect();
    inject_missing(table, &attrs, spec.missing_rate, spec.seed)
}

/// Number of rows that lose an attribute: `round(rate * rows)`.
pub fn missing_count(rows: usize, rate: f64) -> usize {
    ((rate * rows as f64).round() as usize).min(rows)
}

// FNV-1a, so the per-attribute stream does not depend on attribute order.
fn attr_seed(seed: u64, attr: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in attr.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    seed ^ h
}

/// Removes each listed attribute from exactly `round(rate * rows)` rows. The
/// rows are chosen independently per attribute from `(seed, attribute)`.
pub fn inject_missing(
    mut table: Table,
    attrs: &[&str],
    rate: f64,
    seed: u64,
) -> Result<Table, DatagenError> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(DatagenError::Spec(format!(
            "missing rate {rate} is outside [0, 1]"
        )));
    }
    for attr in attrs {
        if !ATTRIBUTES.contains(attr) {
            return Err(DatagenError::UnknownAttribute(attr.to_string()));
        }
        let n = table.rows.len();
        let k = missing_count(n, rate);
        let mut rng = ChaCha8Rng::seed_from_u64(attr_seed(seed, attr));
        for i in index::sample(&mut rng, n, k) {
            table.rows[i].remove(attr);
        }
    }
    Ok(table)
}

/// The dataset as JSON lines, one record per line.
pub fn generate_jsonl(spec: &GeneratorSpec) -> Result<Vec<u8>, DatagenError> {
    Ok(write_jsonl(&generate(spec)?))
}

/// `datagen` command line.
#[derive(Debug, Clone, clap::Args)]
pub struct DatagenArgs {
    /// Number of rows (MAX).
    #[arg(long, default_value_t = 1000)]
    pub max: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fraction of rows that lose each of the missing attributes.
    #[arg(long, default_value_t = 0.0)]
    pub missing_rate: f64,
    #[arg(long, value_delimiter = ',', default_value = "tenPercent")]
    pub missing_attrs: Vec<String>,
    /// Output file; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl DatagenArgs {
    pub fn spec(&self) -> GeneratorSpec {
        GeneratorSpec {
            max: self.max,
            seed: self.seed,
            missing_rate: self.missing_rate,
            missing_attrs: self.missing_attrs.clone(),
        }
    }
}

pub fn run_cli(args: &DatagenArgs) -> Result<(), DatagenError> {
    let bytes = generate_jsonl(&args.spec())?;
    match &args.out {
        Some(path) => fs::write(path, bytes)?,
        None => io::Write::write_all(&mut io::stdout().lock(), &bytes)?,
    }
    Ok(())
}
