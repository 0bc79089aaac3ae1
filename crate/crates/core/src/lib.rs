//! Lazy dataframe operations compiled to SQL, SQL++, Cypher and aggregation
//! pipelines.
//!
//! A [`frame::Frame`] holds a query, not data. Transformations return a new
//! frame whose query wraps (or, for pipelines, extends) the parent's query;
//! actions hand the final query to a [`connector::Connector`]. The text of
//! every query comes from a [`rewrite::LanguagePack`], so a new target
//! language is a new configuration file rather than new code.
//!
//! ```
//! use std::sync::Arc;
//! use framequery::connector::DryRunConnector;
//! use framequery::frame::{Frame, Operand};
//! use framequery::packs::load_builtin;
//!
//! let pack = Arc::new(load_builtin("sqlpp").unwrap());
//! let af = Frame::scan("Test", "Users", pack, Arc::new(DryRunConnector::new())).unwrap();
//! let mask = af.col("lang").unwrap().eq("en").unwrap();
//! let q = af.filter(&mask).unwrap();
//! assert!(q.query_text().contains("WHERE lang = 'en'"));
//! ```

pub mod bench;
pub mod connector;
pub mod datagen;
pub mod exec;
pub mod frame;
pub mod packs;
pub mod rewrite;
pub mod value;

pub use frame::{Frame, FrameError, Operand};
pub use rewrite::LanguagePack;
pub use value::{Record, Table, Value};
