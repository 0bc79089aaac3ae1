//! The four built-in language packs and loading of user packs.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use thiserror::Error;

use crate::rewrite::{parse_config, validate_pack, ConfigError, Diagnostic, LanguagePack};

pub const BUILTIN_NAMES: &[&str] = &["sqlpp", "sql", "mongo", "cypher"];

/// Source text of a built-in pack, as shipped under `packs/`.
pub fn builtin_source(name: &str) -> Option<&'static str> {
    Some(match name {
        "sqlpp" => include_str!("../packs/sqlpp.conf"),
        "sql" => include_str!("../packs/sql.conf"),
        "mongo" => include_str!("../packs/mongo.conf"),
        "cypher" => include_str!("../packs/cypher.conf"),
        _ => return None,
    })
}

#[derive(Debug, Error)]
pub enum PackError {
    #[error("unknown built-in pack `{0}` (expected one of sqlpp, sql, mongo, cypher)")]
    UnknownBuiltin(String),
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("pack failed validation: {}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Diagnostic>),
    #[error("pack name `{0}` is reserved for a built-in pack")]
    Reserved(String),
}

impl PackError {
    pub fn diagnostics(&self) -> &[Diagnostic] {
        match self {
            PackError::Invalid(d) | PackError::Config(ConfigError::Invalid(d)) => d,
            _ => &[],
        }
    }
}

pub fn load_builtin(name: &str) -> Result<LanguagePack, PackError> {
    let src = builtin_source(name).ok_or_else(|| PackError::UnknownBuiltin(name.to_string()))?;
    Ok(parse_config(src)?)
}

/// Parses and validates pack text; only a pack with zero diagnostics is
/// returned.
pub fn load_pack_str(text: &str) -> Result<LanguagePack, PackError> {
    let pack = parse_config(text)?;
    let diags = validate_pack(&pack);
    if diags.is_empty() {
        Ok(pack)
    } else {
        Err(PackError::Invalid(diags))
    }
}

pub fn load_user_pack(path: impl AsRef<Path>) -> Result<LanguagePack, PackError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| PackError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_pack_str(&text)
}

/// Built-in packs plus any user packs registered under non-reserved names.
#[derive(Debug, Clone)]
pub struct PackCatalog {
    packs: BTreeMap<String, Arc<LanguagePack>>,
}

impl PackCatalog {
    pub fn with_builtins() -> Self {
        let packs = BUILTIN_NAMES
            .iter()
            .map(|n| {
                let p = load_builtin(n).expect("built-in packs parse");
                (n.to_string(), Arc::new(p))
            })
            .collect();
        PackCatalog { packs }
    }

    pub fn get(&self, name: &str) -> Option<Arc<LanguagePack>> {
        self.packs.get(name).cloned()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.packs.keys().map(String::as_str)
    }

    pub fn register(&mut self, pack: LanguagePack) -> Result<Arc<LanguagePack>, PackError> {
        if BUILTIN_NAMES.contains(&pack.name.as_str()) {
            return Err(PackError::Reserved(pack.name));
        }
        let pack = Arc::new(pack);
        self.packs.insert(pack.name.clone(), pack.clone());
        Ok(pack)
    }

    pub fn load_path(&mut self, path: impl AsRef<Path>) -> Result<Arc<LanguagePack>, PackError> {
        self.register(load_user_pack(path)?)
    }
}

impl Default for PackCatalog {
    fn default() -> Self {
        Self::with_builtins()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rewrite::{build_rule, VarBindings};

    #[test]
    fn builtins_validate_cleanly() {
        for name in BUILTIN_NAMES {
            let pack = load_builtin(name).unwrap();
            assert_eq!(pack.name, *name);
            assert!(
                validate_pack(&pack).is_empty(),
                "{name}: {:?}",
                validate_pack(&pack)
            );
        }
    }

    #[test]
    fn cypher_scan_rule() {
        let pack = load_builtin("cypher").unwrap();
        let b = VarBindings::new().with("collection", "Users");
        assert_eq!(
            build_rule(&pack, "QUERIES", "q1", &b).unwrap(),
            "MATCH(t: Users)"
        );
    }

    #[test]
    fn mongo_limit_excludes_id() {
        let pack = load_builtin("mongo").unwrap();
        let src = pack.template("LIMIT", "limit").unwrap().to_source();
        assert!(src.contains(r#"{ "$$project": { "_id": 0 } }"#), "{src}");
    }

    #[test]
    fn sql_scan_source() {
        let pack = load_builtin("sql").unwrap();
        let src = pack.template("QUERIES", "q1").unwrap().to_source();
        assert_eq!(
            crate::rewrite::normalize_whitespace(&src),
            "SELECT * FROM $namespace.$collection"
        );
    }

    #[test]
    fn unknown_builtin() {
        assert!(matches!(
            load_builtin("prolog"),
            Err(PackError::UnknownBuiltin(_))
        ));
    }

    #[test]
    fn builtin_names_are_reserved() {
        let mut cat = PackCatalog::with_builtins();
        let pack = load_builtin("sql").unwrap();
        assert!(matches!(cat.register(pack), Err(PackError::Reserved(_))));
    }
}
