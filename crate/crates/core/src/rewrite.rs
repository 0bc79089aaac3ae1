//! Rewrite rules: the configuration-file grammar, templates and variable
//! substitution.
//!
//! A language pack is an INI-like file. Each `key = value` entry is a
//! template made of literal text and `$variable` markers. Substitution is a
//! single pass: bound values are copied verbatim and never re-scanned.
//!
//! Escaping: `$$` emits one literal `$`. When the text right after `$$` is a
//! variable name the variable is still substituted, so `"$$left"` with
//! `left = lang` renders as `"$lang"`, the field-reference spelling the
//! pipeline dialect needs.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use thiserror::Error;

/// Every variable a template may reference.
pub const VOCABULARY: &[&str] = &[
    "agg",
    "agg_expr",
    "agg_func",
    "alias",
    "attribute",
    "attribute_alias",
    "collection",
    "func",
    "group_attr",
    "join_var",
    "left",
    "left_collection",
    "left_on",
    "left_source",
    "left_subquery",
    "namespace",
    "num",
    "right",
    "right_collection",
    "right_on",
    "right_source",
    "right_subquery",
    "right_subquery_or_collection",
    "sort_asc_attr",
    "sort_desc_attr",
    "statement",
    "subquery",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Token {
    Literal(String),
    Var(String),
    /// A `$name` outside of any quoted string that is not in the vocabulary.
    /// Kept so validation can report it; rendering fails on it.
    Unknown(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Template {
    tokens: Vec<Token>,
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

fn longest_var_prefix(rest: &str) -> Option<&'static str> {
    VOCABULARY
        .iter()
        .filter(|name| rest.starts_with(*name))
        .max_by_key(|name| name.len())
        .copied()
}

impl Template {
    pub fn new(tokens: Vec<Token>) -> Self {
        let mut t = Template { tokens: Vec::new() };
        for tok in tokens {
            t.push(tok);
        }
        t
    }

    fn push(&mut self, tok: Token) {
        if let Token::Literal(s) = &tok {
            if s.is_empty() {
                return;
            }
            if let Some(Token::Literal(prev)) = self.tokens.last_mut() {
                prev.push_str(s);
                return;
            }
        }
        self.tokens.push(tok);
    }

    /// Tokenizes template source. Unknown `$names` inside a double-quoted
    /// string are literal text (pipeline operators such as `"$match"`);
    /// outside quotes they become [`Token::Unknown`].
    pub fn parse(src: &str) -> Template {
        let mut t = Template::default();
        let mut lit = String::new();
        let mut in_quote = false;
        let mut escaped = false;
        let mut i = 0;
        while i < src.len() {
            let rest = &src[i..];
            let c = rest.chars().next().unwrap_or_default();
            if c == '"' && !escaped {
                in_quote = !in_quote;
            }
            escaped = c == '\\' && !escaped;
            if c != '$' {
                lit.push(c);
                i += c.len_utf8();
                continue;
            }
            if let Some(after) = rest.strip_prefix("$$") {
                lit.push('$');
                match longest_var_prefix(after) {
                    Some(name) => {
                        t.push(Token::Literal(std::mem::take(&mut lit)));
                        t.push(Token::Var(name.to_string()));
                        i += 2 + name.len();
                    }
                    None => i += 2,
                }
                continue;
            }
            let after = &rest[1..];
            if let Some(name) = longest_var_prefix(after) {
                t.push(Token::Literal(std::mem::take(&mut lit)));
                t.push(Token::Var(name.to_string()));
                i += 1 + name.len();
                continue;
            }
            let ident: String = after.chars().take_while(|c| is_ident_char(*c)).collect();
            if ident.is_empty() || in_quote {
                lit.push('$');
                i += 1;
                continue;
            }
            t.push(Token::Literal(std::mem::take(&mut lit)));
            i += 1 + ident.len();
            t.push(Token::Unknown(ident));
        }
        t.push(Token::Literal(lit));
        t
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn variables(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().filter_map(|t| match t {
            Token::Var(v) => Some(v.as_str()),
            _ => None,
        })
    }

    pub fn unknown_variables(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().filter_map(|t| match t {
            Token::Unknown(v) => Some(v.as_str()),
            _ => None,
        })
    }

    pub fn uses(&self, var: &str) -> bool {
        self.variables().any(|v| v == var)
    }

    /// Source text that parses back to this template.
    ///
    /// A literal `$` written back as `$$` only round-trips when a variable or
    /// a non-name character follows it, which holds for every template built
    /// by [`Template::parse`].
    pub fn to_source(&self) -> String {
        let mut out = String::new();
        for tok in &self.tokens {
            match tok {
                Token::Literal(s) => out.push_str(&s.replace('$', "$$")),
                Token::Var(v) => {
                    out.push('$');
                    out.push_str(v);
                }
                Token::Unknown(v) => {
                    out.push('$');
                    out.push_str(v);
                }
            }
        }
        out
    }

    /// Drops a leading `$<var>` together with the `separator` literal that
    /// follows it. Used to render `$namespace.$collection` when the namespace
    /// is empty.
    pub fn without_prefix_var(&self, var: &str, separator: &str) -> Template {
        let mut out = Vec::with_capacity(self.tokens.len());
        let mut iter = self.tokens.iter().peekable();
        while let Some(tok) = iter.next() {
            if matches!(tok, Token::Var(v) if v == var) {
                if let Some(Token::Literal(next)) = iter.peek() {
                    if let Some(stripped) = next.strip_prefix(separator) {
                        iter.next();
                        out.push(Token::Literal(stripped.to_string()));
                        continue;
                    }
                }
            }
            out.push(tok.clone());
        }
        Template::new(out)
    }
}

impl fmt::Display for Template {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_source())
    }
}

/// Variable name to already-rendered text.
#[derive(Debug, Clone, Default)]
pub struct VarBindings {
    map: HashMap<String, String>,
}

impl VarBindings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: &str, value: impl Into<String>) -> Self {
        self.set(name, value);
        self
    }

    pub fn set(&mut self, name: &str, value: impl Into<String>) {
        self.map.insert(name.to_string(), value.into());
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.map.get(name).map(String::as_str)
    }
}

impl<K: AsRef<str>, V: Into<String>> FromIterator<(K, V)> for VarBindings {
    fn from_iter<T: IntoIterator<Item = (K, V)>>(iter: T) -> Self {
        let mut b = VarBindings::new();
        for (k, v) in iter {
            b.set(k.as_ref(), v);
        }
        b
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RewriteError {
    #[error("no binding for variable ${0}")]
    MissingBinding(String),
    #[error("unknown variable ${0}")]
    UnknownVariable(String),
    #[error("no rule [{section}] {key}")]
    UnknownRule { section: String, key: String },
    #[error("cannot chain an empty attribute list")]
    EmptyChain,
}

pub fn substitute(t: &Template, b: &VarBindings) -> Result<String, RewriteError> {
    let mut out = String::new();
    for tok in &t.tokens {
        match tok {
            Token::Literal(s) => out.push_str(s),
            Token::Var(v) => out.push_str(
                b.get(v)
                    .ok_or_else(|| RewriteError::MissingBinding(v.clone()))?,
            ),
            Token::Unknown(v) => return Err(RewriteError::UnknownVariable(v.clone())),
        }
    }
    Ok(out)
}

/// Collapses every run of whitespace to one space and trims the ends.
pub fn normalize_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Canonical form for comparing query texts. Outside quoted regions,
/// whitespace next to `( ) { } [ ] , : ;` is dropped and other runs of
/// whitespace become one space. Quoted text is kept as written.
pub fn normalize_query(s: &str) -> String {
    const TIGHT: &str = "(){}[],:;";
    let mut out = String::with_capacity(s.len());
    let mut pending_space = false;
    let mut chars = s.chars().peekable();
    while let Some(c) = chars.next() {
        if c.is_whitespace() {
            pending_space = true;
            continue;
        }
        if pending_space {
            let prev_tight = out.chars().last().is_none_or(|p| TIGHT.contains(p));
            if !prev_tight && !TIGHT.contains(c) {
                out.push(' ');
            }
            pending_space = false;
        }
        out.push(c);
        if c == '"' || c == '\'' || c == '`' {
            while let Some(q) = chars.next() {
                out.push(q);
                if q == '\\' && c != '\'' {
                    if let Some(e) = chars.next() {
                        out.push(e);
                    }
                } else if q == c {
                    break;
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DialectKind {
    /// Queries are one text that nests its parent as a subquery.
    Text,
    /// Queries are stage lists; deriving a frame appends stages.
    Pipeline,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub template: Template,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LanguagePack {
    pub name: String,
    pub dialect: DialectKind,
    /// Which local interpreter, if any, can run this pack's output.
    pub executor: Option<String>,
    sections: BTreeMap<String, BTreeMap<String, Entry>>,
}

/// Section holding pack metadata rather than templates.
pub const META_SECTION: &str = "PACK";

fn canonical_section(name: &str) -> String {
    let upper = name.trim().to_ascii_uppercase();
    match upper.as_str() {
        "ATTRIBUTES" => "ATTRIBUTE ALIAS".to_string(),
        _ => upper,
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: duplicate key `{key}` in [{section}]")]
    DuplicateKey {
        section: String,
        key: String,
        line: usize,
    },
    #[error("invalid pack: {}", render_diagnostics(.0))]
    Invalid(Vec<Diagnostic>),
}

fn render_diagnostics(d: &[Diagnostic]) -> String {
    d.iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DiagnosticKind {
    MissingKey,
    UnknownVariable(String),
    BadMetadata(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub section: String,
    pub key: String,
    pub line: Option<usize>,
    pub kind: DiagnosticKind,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            DiagnosticKind::MissingKey => {
                write!(f, "missing required rule [{}] {}", self.section, self.key)
            }
            DiagnosticKind::UnknownVariable(v) => write!(
                f,
                "[{}] {} (line {}): unknown variable ${v}",
                self.section,
                self.key,
                self.line.unwrap_or(0)
            ),
            DiagnosticKind::BadMetadata(m) => write!(f, "[{}] {}: {m}", self.section, self.key),
        }
    }
}

fn entry_key(line: &str) -> Option<(&str, &str)> {
    let (key, value) = line.split_once('=')?;
    let key = key.trim_end();
    if key.is_empty() || !key.chars().all(is_ident_char) {
        return None;
    }
    Some((key, value.trim()))
}

/// Parses without rejecting unknown variables; [`validate_pack`] reports them.
pub fn parse_config_lenient(text: &str) -> Result<LanguagePack, ConfigError> {
    let mut sections: BTreeMap<String, BTreeMap<String, Entry>> = BTreeMap::new();
    let mut raw: Vec<(String, String, String, usize)> = Vec::new();
    let mut current: Option<String> = None;
    let mut open: Option<usize> = None;

    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with(';') || trimmed.starts_with('#') {
            continue;
        }
        let indented = line.starts_with([' ', '\t']);
        if indented && entry_key(trimmed).is_none() {
            let Some(i) = open else {
                return Err(ConfigError::Syntax {
                    line: lineno,
                    message: "continuation line without an entry".into(),
                });
            };
            raw[i].2.push('\n');
            raw[i].2.push_str(trimmed);
            continue;
        }
        if trimmed.starts_with('[') && trimmed.ends_with(']') {
            current = Some(canonical_section(&trimmed[1..trimmed.len() - 1]));
            sections.entry(current.clone().unwrap()).or_default();
            open = None;
            continue;
        }
        let Some((key, value)) = entry_key(trimmed) else {
            return Err(ConfigError::Syntax {
                line: lineno,
                message: format!("expected `key = value`, found `{trimmed}`"),
            });
        };
        let Some(section) = current.clone() else {
            return Err(ConfigError::Syntax {
                line: lineno,
                message: "entry before any [SECTION] header".into(),
            });
        };
        if raw.iter().any(|(s, k, _, _)| *s == section && k == key) {
            return Err(ConfigError::DuplicateKey {
                section,
                key: key.to_string(),
                line: lineno,
            });
        }
        raw.push((section, key.to_string(), value.to_string(), lineno));
        open = Some(raw.len() - 1);
    }

    let mut meta: HashMap<String, String> = HashMap::new();
    for (section, key, value, line) in raw {
        if section == META_SECTION {
            meta.insert(key, value);
            continue;
        }
        sections.entry(section).or_default().insert(
            key,
            Entry {
                template: Template::parse(&value),
                line,
            },
        );
    }
    sections.remove(META_SECTION);

    let dialect = match meta
        .get("dialect")
        .map(|s| s.to_ascii_lowercase())
        .as_deref()
    {
        Some("pipeline") => DialectKind::Pipeline,
        _ => DialectKind::Text,
    };
    Ok(LanguagePack {
        name: meta.get("name").cloned().unwrap_or_default(),
        dialect,
        executor: meta.get("executor").cloned().filter(|s| s != "none"),
        sections,
    })
}

/// Parses a language configuration file. Fails on grammar errors, duplicate
/// keys and unknown variables; missing registry keys are left to
/// [`validate_pack`].
pub fn parse_config(text: &str) -> Result<LanguagePack, ConfigError> {
    let pack = parse_config_lenient(text)?;
    let unknown: Vec<_> = validate_pack(&pack)
        .into_iter()
        .filter(|d| matches!(d.kind, DiagnosticKind::UnknownVariable(_)))
        .collect();
    if unknown.is_empty() {
        Ok(pack)
    } else {
        Err(ConfigError::Invalid(unknown))
    }
}

/// Rules every pack must define. The frame API builds against exactly these.
pub const REGISTRY: &[(&str, &[&str])] = &[
    (
        "QUERIES",
        &["q1", "q2", "q3", "q4", "q5", "q6", "q7", "q8", "q9", "q10"],
    ),
    (
        "ATTRIBUTE ALIAS",
        &[
            "single_attribute",
            "right_attribute",
            "project_single",
            "project_item",
            "attribute_alias",
            "sort_asc_attr",
            "sort_desc_attr",
            "attribute_separator",
            "value_agg",
            "describe_item",
            "compare_alias",
            "scalar_alias",
        ],
    ),
    (
        "ARITHMETIC STATEMENTS",
        &["add", "sub", "mul", "div", "mod"],
    ),
    ("LOGICAL STATEMENTS", &["and", "or", "not"]),
    (
        "COMPARISON STATEMENTS",
        &["eq", "ne", "gt", "lt", "ge", "le"],
    ),
    ("TYPE CONVERSION", &["to_int", "to_str"]),
    ("LIMIT", &["limit", "return_all"]),
    ("FUNCTIONS", &["min", "max", "avg", "std", "count"]),
    ("GROUP AGGREGATES", &["min", "max", "avg", "std", "count"]),
    ("SCALAR FUNCTIONS", &["upper"]),
    ("NULL CHECK", &["isna", "notna"]),
    ("LITERALS", &["string_quote", "null", "true", "false"]),
    ("SAVE RESULTS", &["to_collection"]),
];

/// Empty iff every registry rule exists and every template only uses known
/// variables.
pub fn validate_pack(pack: &LanguagePack) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    if pack.name.is_empty() {
        out.push(Diagnostic {
            section: META_SECTION.into(),
            key: "name".into(),
            line: None,
            kind: DiagnosticKind::BadMetadata("pack has no name".into()),
        });
    }
    for (section, keys) in REGISTRY {
        for key in *keys {
            if pack.entry(section, key).is_none() {
                out.push(Diagnostic {
                    section: section.to_string(),
                    key: key.to_string(),
                    line: None,
                    kind: DiagnosticKind::MissingKey,
                });
            }
        }
    }
    for (section, entries) in &pack.sections {
        for (key, entry) in entries {
            for var in entry.template.unknown_variables() {
                out.push(Diagnostic {
                    section: section.clone(),
                    key: key.clone(),
                    line: Some(entry.line),
                    kind: DiagnosticKind::UnknownVariable(var.to_string()),
                });
            }
        }
    }
    out
}

impl LanguagePack {
    pub fn entry(&self, section: &str, key: &str) -> Option<&Entry> {
        self.sections.get(&canonical_section(section))?.get(key)
    }

    pub fn template(&self, section: &str, key: &str) -> Result<&Template, RewriteError> {
        self.entry(section, key)
            .map(|e| &e.template)
            .ok_or_else(|| RewriteError::UnknownRule {
                section: section.to_string(),
                key: key.to_string(),
            })
    }

    pub fn section_names(&self) -> impl Iterator<Item = &str> {
        self.sections.keys().map(String::as_str)
    }

    pub fn keys(&self, section: &str) -> impl Iterator<Item = &str> {
        self.sections
            .get(&canonical_section(section))
            .into_iter()
            .flat_map(|m| m.keys().map(String::as_str))
    }

    /// Replaces or adds a single rule.
    pub fn set_rule(&mut self, section: &str, key: &str, template: Template) {
        self.sections
            .entry(canonical_section(section))
            .or_default()
            .insert(key.to_string(), Entry { template, line: 0 });
    }

    pub fn remove_rule(&mut self, section: &str, key: &str) -> Option<Entry> {
        self.sections
            .get_mut(&canonical_section(section))?
            .remove(key)
    }

    /// Raw text of a rule without variables, e.g. a `[LITERALS]` entry.
    pub fn literal(&self, section: &str, key: &str) -> Result<String, RewriteError> {
        substitute(self.template(section, key)?, &VarBindings::new())
    }
}

pub fn build_rule(
    pack: &LanguagePack,
    section: &str,
    key: &str,
    bindings: &VarBindings,
) -> Result<String, RewriteError> {
    substitute(pack.template(section, key)?, bindings)
}

/// Folds fragments right to left through `[ATTRIBUTE ALIAS]
/// attribute_separator`.
pub fn chain_attributes(items: &[String], pack: &LanguagePack) -> Result<String, RewriteError> {
    let sep = pack.template("ATTRIBUTE ALIAS", "attribute_separator")?;
    let (last, init) = items.split_last().ok_or(RewriteError::EmptyChain)?;
    let mut acc = last.clone();
    for item in init.iter().rev() {
        let b = VarBindings::new()
            .with("left", item.clone())
            .with("right", acc);
        acc = substitute(sep, &b)?;
    }
    Ok(acc)
}
