//! The execution boundary.
//!
//! An action calls [`Connector::run`], which performs `pre_process`,
//! `execute` and `post_process` once each, in that order. Only `execute`
//! touches a backend.

use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use serde_json::Map;
use thiserror::Error;

use crate::exec::{self, Catalog, ExecDialect, ExecError};
use crate::frame::QueryText;
use crate::rewrite::LanguagePack;
use crate::value::{number_to_value, Record, Table, Value};

/// A query addressed to a collection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Request {
    pub namespace: String,
    pub collection: String,
    pub query: QueryText,
}

impl Request {
    pub fn new(namespace: &str, collection: &str, query: QueryText) -> Request {
        Request {
            namespace: namespace.to_string(),
            collection: collection.to_string(),
            query,
        }
    }

    /// The request body. Stage lists become `ns.coll.aggregate([...])`.
    pub fn render(&self) -> String {
        match &self.query {
            QueryText::Text(s) => s.clone(),
            QueryText::Stages(stages) => {
                let target = if self.namespace.is_empty() {
                    self.collection.clone()
                } else {
                    format!("{}.{}", self.namespace, self.collection)
                };
                format!("{target}.aggregate([\n{}\n])", stages.join(",\n"))
            }
        }
    }
}

/// What `execute` hands to `post_process`.
#[derive(Debug, Clone, PartialEq)]
pub enum RawResult {
    Rows(Table),
    Body(String),
}

#[derive(Debug, Error)]
pub enum ConnectorError {
    #[error("dialect `{0}` cannot be executed locally")]
    UnsupportedDialect(String),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error("malformed request: {0}")]
    Request(String),
    #[error("invalid connector configuration: {0}")]
    Config(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("server answered {code}: {body}")]
    Status { code: u16, body: String },
    #[error("no response within {ms} ms")]
    Timeout { ms: u64 },
    #[error("unexpected response envelope: {0}")]
    Envelope(String),
}

pub trait Connector: Send + Sync {
    fn initialize(&self) -> Result<(), ConnectorError> {
        Ok(())
    }

    /// Pure rewrite of the request into what `execute` sends. The default
    /// turns a stage list into its single-text `aggregate` form.
    fn pre_process(&self, req: &Request) -> Request {
        default_pre_process(req)
    }

    fn execute(&self, req: &Request) -> Result<RawResult, ConnectorError>;

    fn post_process(&self, raw: RawResult) -> Result<Table, ConnectorError> {
        match raw {
            RawResult::Rows(t) => Ok(t),
            RawResult::Body(body) => parse_envelope(&body, ""),
        }
    }

    fn run(&self, req: &Request) -> Result<Table, ConnectorError> {
        let prepared = self.pre_process(req);
        let raw = self.execute(&prepared)?;
        self.post_process(raw)
    }
}

impl<C: Connector + ?Sized> Connector for Box<C> {
    fn initialize(&self) -> Result<(), ConnectorError> {
        (**self).initialize()
    }

    fn pre_process(&self, req: &Request) -> Request {
        (**self).pre_process(req)
    }

    fn execute(&self, req: &Request) -> Result<RawResult, ConnectorError> {
        (**self).execute(req)
    }

    fn post_process(&self, raw: RawResult) -> Result<Table, ConnectorError> {
        (**self).post_process(raw)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Initialize,
    PreProcess,
    Execute,
    PostProcess,
}

/// Records which connector phases ran and which query texts were executed.
#[derive(Debug, Default)]
pub struct CallLog {
    phases: Mutex<Vec<Phase>>,
    queries: Mutex<Vec<String>>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

impl CallLog {
    fn phase(&self, p: Phase) {
        lock(&self.phases).push(p);
    }

    fn query(&self, q: String) {
        lock(&self.queries).push(q);
    }

    pub fn count(&self, p: Phase) -> usize {
        lock(&self.phases).iter().filter(|x| **x == p).count()
    }

    pub fn phases(&self) -> Vec<Phase> {
        lock(&self.phases).clone()
    }

    /// Executed query texts, oldest first.
    pub fn queries(&self) -> Vec<String> {
        lock(&self.queries).clone()
    }

    pub fn clear(&self) {
        lock(&self.phases).clear();
        lock(&self.queries).clear();
    }
}

/// Executes nothing. Every executed query is logged and answered with a
/// fixed table, empty by default.
#[derive(Debug, Default)]
pub struct DryRunConnector {
    log: CallLog,
    response: Mutex<Table>,
}

impl DryRunConnector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn respond_with(self, table: Table) -> Self {
        *lock(&self.response) = table;
        self
    }

    pub fn log(&self) -> &CallLog {
        &self.log
    }

    pub fn queries(&self) -> Vec<String> {
        self.log.queries()
    }

    pub fn last_query(&self) -> Option<String> {
        self.log.queries().pop()
    }
}

impl Connector for DryRunConnector {
    fn initialize(&self) -> Result<(), ConnectorError> {
        self.log.phase(Phase::Initialize);
        Ok(())
    }

    fn pre_process(&self, req: &Request) -> Request {
        self.log.phase(Phase::PreProcess);
        default_pre_process(req)
    }

    fn execute(&self, req: &Request) -> Result<RawResult, ConnectorError> {
        self.log.phase(Phase::Execute);
        self.log.query(req.render());
        Ok(RawResult::Rows(lock(&self.response).clone()))
    }

    fn post_process(&self, raw: RawResult) -> Result<Table, ConnectorError> {
        self.log.phase(Phase::PostProcess);
        match raw {
            RawResult::Rows(t) => Ok(t),
            RawResult::Body(b) => parse_envelope(&b, ""),
        }
    }
}

fn default_pre_process(req: &Request) -> Request {
    match &req.query {
        QueryText::Text(_) => req.clone(),
        QueryText::Stages(_) => Request {
            query: QueryText::Text(req.render()),
            ..req.clone()
        },
    }
}

/// Wraps another connector and records every call that passes through.
pub struct SpyConnector<C> {
    inner: C,
    log: CallLog,
}

impl<C: Connector> SpyConnector<C> {
    pub fn new(inner: C) -> Self {
        SpyConnector {
            inner,
            log: CallLog::default(),
        }
    }

    pub fn log(&self) -> &CallLog {
        &self.log
    }

    pub fn inner(&self) -> &C {
        &self.inner
    }
}

impl<C: Connector> Connector for SpyConnector<C> {
    fn initialize(&self) -> Result<(), ConnectorError> {
        self.log.phase(Phase::Initialize);
        self.inner.initialize()
    }

    fn pre_process(&self, req: &Request) -> Request {
        self.log.phase(Phase::PreProcess);
        self.inner.pre_process(req)
    }

    fn execute(&self, req: &Request) -> Result<RawResult, ConnectorError> {
        self.log.phase(Phase::Execute);
        self.log.query(req.render());
        self.inner.execute(req)
    }

    fn post_process(&self, raw: RawResult) -> Result<Table, ConnectorError> {
        self.log.phase(Phase::PostProcess);
        self.inner.post_process(raw)
    }
}

/// Runs queries with the in-memory interpreters against a shared catalog.
/// Calls are serialized on the catalog lock.
#[derive(Debug, Clone)]
pub struct LocalConnector {
    dialect: ExecDialect,
    catalog: Arc<Mutex<Catalog>>,
    allow_overwrite: bool,
}

impl LocalConnector {
    /// `dialect` is `sql`, `sqlpp` or `mongo`.
    pub fn new(dialect: &str, catalog: Arc<Mutex<Catalog>>) -> Result<Self, ConnectorError> {
        let dialect = dialect
            .parse::<ExecDialect>()
            .map_err(|_| ConnectorError::UnsupportedDialect(dialect.to_string()))?;
        Ok(LocalConnector {
            dialect,
            catalog,
            allow_overwrite: false,
        })
    }

    /// Picks the interpreter named by the pack's `executor` setting.
    pub fn for_pack(
        pack: &LanguagePack,
        catalog: Arc<Mutex<Catalog>>,
    ) -> Result<Self, ConnectorError> {
        match &pack.executor {
            Some(e) => Self::new(e, catalog),
            None => Err(ConnectorError::UnsupportedDialect(pack.name.clone())),
        }
    }

    /// Whether `persist` may replace an existing collection.
    pub fn allow_overwrite(mut self, yes: bool) -> Self {
        self.allow_overwrite = yes;
        self
    }

    pub fn dialect(&self) -> ExecDialect {
        self.dialect
    }

    pub fn catalog(&self) -> &Arc<Mutex<Catalog>> {
        &self.catalog
    }
}

impl Connector for LocalConnector {
    fn execute(&self, req: &Request) -> Result<RawResult, ConnectorError> {
        let text = req.render();
        let mut catalog = lock(&self.catalog);
        let table = exec::run_text(self.dialect, &text, &mut catalog, self.allow_overwrite)?;
        Ok(RawResult::Rows(table))
    }
}

/// Where and how to reach a query endpoint over HTTP.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpEndpointConfig {
    pub base_url: String,
    pub query_path: String,
    /// A complete header line, e.g. `Authorization: Bearer abc`.
    pub auth_header: Option<String>,
    pub timeout_ms: u64,
    /// JSON pointer to the row array inside the response, e.g. `/results`.
    /// Empty means the whole body is the array.
    pub response_rows_pointer: String,
}

impl HttpEndpointConfig {
    pub fn new(base_url: &str) -> Self {
        HttpEndpointConfig {
            base_url: base_url.trim_end_matches('/').to_string(),
            query_path: "/query".into(),
            auth_header: None,
            timeout_ms: 30_000,
            response_rows_pointer: String::new(),
        }
    }

    pub fn url(&self) -> String {
        let path = self.query_path.trim_start_matches('/');
        format!("{}/{}", self.base_url.trim_end_matches('/'), path)
    }
}

/// POSTs the query text and reads rows out of a JSON envelope. Stateless
/// per request, so concurrent calls are fine.
pub struct HttpConnector {
    config: HttpEndpointConfig,
    auth: Option<(String, String)>,
    agent: ureq::Agent,
}

impl HttpConnector {
    pub fn new(config: HttpEndpointConfig) -> Result<Self, ConnectorError> {
        if config.timeout_ms == 0 {
            return Err(ConnectorError::Config("timeout must be positive".into()));
        }
        let auth = match &config.auth_header {
            None => None,
            Some(line) => {
                let (name, value) = line.split_once(':').ok_or_else(|| {
                    ConnectorError::Config(format!("auth header `{line}` is not `Name: value`"))
                })?;
                Some((name.trim().to_string(), value.trim().to_string()))
            }
        };
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(HttpConnector {
            config,
            auth,
            agent,
        })
    }

    pub fn config(&self) -> &HttpEndpointConfig {
        &self.config
    }
}

fn excerpt(body: &str) -> String {
    const MAX: usize = 512;
    match body.char_indices().nth(MAX) {
        Some((i, _)) => format!("{}...", &body[..i]),
        None => body.to_string(),
    }
}

impl Connector for HttpConnector {
    fn execute(&self, req: &Request) -> Result<RawResult, ConnectorError> {
        let timeout = self.config.timeout_ms;
        let map_err = |e: ureq::Error| match e {
            ureq::Error::Timeout(_) => ConnectorError::Timeout { ms: timeout },
            ureq::Error::Io(io)
                if matches!(
                    io.kind(),
                    std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock
                ) =>
            {
                ConnectorError::Timeout { ms: timeout }
            }
            other => ConnectorError::Transport(other.to_string()),
        };
        let mut call = self
            .agent
            .post(&self.config.url())
            .header("Content-Type", "text/plain; charset=utf-8");
        if let Some((name, value)) = &self.auth {
            call = call.header(name.as_str(), value.as_str());
        }
        let mut resp = call.send(req.render()).map_err(map_err)?;
        let code = resp.status().as_u16();
        let body = resp.body_mut().read_to_string().map_err(map_err)?;
        if !(200..300).contains(&code) {
            return Err(ConnectorError::Status {
                code,
                body: excerpt(&body),
            });
        }
        Ok(RawResult::Body(body))
    }

    fn post_process(&self, raw: RawResult) -> Result<Table, ConnectorError> {
        match raw {
            RawResult::Rows(t) => Ok(t),
            RawResult::Body(b) => parse_envelope(&b, &self.config.response_rows_pointer),
        }
    }
}

/// Reads the row array at `pointer`. Object rows become records, nested
/// objects are flattened to dotted names, and a bare scalar row becomes a
/// record with the single column `$1`.
pub fn parse_envelope(body: &str, pointer: &str) -> Result<Table, ConnectorError> {
    let doc: serde_json::Value =
        serde_json::from_str(body).map_err(|e| ConnectorError::Envelope(e.to_string()))?;
    let rows = doc
        .pointer(pointer)
        .ok_or_else(|| ConnectorError::Envelope(format!("nothing at `{pointer}`")))?
        .as_array()
        .ok_or_else(|| ConnectorError::Envelope(format!("`{pointer}` is not an array")))?;
    let mut out = Vec::with_capacity(rows.len());
    for row in rows {
        let mut rec = Record::new();
        match row {
            serde_json::Value::Object(obj) => flatten_into(&mut rec, "", obj)?,
            scalar => rec.set("$1", scalar_value(scalar)?),
        }
        out.push(rec);
    }
    Ok(Table::new(out))
}

fn scalar_value(v: &serde_json::Value) -> Result<Value, ConnectorError> {
    Ok(match v {
        serde_json::Value::Null => Value::Null,
        serde_json::Value::Bool(b) => Value::Bool(*b),
        serde_json::Value::Number(n) => number_to_value(n),
        serde_json::Value::String(s) => Value::Str(s.clone()),
        serde_json::Value::Array(_) | serde_json::Value::Object(_) => {
            return Err(ConnectorError::Envelope(
                "arrays are not supported in rows".into(),
            ))
        }
    })
}

fn flatten_into(
    rec: &mut Record,
    prefix: &str,
    obj: &Map<String, serde_json::Value>,
) -> Result<(), ConnectorError> {
    for (k, v) in obj {
        let name = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            serde_json::Value::Object(inner) => flatten_into(rec, &name, inner)?,
            other => rec.set(name, scalar_value(other)?),
        }
    }
    Ok(())
}
