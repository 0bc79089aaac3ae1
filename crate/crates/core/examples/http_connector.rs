//! Sends queries to an HTTP endpoint. A tiny in-process server stands in
//! for a database's REST query service.
//!
//! ```text
//! cargo run --example http_connector
//! ```

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::Arc;
use std::thread;

use framequery::connector::{HttpConnector, HttpEndpointConfig};
use framequery::packs;
use framequery::Frame;

fn serve(listener: TcpListener, replies: Vec<(u16, &'static str)>) {
    for (code, body) in replies {
        let (stream, _) = listener.accept().unwrap();
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut len = 0;
        loop {
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            if line.trim().is_empty() {
                break;
            }
            if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                len = v.trim().parse().unwrap();
            }
        }
        let mut query = vec![0; len];
        reader.read_exact(&mut query).unwrap();
        println!("server got:\n{}\n", String::from_utf8_lossy(&query));
        let mut stream = stream;
        write!(
            stream,
            "HTTP/1.1 {code} OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
            body.len()
        )
        .unwrap();
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let url = format!("http://{}", listener.local_addr()?);
    let server = thread::spawn(move || {
        serve(
            listener,
            vec![
                (
                    200,
                    r#"{"results":[{"name":"ann","address":"1 Elm"},{"name":"cy","address":"9 Oak"}]}"#,
                ),
                (400, r#"{"errors":[{"msg":"Cannot find dataset Userz"}]}"#),
            ],
        )
    });

    let mut cfg = HttpEndpointConfig::new(&url);
    cfg.query_path = "/query/service".into();
    cfg.response_rows_pointer = "/results".into();
    cfg.auth_header = Some("Authorization: Basic YWRtaW46YWRtaW4=".into());
    cfg.timeout_ms = 2_000;
    let conn = Arc::new(HttpConnector::new(cfg)?);
    let pack = Arc::new(packs::load_builtin("sqlpp")?);

    let af = Frame::scan("Test", "Users", pack.clone(), conn.clone())?;
    let rows = af
        .filter(&af.col("lang")?.eq("en")?)?
        .project(&["name", "address"])?
        .head(10)?;
    for r in &rows.rows {
        println!("{r:?}");
    }

    let missing = Frame::scan("Test", "Userz", pack, conn)?;
    match missing.count() {
        Ok(n) => println!("unexpected count {n}"),
        Err(e) => println!("\nfailed as expected:\n{e}"),
    }
    server.join().unwrap();
    Ok(())
}
