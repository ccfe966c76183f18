//! Logit sources: where the per-step scores over the vocabulary come from.
//!
//! The engine is model-agnostic; anything implementing [`LogitSource`] can
//! drive generation. Two deterministic mocks cover testing and desk-scale
//! experiments, and [`RemoteSource`] bridges to a real language model over a
//! small JSON-over-HTTP protocol:
//!
//! - `POST /logits` with body `{"prompt": string, "tokens": [int]}` returns
//!   `{"logits": [float; vocab_size]}`.
//! - `GET /vocab_hash` returns `{"hash": hex}` and must match the local
//!   vocabulary hash before any generation starts.
//!
//! Sources never see automaton state or steering counters; they only map a
//! (prompt, generated-token-ids) pair to a logit vector.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::net::TcpStream;
use std::time::Duration;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::vocab::TokenId;

/// Produces a logit vector over the vocabulary for the next step.
pub trait LogitSource {
    fn vocab_size(&self) -> usize;

    /// Logits for the next token given the prompt and the token ids
    /// generated so far. The returned vector must have `vocab_size()`
    /// entries, all finite.
    fn next_logits(&mut self, prompt: &str, generated: &[TokenId]) -> Result<Vec<f64>>;
}

/// All-zeros logits: induces the uniform distribution over unmasked tokens.
#[derive(Debug, Clone)]
pub struct UniformSource {
    size: usize,
}

impl UniformSource {
    pub fn new(size: usize) -> UniformSource {
        assert!(size >= 1, "vocabulary size must be at least 1");
        UniformSource { size }
    }
}

impl LogitSource for UniformSource {
    fn vocab_size(&self) -> usize {
        self.size
    }

    fn next_logits(&mut self, _prompt: &str, _generated: &[TokenId]) -> Result<Vec<f64>> {
        Ok(vec![0.0; self.size])
    }
}

/// Deterministic mock keyed on the most recent generated token: a crude
/// stand-in for a model that keeps following its own previous prediction.
#[derive(Debug, Clone)]
pub struct TableSource {
    size: usize,
    default_row: Vec<f64>,
    rows: HashMap<TokenId, Vec<f64>>,
}

impl TableSource {
    pub fn new(default_row: Vec<f64>, rows: HashMap<TokenId, Vec<f64>>) -> Result<TableSource> {
        let size = default_row.len();
        if size == 0 {
            return Err(Error::Vocabulary("table source default row is empty".into()));
        }
        for (token, row) in &rows {
            if row.len() != size {
                return Err(Error::Vocabulary(format!(
                    "table row for token {token} has {} entries, expected {size}",
                    row.len()
                )));
            }
        }
        Ok(TableSource {
            size,
            default_row,
            rows,
        })
    }

    /// JSON form: `{"default": [...], "rows": {"<token id>": [...]}}`.
    pub fn from_json_str(text: &str) -> Result<TableSource> {
        #[derive(Deserialize)]
        struct Doc {
            default: Vec<f64>,
            #[serde(default)]
            rows: HashMap<String, Vec<f64>>,
        }
        let doc: Doc = serde_json::from_str(text)?;
        let mut rows = HashMap::new();
        for (key, row) in doc.rows {
            let token: TokenId = key
                .parse()
                .map_err(|_| Error::Vocabulary(format!("bad table row key {key:?}")))?;
            rows.insert(token, row);
        }
        TableSource::new(doc.default, rows)
    }
}

impl LogitSource for TableSource {
    fn vocab_size(&self) -> usize {
        self.size
    }

    fn next_logits(&mut self, _prompt: &str, generated: &[TokenId]) -> Result<Vec<f64>> {
        let row = generated
            .last()
            .and_then(|t| self.rows.get(t))
            .unwrap_or(&self.default_row);
        Ok(row.clone())
    }
}

/// Connection settings for a remote logit server.
#[derive(Debug, Clone)]
pub struct RemoteSourceConfig {
    /// Base endpoint, e.g. `http://127.0.0.1:7070`.
    pub endpoint: String,
    pub timeout: Duration,
    pub retries: u32,
    /// Optional value for an `Authorization` header.
    pub auth_header: Option<String>,
}

impl RemoteSourceConfig {
    pub fn new(endpoint: impl Into<String>) -> RemoteSourceConfig {
        RemoteSourceConfig {
            endpoint: endpoint.into(),
            timeout: Duration::from_secs(30),
            retries: 2,
            auth_header: None,
        }
    }
}

/// One-request-per-step client for a stateless logit server.
#[derive(Debug)]
pub struct RemoteSource {
    config: RemoteSourceConfig,
    vocab_size: usize,
}

impl RemoteSource {
    /// Connects, checks the server's vocabulary hash against the local one,
    /// and returns a ready source. A hash mismatch aborts the run up front.
    pub fn connect(
        config: RemoteSourceConfig,
        local_vocab_hash: &str,
        vocab_size: usize,
    ) -> Result<RemoteSource> {
        assert!(config.timeout > Duration::ZERO, "timeout must be positive");
        let body = http_request(&config, "GET", "/vocab_hash", None)?;
        #[derive(Deserialize)]
        struct HashDoc {
            hash: String,
        }
        let doc: HashDoc = serde_json::from_str(&body)
            .map_err(|e| Error::Remote(format!("bad /vocab_hash response: {e}; body: {}", excerpt(&body))))?;
        if doc.hash != local_vocab_hash {
            return Err(Error::Remote(format!(
                "vocabulary hash mismatch: server has {}, local vocabulary is {}",
                doc.hash, local_vocab_hash
            )));
        }
        Ok(RemoteSource { config, vocab_size })
    }
}

impl LogitSource for RemoteSource {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_logits(&mut self, prompt: &str, generated: &[TokenId]) -> Result<Vec<f64>> {
        let request = serde_json::json!({ "prompt": prompt, "tokens": generated });
        let body = http_request(
            &self.config,
            "POST",
            "/logits",
            Some(&request.to_string()),
        )?;
        #[derive(Deserialize)]
        struct LogitsDoc {
            logits: Vec<f64>,
        }
        let doc: LogitsDoc = serde_json::from_str(&body)
            .map_err(|e| Error::Remote(format!("bad /logits response: {e}; body: {}", excerpt(&body))))?;
        if doc.logits.len() != self.vocab_size {
            return Err(Error::Remote(format!(
                "protocol fault: server returned {} logits, expected {}",
                doc.logits.len(),
                self.vocab_size
            )));
        }
        if doc.logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::Remote(
                "protocol fault: non-finite logit in response".into(),
            ));
        }
        Ok(doc.logits)
    }
}

fn excerpt(body: &str) -> String {
    const LIMIT: usize = 200;
    if body.len() <= LIMIT {
        body.to_string()
    } else {
        let cut = body
            .char_indices()
            .take_while(|(i, _)| *i < LIMIT)
            .last()
            .map(|(i, c)| i + c.len_utf8())
            .unwrap_or(0);
        format!("{}...", &body[..cut])
    }
}

/// Minimal HTTP/1.1 client over plain TCP: enough for loopback and LAN logit
/// servers. Supports `Content-Length` and chunked responses; no TLS.
fn http_request(
    config: &RemoteSourceConfig,
    method: &str,
    path: &str,
    body: Option<&str>,
) -> Result<String> {
    let (host_port, base_path) = parse_endpoint(&config.endpoint)?;
    let full_path = if base_path.is_empty() {
        path.to_string()
    } else {
        format!("{base_path}{path}")
    };
    let mut last_err = None;
    for _ in 0..=config.retries {
        match http_request_once(config, &host_port, method, &full_path, body) {
            Ok(response) => return Ok(response),
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.unwrap_or_else(|| Error::Remote("request failed".into())))
}

fn parse_endpoint(endpoint: &str) -> Result<(String, String)> {
    let rest = endpoint
        .strip_prefix("http://")
        .ok_or_else(|| Error::Remote(format!("endpoint must start with http://: {endpoint}")))?;
    let (host_port, path) = match rest.find('/') {
        Some(i) => (&rest[..i], rest[i..].trim_end_matches('/')),
        None => (rest, ""),
    };
    let host_port = if host_port.contains(':') {
        host_port.to_string()
    } else {
        format!("{host_port}:80")
    };
    Ok((host_port, path.to_string()))
}

fn http_request_once(
    config: &RemoteSourceConfig,
    host_port: &str,
    method: &str,
    path: &str,
    body: Option<&str>,
) -> Result<String> {
    use std::net::ToSocketAddrs;
    let addr = host_port
        .to_socket_addrs()
        .map_err(|e| Error::Remote(format!("cannot resolve {host_port}: {e}")))?
        .next()
        .ok_or_else(|| Error::Remote(format!("no address for {host_port}")))?;
    let stream = TcpStream::connect_timeout(&addr, config.timeout)
        .map_err(|e| Error::Remote(format!("connect to {host_port} failed: {e}")))?;
    stream
        .set_read_timeout(Some(config.timeout))
        .and_then(|_| stream.set_write_timeout(Some(config.timeout)))
        .map_err(|e| Error::Remote(format!("socket configuration failed: {e}")))?;
    let mut stream = stream;

    let payload = body.unwrap_or("");
    let mut request = format!(
        "{method} {path} HTTP/1.1\r\nHost: {host_port}\r\nConnection: close\r\nAccept: application/json\r\n"
    );
    if let Some(auth) = &config.auth_header {
        request.push_str(&format!("Authorization: {auth}\r\n"));
    }
    if body.is_some() {
        request.push_str("Content-Type: application/json\r\n");
    }
    request.push_str(&format!("Content-Length: {}\r\n\r\n{payload}", payload.len()));
    stream
        .write_all(request.as_bytes())
        .map_err(|e| Error::Remote(format!("request write failed: {e}")))?;

    let mut raw = Vec::new();
    stream
        .read_to_end(&mut raw)
        .map_err(|e| Error::Remote(format!("response read failed: {e}")))?;
    parse_http_response(&raw)
}

fn parse_http_response(raw: &[u8]) -> Result<String> {
    let header_end = raw
        .windows(4)
        .position(|w| w == b"\r\n\r\n")
        .ok_or_else(|| Error::Remote("malformed response: no header terminator".into()))?;
    let head = String::from_utf8_lossy(&raw[..header_end]);
    let mut lines = head.lines();
    let status_line = lines
        .next()
        .ok_or_else(|| Error::Remote("malformed response: empty status line".into()))?;
    let status: u16 = status_line
        .split_whitespace()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Remote(format!("malformed status line: {status_line}")))?;

    let mut content_length = None;
    let mut chunked = false;
    for line in lines {
        let Some((name, value)) = line.split_once(':') else {
            continue;
        };
        let name = name.trim().to_ascii_lowercase();
        let value = value.trim();
        if name == "content-length" {
            content_length = value.parse::<usize>().ok();
        } else if name == "transfer-encoding" && value.eq_ignore_ascii_case("chunked") {
            chunked = true;
        }
    }

    let body_bytes = &raw[header_end + 4..];
    let body = if chunked {
        decode_chunked(body_bytes)?
    } else {
        match content_length {
            Some(len) if len <= body_bytes.len() => body_bytes[..len].to_vec(),
            _ => body_bytes.to_vec(),
        }
    };
    let body = String::from_utf8_lossy(&body).into_owned();
    if status != 200 {
        return Err(Error::Remote(format!(
            "server returned status {status}: {}",
            excerpt(&body)
        )));
    }
    Ok(body)
}

fn decode_chunked(mut raw: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    loop {
        let line_end = raw
            .windows(2)
            .position(|w| w == b"\r\n")
            .ok_or_else(|| Error::Remote("malformed chunked body".into()))?;
        let size_text = String::from_utf8_lossy(&raw[..line_end]);
        let size = usize::from_str_radix(size_text.trim().split(';').next().unwrap_or(""), 16)
            .map_err(|_| Error::Remote(format!("bad chunk size {size_text:?}")))?;
        raw = &raw[line_end + 2..];
        if size == 0 {
            return Ok(out);
        }
        if raw.len() < size + 2 {
            return Err(Error::Remote("truncated chunked body".into()));
        }
        out.extend_from_slice(&raw[..size]);
        raw = &raw[size + 2..];
    }
}
