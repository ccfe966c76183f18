//! Loopback integration test for the remote logit source: a minimal HTTP
//! server on a local port speaks the wire protocol, and the remote-driven
//! batch must match the equivalent table mock exactly.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::net::TcpListener;
use std::thread;

use steerex_core::steering::{generate_batch, BatchSpec, Mode, SteeringParams};
use steerex_core::{
    Dfa, LogitSource, RemoteSource, RemoteSourceConfig, TableSource, Vocabulary, VocabularyIndex,
};

/// Serves `hash` on /vocab_hash and `logits` on /logits until dropped.
struct LoopbackServer {
    port: u16,
}

impl LoopbackServer {
    fn start(hash: String, logits: Vec<f64>) -> LoopbackServer {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let port = listener.local_addr().unwrap().port();
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { break };
                let mut buf = Vec::new();
                let mut chunk = [0u8; 4096];
                // Read until the request (headers + body) is complete.
                loop {
                    match stream.read(&mut chunk) {
                        Ok(0) => break,
                        Ok(n) => {
                            buf.extend_from_slice(&chunk[..n]);
                            if request_complete(&buf) {
                                break;
                            }
                        }
                        Err(_) => break,
                    }
                }
                let request = String::from_utf8_lossy(&buf);
                let body = if request.starts_with("GET /vocab_hash") {
                    format!("{{\"hash\": \"{hash}\"}}")
                } else if request.starts_with("POST /logits") {
                    let rendered: Vec<String> =
                        logits.iter().map(|v| format!("{v}")).collect();
                    format!("{{\"logits\": [{}]}}", rendered.join(","))
                } else {
                    let _ = stream.write_all(
                        b"HTTP/1.1 404 Not Found\r\nContent-Length: 0\r\nConnection: close\r\n\r\n",
                    );
                    continue;
                };
                let response = format!(
                    "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
                let _ = stream.write_all(response.as_bytes());
            }
        });
        LoopbackServer { port }
    }

    fn endpoint(&self) -> String {
        format!("http://127.0.0.1:{}", self.port)
    }
}

fn request_complete(buf: &[u8]) -> bool {
    let Some(header_end) = buf.windows(4).position(|w| w == b"\r\n\r\n") else {
        return false;
    };
    let head = String::from_utf8_lossy(&buf[..header_end]);
    let content_length = head
        .lines()
        .find_map(|line| {
            let (name, value) = line.split_once(':')?;
            name.trim()
                .eq_ignore_ascii_case("content-length")
                .then(|| value.trim().parse::<usize>().ok())?
        })
        .unwrap_or(0);
    buf.len() >= header_end + 4 + content_length
}

fn setup() -> (Dfa, Vocabulary, VocabularyIndex) {
    let dfa = Dfa::compile("ab|cd").unwrap();
    let vocab = Vocabulary::from_strings(["a", "b", "c", "d"]).unwrap();
    let index = VocabularyIndex::build(&dfa, &vocab);
    (dfa, vocab, index)
}

fn fixed_logits() -> Vec<f64> {
    vec![2.0, 0.5, -1.0, 0.0, 1.0]
}

#[test]
fn remote_batch_matches_table_mock() {
    let (dfa, vocab, index) = setup();
    let server = LoopbackServer::start(vocab.hash(), fixed_logits());

    let config = RemoteSourceConfig::new(server.endpoint());
    let mut remote = RemoteSource::connect(config.clone(), &vocab.hash(), vocab.size())
        .map_err(|e| panic!("connect failed: {e}"))
        .unwrap();
    let spec = BatchSpec {
        params: SteeringParams {
            mode: Mode::Diverse,
            ..SteeringParams::default()
        },
        prompt: "p".into(),
        n: 25,
        seed: 77,
        pattern_hash: "p".into(),
        vocab_hash: vocab.hash(),
    };
    let remote_record = generate_batch(&mut remote, &dfa, &index, &spec).unwrap();

    let mut table = TableSource::new(fixed_logits(), HashMap::new()).unwrap();
    let table_record = generate_batch(&mut table, &dfa, &index, &spec).unwrap();

    assert_eq!(remote_record.samples.len(), table_record.samples.len());
    for (a, b) in remote_record.samples.iter().zip(table_record.samples.iter()) {
        assert_eq!(a.text, b.text);
        assert_eq!(a.tokens, b.tokens);
        assert_eq!(a.valid, b.valid);
    }
}

#[test]
fn hash_mismatch_aborts_at_startup() {
    let (_dfa, vocab, _index) = setup();
    let server = LoopbackServer::start("deadbeef".to_string(), fixed_logits());
    let config = RemoteSourceConfig::new(server.endpoint());
    let err = RemoteSource::connect(config.clone(), &vocab.hash(), vocab.size()).unwrap_err();
    let message = err.to_string();
    assert!(message.contains("deadbeef"), "message: {message}");
    assert!(message.contains(&vocab.hash()), "message: {message}");
}

#[test]
fn wrong_vector_length_is_a_protocol_fault() {
    let (_dfa, vocab, _index) = setup();
    // Four logits for a five-token vocabulary.
    let server = LoopbackServer::start(vocab.hash(), vec![0.0; 4]);
    let config = RemoteSourceConfig::new(server.endpoint());
    let mut remote = RemoteSource::connect(config.clone(), &vocab.hash(), vocab.size()).unwrap();
    let err = remote.next_logits("p", &[]).unwrap_err();
    assert!(err.to_string().contains("expected 5"), "err: {err}");
}

#[test]
fn unreachable_endpoint_fails_with_transport_error() {
    let config = RemoteSourceConfig {
        endpoint: "http://127.0.0.1:1".into(),
        timeout: std::time::Duration::from_millis(300),
        retries: 1,
        auth_header: None,
    };
    let err = RemoteSource::connect(config, "00", 4).unwrap_err();
    assert!(matches!(err, steerex_core::Error::Remote(_)));
}
