//! Minimal logit server speaking the remote-source wire protocol, for
//! driving `steerex generate --source remote:...` without a real model.
//!
//! Serves `GET /vocab_hash` with the hash of the vocabulary file given on
//! the command line and `POST /logits` with a fixed descending-by-id logit
//! vector, which makes low token ids the model's habitual preference.
//!
//! Usage: logit_server <vocab.json> [port]

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;

use steerex_core::Vocabulary;

fn main() {
    let mut args = std::env::args().skip(1);
    let vocab_path: PathBuf = args
        .next()
        .expect("usage: logit_server <vocab.json> [port]")
        .into();
    let port: u16 = args.next().map(|p| p.parse().expect("bad port")).unwrap_or(7070);

    let vocab = Vocabulary::load(&vocab_path).expect("cannot load vocabulary");
    let hash = vocab.hash();
    let logits: Vec<String> = (0..vocab.size())
        .map(|i| {
            if i as u32 == vocab.eos() {
                "3.0".to_string()
            } else {
                format!("{:.4}", 4.0 * (vocab.size() - i) as f64 / vocab.size() as f64)
            }
        })
        .collect();
    let logits_body = format!("{{\"logits\": [{}]}}", logits.join(","));
    let hash_body = format!("{{\"hash\": \"{hash}\"}}");

    let listener = TcpListener::bind(("127.0.0.1", port)).expect("cannot bind");
    println!(
        "serving {} tokens (hash {}…) on http://127.0.0.1:{port}",
        vocab.size(),
        &hash[..12]
    );
    for stream in listener.incoming() {
        let Ok(stream) = stream else { continue };
        handle(stream, &hash_body, &logits_body);
    }
}

fn handle(mut stream: TcpStream, hash_body: &str, logits_body: &str) {
    let mut buf = Vec::new();
    let mut chunk = [0u8; 4096];
    loop {
        match stream.read(&mut chunk) {
            Ok(0) => break,
            Ok(n) => {
                buf.extend_from_slice(&chunk[..n]);
                if complete(&buf) {
                    break;
                }
            }
            Err(_) => return,
        }
    }
    let request = String::from_utf8_lossy(&buf);
    let (status, body) = if request.starts_with("GET /vocab_hash") {
        ("200 OK", hash_body)
    } else if request.starts_with("POST /logits") {
        ("200 OK", logits_body)
    } else {
        ("404 Not Found", "{}")
    };
    let response = format!(
        "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    let _ = stream.write_all(response.as_bytes());
}

fn complete(buf: &[u8]) -> bool {
    let Some(end) = buf.windows(4).position(|w| w == b"\r\n\r\n") else {
        return false;
    };
    let head = String::from_utf8_lossy(&buf[..end]);
    let length = head
        .lines()
        .find_map(|line| {
            let (name, value) = line.split_once(':')?;
            name.trim()
                .eq_ignore_ascii_case("content-length")
                .then(|| value.trim().parse::<usize>().ok())?
        })
        .unwrap_or(0);
    buf.len() >= end + 4 + length
}
