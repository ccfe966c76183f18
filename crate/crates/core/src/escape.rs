//! Lossless printable escaping for byte strings.
//!
//! Vocabulary files, run records, and diagnostics all need to carry arbitrary
//! token bytes through JSON documents and TSV columns. The convention here is
//! `\\`, `\t`, `\n`, `\r` for the common cases and `\xNN` for everything else
//! outside printable ASCII. Escaping is the identity on printable text that
//! contains no backslash.

/// Encodes raw bytes into the printable escaped form.
pub fn escape_bytes(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len());
    for &b in bytes {
        match b {
            b'\\' => out.push_str("\\\\"),
            b'\t' => out.push_str("\\t"),
            b'\n' => out.push_str("\\n"),
            b'\r' => out.push_str("\\r"),
            0x20..=0x7e => out.push(b as char),
            _ => {
                out.push_str(&format!("\\x{b:02x}"));
            }
        }
    }
    out
}

/// Decodes the escaped form back into raw bytes.
///
/// Characters outside the escape sequences pass through as their UTF-8 bytes,
/// so already-plain text decodes to itself.
pub fn unescape_bytes(text: &str) -> Result<Vec<u8>, String> {
    let mut out = Vec::with_capacity(text.len());
    let mut chars = text.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            let mut buf = [0u8; 4];
            out.extend_from_slice(c.encode_utf8(&mut buf).as_bytes());
            continue;
        }
        match chars.next() {
            Some('\\') => out.push(b'\\'),
            Some('t') => out.push(b'\t'),
            Some('n') => out.push(b'\n'),
            Some('r') => out.push(b'\r'),
            Some('x') => {
                let hi = chars.next().ok_or("truncated \\x escape")?;
                let lo = chars.next().ok_or("truncated \\x escape")?;
                let hex: String = [hi, lo].iter().collect();
                let byte = u8::from_str_radix(&hex, 16)
                    .map_err(|_| format!("invalid \\x escape \\x{hex}"))?;
                out.push(byte);
            }
            Some(other) => return Err(format!("unknown escape \\{other}")),
            None => return Err("dangling backslash".to_string()),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_text_is_identity() {
        assert_eq!(escape_bytes(b"hello world"), "hello world");
        assert_eq!(unescape_bytes("hello world").unwrap(), b"hello world");
    }

    #[test]
    fn control_and_high_bytes_roundtrip() {
        let raw: Vec<u8> = vec![0x00, 0x09, 0x0a, 0x5c, 0x7f, 0x80, 0xff, b'a'];
        let escaped = escape_bytes(&raw);
        assert_eq!(unescape_bytes(&escaped).unwrap(), raw);
        assert_eq!(escaped, "\\x00\\t\\n\\\\\\x7f\\x80\\xffa");
    }

    #[test]
    fn bad_escapes_are_rejected() {
        assert!(unescape_bytes("\\q").is_err());
        assert!(unescape_bytes("\\x9").is_err());
        assert!(unescape_bytes("trailing\\").is_err());
    }
}
