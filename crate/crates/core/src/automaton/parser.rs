//! Regex parser for the supported dialect.
//!
//! The dialect covers literals, character classes with ranges and `\xNN`
//! escapes, the predefined classes `\d \D \s \S \w \W`, `.`, alternation,
//! grouping (capturing groups are treated as plain groups), the quantifiers
//! `* + ? {m} {m,} {m,n}` (a trailing `?` lazy marker is accepted and
//! ignored: laziness does not change the matched language), and boundary
//! anchors `^`/`$` at the very start/end of the pattern. Backreferences,
//! lookaround, named groups, and inline flags are rejected with an error
//! naming the construct.
//!
//! All matching is over bytes: literals contribute their UTF-8 encoding,
//! classes are byte sets, and `.` matches any byte.

use crate::error::{Error, Result};

/// A set of byte values, stored as a 256-bit mask.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct ByteSet(pub [u64; 4]);

impl ByteSet {
    pub const EMPTY: ByteSet = ByteSet([0; 4]);

    pub fn full() -> Self {
        ByteSet([u64::MAX; 4])
    }

    pub fn singleton(b: u8) -> Self {
        let mut s = Self::EMPTY;
        s.insert(b);
        s
    }

    pub fn insert(&mut self, b: u8) {
        self.0[(b >> 6) as usize] |= 1u64 << (b & 63);
    }

    pub fn insert_range(&mut self, lo: u8, hi: u8) {
        for b in lo..=hi {
            self.insert(b);
        }
    }

    pub fn contains(&self, b: u8) -> bool {
        self.0[(b >> 6) as usize] & (1u64 << (b & 63)) != 0
    }

    pub fn union_with(&mut self, other: &ByteSet) {
        for i in 0..4 {
            self.0[i] |= other.0[i];
        }
    }

    pub fn negated(&self) -> ByteSet {
        let mut out = *self;
        for w in &mut out.0 {
            *w = !*w;
        }
        out
    }

    pub fn iter(&self) -> impl Iterator<Item = u8> + '_ {
        (0u16..256).map(|b| b as u8).filter(|b| self.contains(*b))
    }
}

impl std::fmt::Debug for ByteSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ByteSet{{")?;
        let mut first = true;
        for b in self.iter() {
            if !first {
                write!(f, ",")?;
            }
            first = false;
            if b.is_ascii_graphic() {
                write!(f, "{}", b as char)?;
            } else {
                write!(f, "{b:02x}")?;
            }
        }
        write!(f, "}}")
    }
}

/// Parsed pattern tree over byte classes.
#[derive(Debug, Clone)]
pub enum Ast {
    /// Matches the empty string.
    Empty,
    /// Matches one byte from the set.
    Class(ByteSet),
    Concat(Vec<Ast>),
    Alt(Vec<Ast>),
    Repeat {
        inner: Box<Ast>,
        min: u32,
        max: Option<u32>,
    },
}

/// Upper bound for counted repetitions; larger bounds would explode the
/// automaton long before the state budget check can catch it cheaply.
const MAX_COUNTED_REPEAT: u32 = 4096;

/// Parses a pattern, stripping an optional leading `^` and trailing `$`.
pub fn parse(pattern: &str) -> Result<Ast> {
    let (body, offset) = strip_anchors(pattern);
    let mut parser = Parser {
        src: body,
        pos: 0,
        offset,
    };
    let ast = parser.parse_alt()?;
    if parser.pos < parser.src.len() {
        // parse_alt only stops early on ')'.
        return Err(parser.syntax("unmatched ')'"));
    }
    Ok(ast)
}

/// Removes a full-match-redundant leading `^` and trailing unescaped `$`.
fn strip_anchors(pattern: &str) -> (&str, usize) {
    let mut body = pattern;
    let mut offset = 0;
    if let Some(rest) = body.strip_prefix('^') {
        body = rest;
        offset = 1;
    }
    if body.ends_with('$') {
        let trailing_backslashes = body[..body.len() - 1]
            .bytes()
            .rev()
            .take_while(|b| *b == b'\\')
            .count();
        if trailing_backslashes % 2 == 0 {
            body = &body[..body.len() - 1];
        }
    }
    (body, offset)
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
    /// Byte offset of `src` within the original pattern, for diagnostics.
    offset: usize,
}

impl<'a> Parser<'a> {
    fn syntax(&self, message: impl Into<String>) -> Error {
        Error::Syntax {
            position: self.offset + self.pos,
            message: message.into(),
        }
    }

    fn unsupported(&self, construct: impl Into<String>) -> Error {
        Error::Unsupported {
            position: self.offset + self.pos,
            construct: construct.into(),
        }
    }

    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(c) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn parse_alt(&mut self) -> Result<Ast> {
        let mut branches = vec![self.parse_concat()?];
        while self.eat('|') {
            branches.push(self.parse_concat()?);
        }
        if branches.len() == 1 {
            Ok(branches.pop().unwrap())
        } else {
            Ok(Ast::Alt(branches))
        }
    }

    fn parse_concat(&mut self) -> Result<Ast> {
        let mut items = Vec::new();
        loop {
            match self.peek() {
                None | Some('|') | Some(')') => break,
                _ => items.push(self.parse_repeat()?),
            }
        }
        match items.len() {
            0 => Ok(Ast::Empty),
            1 => Ok(items.pop().unwrap()),
            _ => Ok(Ast::Concat(items)),
        }
    }

    fn parse_repeat(&mut self) -> Result<Ast> {
        let mut node = self.parse_atom()?;
        if let Some((min, max)) = self.parse_quantifier()? {
            node = Ast::Repeat {
                inner: Box::new(node),
                min,
                max,
            };
            // One lazy marker is tolerated; stacked quantifiers are not.
            self.eat('?');
            if matches!(self.peek(), Some('*') | Some('+') | Some('?') | Some('{')) {
                return Err(self.syntax("multiple quantifiers on one atom"));
            }
        }
        Ok(node)
    }

    fn parse_quantifier(&mut self) -> Result<Option<(u32, Option<u32>)>> {
        match self.peek() {
            Some('*') => {
                self.bump();
                Ok(Some((0, None)))
            }
            Some('+') => {
                self.bump();
                Ok(Some((1, None)))
            }
            Some('?') => {
                self.bump();
                Ok(Some((0, Some(1))))
            }
            Some('{') => {
                self.bump();
                let min = self.parse_count()?;
                let max = if self.eat(',') {
                    if self.peek() == Some('}') {
                        None
                    } else {
                        Some(self.parse_count()?)
                    }
                } else {
                    Some(min)
                };
                if !self.eat('}') {
                    return Err(self.syntax("expected '}' to close repetition"));
                }
                if let Some(max) = max {
                    if max < min {
                        return Err(self.syntax("repetition bounds out of order"));
                    }
                }
                Ok(Some((min, max)))
            }
            _ => Ok(None),
        }
    }

    fn parse_count(&mut self) -> Result<u32> {
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
            self.bump();
        }
        if self.pos == start {
            return Err(self.syntax("expected repetition count"));
        }
        let n: u32 = self.src[start..self.pos]
            .parse()
            .map_err(|_| self.syntax("repetition count too large"))?;
        if n > MAX_COUNTED_REPEAT {
            return Err(self.syntax(format!(
                "repetition count {n} exceeds limit {MAX_COUNTED_REPEAT}"
            )));
        }
        Ok(n)
    }

    fn parse_atom(&mut self) -> Result<Ast> {
        match self.peek() {
            Some('(') => {
                self.bump();
                if self.eat('?') {
                    match self.peek() {
                        Some(':') => {
                            self.bump();
                        }
                        Some('=') | Some('!') => return Err(self.unsupported("lookahead")),
                        Some('<') => return Err(self.unsupported("lookbehind or named group")),
                        Some('P') => return Err(self.unsupported("named group")),
                        _ => return Err(self.unsupported("inline flag group")),
                    }
                }
                let inner = self.parse_alt()?;
                if !self.eat(')') {
                    return Err(self.syntax("unclosed group"));
                }
                Ok(inner)
            }
            Some('[') => {
                self.bump();
                self.parse_class()
            }
            Some('.') => {
                self.bump();
                Ok(Ast::Class(ByteSet::full()))
            }
            Some('\\') => {
                self.bump();
                match self.parse_escape(false)? {
                    EscapeItem::Byte(b) => Ok(Ast::Class(ByteSet::singleton(b))),
                    EscapeItem::Class(set) => Ok(Ast::Class(set)),
                }
            }
            Some('*') | Some('+') | Some('?') | Some('{') => {
                Err(self.syntax("quantifier without a preceding atom"))
            }
            Some('^') | Some('$') => Err(self.unsupported(
                "anchor inside pattern (anchors are only supported at the pattern boundaries)",
            )),
            Some(c) => {
                self.bump();
                Ok(literal_char(c))
            }
            None => Err(self.syntax("unexpected end of pattern")),
        }
    }

    fn parse_class(&mut self) -> Result<Ast> {
        let negate = self.eat('^');
        let mut set = ByteSet::EMPTY;
        let mut first = true;
        loop {
            let item = match self.peek() {
                None => return Err(self.syntax("unterminated character class")),
                Some(']') if !first => {
                    self.bump();
                    break;
                }
                _ => self.parse_class_item()?,
            };
            first = false;
            // A following '-' introduces a range unless it closes the class.
            let starts_range = self.peek() == Some('-') && {
                let mut look = self.src[self.pos..].chars();
                look.next();
                !matches!(look.next(), Some(']') | None)
            };
            if starts_range {
                self.bump();
                let lo = match item {
                    ClassItem::Byte(b) => b,
                    ClassItem::Class(_) => {
                        return Err(self.syntax("character class cannot be a range endpoint"))
                    }
                };
                let hi = match self.parse_class_item()? {
                    ClassItem::Byte(b) => b,
                    ClassItem::Class(_) => {
                        return Err(self.syntax("character class cannot be a range endpoint"))
                    }
                };
                if hi < lo {
                    return Err(self.syntax("range out of order in character class"));
                }
                set.insert_range(lo, hi);
            } else {
                match item {
                    ClassItem::Byte(b) => set.insert(b),
                    ClassItem::Class(inner) => set.union_with(&inner),
                }
            }
        }
        if negate {
            set = set.negated();
        }
        Ok(Ast::Class(set))
    }

    fn parse_class_item(&mut self) -> Result<ClassItem> {
        match self.bump() {
            Some('\\') => match self.parse_escape(true)? {
                EscapeItem::Byte(b) => Ok(ClassItem::Byte(b)),
                EscapeItem::Class(set) => Ok(ClassItem::Class(set)),
            },
            Some(c) if c.is_ascii() => Ok(ClassItem::Byte(c as u8)),
            Some(c) => {
                self.pos -= c.len_utf8();
                Err(self.unsupported(format!(
                    "non-ASCII literal '{c}' in character class (use \\xNN byte escapes)"
                )))
            }
            None => Err(self.syntax("unterminated character class")),
        }
    }

    fn parse_escape(&mut self, in_class: bool) -> Result<EscapeItem> {
        let c = match self.bump() {
            Some(c) => c,
            None => return Err(self.syntax("dangling escape at end of pattern")),
        };
        let item = match c {
            'x' => {
                let hi = self
                    .bump()
                    .ok_or_else(|| self.syntax("truncated \\x escape"))?;
                let lo = self
                    .bump()
                    .ok_or_else(|| self.syntax("truncated \\x escape"))?;
                if hi == '{' {
                    return Err(self.unsupported("\\x{...} escape (only \\xNN is supported)"));
                }
                let hex: String = [hi, lo].iter().collect();
                let byte = u8::from_str_radix(&hex, 16)
                    .map_err(|_| self.syntax(format!("invalid hex escape \\x{hex}")))?;
                EscapeItem::Byte(byte)
            }
            'n' => EscapeItem::Byte(b'\n'),
            'r' => EscapeItem::Byte(b'\r'),
            't' => EscapeItem::Byte(b'\t'),
            'f' => EscapeItem::Byte(0x0c),
            'v' => EscapeItem::Byte(0x0b),
            'a' => EscapeItem::Byte(0x07),
            '0' => EscapeItem::Byte(0x00),
            'd' => EscapeItem::Class(digit_class()),
            'D' => EscapeItem::Class(digit_class().negated()),
            's' => EscapeItem::Class(space_class()),
            'S' => EscapeItem::Class(space_class().negated()),
            'w' => EscapeItem::Class(word_class()),
            'W' => EscapeItem::Class(word_class().negated()),
            'b' if in_class => EscapeItem::Byte(0x08),
            'b' | 'B' => return Err(self.unsupported("word boundary escape")),
            '1'..='9' => return Err(self.unsupported("backreference")),
            c if c.is_ascii() && !c.is_ascii_alphanumeric() => EscapeItem::Byte(c as u8),
            c => return Err(self.syntax(format!("unknown escape \\{c}"))),
        };
        Ok(item)
    }
}

enum ClassItem {
    Byte(u8),
    Class(ByteSet),
}

enum EscapeItem {
    Byte(u8),
    Class(ByteSet),
}

fn literal_char(c: char) -> Ast {
    let mut buf = [0u8; 4];
    let bytes = c.encode_utf8(&mut buf).as_bytes();
    if bytes.len() == 1 {
        Ast::Class(ByteSet::singleton(bytes[0]))
    } else {
        Ast::Concat(
            bytes
                .iter()
                .map(|b| Ast::Class(ByteSet::singleton(*b)))
                .collect(),
        )
    }
}

fn digit_class() -> ByteSet {
    let mut s = ByteSet::EMPTY;
    s.insert_range(b'0', b'9');
    s
}

fn space_class() -> ByteSet {
    let mut s = ByteSet::EMPTY;
    for b in [b' ', b'\t', b'\n', b'\r', 0x0b, 0x0c] {
        s.insert(b);
    }
    s
}

fn word_class() -> ByteSet {
    let mut s = ByteSet::EMPTY;
    s.insert_range(b'a', b'z');
    s.insert_range(b'A', b'Z');
    s.insert_range(b'0', b'9');
    s.insert(b'_');
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse_ok(p: &str) -> Ast {
        parse(p).unwrap()
    }

    #[test]
    fn literals_and_alternation() {
        parse_ok("ab|ac");
        parse_ok("");
        parse_ok("a(b|c)d");
    }

    #[test]
    fn classes_ranges_and_escapes() {
        parse_ok("[a-z0-9!#$%&'*+/=?^_`{|}~-]+");
        parse_ok("[\\x01-\\x08\\x0b\\x0c\\x0e-\\x1f]");
        parse_ok("[^bB]");
        parse_ok("[]]");
        parse_ok("\\d+\\s*\\w");
    }

    #[test]
    fn quantifiers() {
        parse_ok("a{3}");
        parse_ok("a{2,}");
        parse_ok("a{2,5}");
        parse_ok("(?:.+?)");
        parse_ok("(?:ab){3}c?");
    }

    #[test]
    fn anchors_only_at_boundaries() {
        parse_ok("^abc$");
        parse_ok("abc\\$");
        assert!(matches!(
            parse("a$b"),
            Err(Error::Unsupported { .. })
        ));
    }

    #[test]
    fn errors_carry_positions() {
        match parse("ab(") {
            Err(Error::Syntax { position, .. }) => assert_eq!(position, 3),
            other => panic!("expected syntax error, got {other:?}"),
        }
        match parse("a(?=b)") {
            Err(Error::Unsupported { construct, .. }) => {
                assert!(construct.contains("lookahead"))
            }
            other => panic!("expected unsupported error, got {other:?}"),
        }
        assert!(matches!(parse("a\\1"), Err(Error::Unsupported { .. })));
        assert!(matches!(parse("*a"), Err(Error::Syntax { .. })));
        assert!(matches!(parse("a{5,2}"), Err(Error::Syntax { .. })));
    }

    #[test]
    fn byteset_ops() {
        let mut s = ByteSet::EMPTY;
        s.insert_range(b'a', b'c');
        assert!(s.contains(b'b'));
        assert!(!s.contains(b'd'));
        assert_eq!(s.iter().count(), 3);
        let n = s.negated();
        assert!(!n.contains(b'b'));
        assert_eq!(n.iter().count(), 253);
        assert!(ByteSet::full().contains(0xff));
    }
}
