//! Tolerant reader for the dictionary-literal payloads language models
//! produce: JSON, Python-style single-quoted dicts, bare words, and stray
//! unescaped quotes inside strings.

/// A value inside a payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LiteralValue {
    Str(String),
    Word(String),
    List(Vec<LiteralValue>),
    Dict(Vec<(String, LiteralValue)>),
}

impl LiteralValue {
    /// Scalar text of the value; the first element for lists.
    pub fn as_text(&self) -> Option<String> {
        match self {
            LiteralValue::Str(s) | LiteralValue::Word(s) => Some(s.clone()),
            LiteralValue::List(items) => items.first().and_then(LiteralValue::as_text),
            LiteralValue::Dict(_) => None,
        }
    }

    /// Every scalar as a string list; a scalar yields one entry.
    pub fn as_text_list(&self) -> Vec<String> {
        match self {
            LiteralValue::Str(s) | LiteralValue::Word(s) => vec![s.clone()],
            LiteralValue::List(items) => items.iter().filter_map(LiteralValue::as_text).collect(),
            LiteralValue::Dict(_) => Vec::new(),
        }
    }

    fn from_json(v: serde_json::Value) -> Self {
        match v {
            serde_json::Value::String(s) => LiteralValue::Str(s),
            serde_json::Value::Array(items) => LiteralValue::List(items.into_iter().map(Self::from_json).collect()),
            serde_json::Value::Object(map) => {
                LiteralValue::Dict(map.into_iter().map(|(k, v)| (k, Self::from_json(v))).collect())
            }
            serde_json::Value::Null => LiteralValue::Word("None".into()),
            other => LiteralValue::Word(other.to_string()),
        }
    }
}

/// Parses a brace-delimited payload into ordered key/value pairs.
pub fn parse_dict(text: &str) -> Option<Vec<(String, LiteralValue)>> {
    if let Ok(serde_json::Value::Object(map)) = serde_json::from_str::<serde_json::Value>(text) {
        return Some(map.into_iter().map(|(k, v)| (k, LiteralValue::from_json(v))).collect());
    }
    let mut p = Parser { chars: text.chars().collect(), pos: 0 };
    p.skip_ws();
    let dict = p.dict()?;
    p.skip_ws();
    (p.pos == p.chars.len()).then_some(dict)
}

struct Parser {
    chars: Vec<char>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(char::is_whitespace) {
            self.pos += 1;
        }
    }

    fn eat(&mut self, c: char) -> bool {
        self.skip_ws();
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn dict(&mut self) -> Option<Vec<(String, LiteralValue)>> {
        if !self.eat('{') {
            return None;
        }
        let mut out = Vec::new();
        loop {
            if self.eat('}') {
                return Some(out);
            }
            let key = match self.value(&[':'])? {
                LiteralValue::Str(s) | LiteralValue::Word(s) => s,
                _ => return None,
            };
            if !self.eat(':') {
                return None;
            }
            let value = self.value(&[',', '}'])?;
            out.push((key, value));
            if !self.eat(',') {
                return self.eat('}').then_some(out);
            }
        }
    }

    fn list(&mut self, close: char) -> Option<Vec<LiteralValue>> {
        self.pos += 1;
        let mut out = Vec::new();
        loop {
            if self.eat(close) {
                return Some(out);
            }
            out.push(self.value(&[',', close])?);
            if !self.eat(',') {
                return self.eat(close).then_some(out);
            }
        }
    }

    fn value(&mut self, terminators: &[char]) -> Option<LiteralValue> {
        self.skip_ws();
        match self.peek()? {
            '{' => self.dict().map(LiteralValue::Dict),
            '[' => self.list(']').map(LiteralValue::List),
            '(' if !self.looks_like_option_word() => self.list(')').map(LiteralValue::List),
            q @ ('"' | '\'') => self.string(q, terminators).map(LiteralValue::Str),
            _ => self.word(terminators).map(LiteralValue::Word),
        }
    }

    /// `(b) Social Bonding` written without quotes is a word, not a tuple.
    fn looks_like_option_word(&self) -> bool {
        matches!(
            (self.chars.get(self.pos + 1), self.chars.get(self.pos + 2)),
            (Some(c), Some(')')) if c.is_ascii_alphabetic()
        )
    }

    /// A quote closes the string only when what follows is a terminator;
    /// otherwise it is taken literally.
    fn string(&mut self, quote: char, terminators: &[char]) -> Option<String> {
        self.pos += 1;
        let mut out = String::new();
        while let Some(c) = self.peek() {
            self.pos += 1;
            if c == '\\' {
                let esc = self.peek()?;
                self.pos += 1;
                out.push(match esc {
                    'n' => '\n',
                    't' => '\t',
                    'r' => '\r',
                    other => other,
                });
            } else if c == quote {
                let mut look = self.pos;
                while self.chars.get(look).is_some_and(|c| c.is_whitespace()) {
                    look += 1;
                }
                match self.chars.get(look) {
                    None => return Some(out),
                    Some(next) if terminators.contains(next) || matches!(next, ',' | '}' | ']' | ')' | ':') => {
                        return Some(out)
                    }
                    Some(_) => out.push(c),
                }
            } else {
                out.push(c);
            }
        }
        None
    }

    fn word(&mut self, terminators: &[char]) -> Option<String> {
        let start = self.pos;
        while let Some(c) = self.peek() {
            if terminators.contains(&c) || matches!(c, '}' | ']') {
                break;
            }
            self.pos += 1;
        }
        let w: String = self.chars[start..self.pos].iter().collect();
        let w = w.trim().to_owned();
        (!w.is_empty()).then_some(w)
    }
}
