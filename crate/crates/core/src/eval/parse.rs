//! Recovering tool calls from raw model text.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Number, Value};

use crate::runtime::ToolCall;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseStage {
    Json,
    Literal,
    XmlTags,
    FencedBlock,
    Failed,
}

impl ParseStage {
    pub const ALL: [ParseStage; 5] =
        [ParseStage::Json, ParseStage::Literal, ParseStage::XmlTags, ParseStage::FencedBlock, ParseStage::Failed];

    pub fn name(self) -> &'static str {
        match self {
            ParseStage::Json => "json",
            ParseStage::Literal => "literal",
            ParseStage::XmlTags => "xml_tags",
            ParseStage::FencedBlock => "fenced_block",
            ParseStage::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedPrediction {
    pub calls: Vec<ToolCall>,
    pub parse_stage: ParseStage,
    pub raw_text: String,
    /// Top-level items recovered after flattening, well-formed or not.
    pub item_count: usize,
    /// Set when the text parsed but is not a list of `{name, arguments}` objects.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format_error: Option<String>,
}

fn json_document(text: &str) -> Option<Value> {
    let t = text.trim();
    if t.is_empty() {
        return None;
    }
    if let Ok(v) = serde_json::from_str(t) {
        return Some(v);
    }
    // JSONL: every non-blank line is a document.
    let lines: Vec<&str> = t.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    if lines.len() > 1 {
        let docs: Option<Vec<Value>> = lines.iter().map(|l| serde_json::from_str(l).ok()).collect();
        return docs.map(Value::Array);
    }
    None
}

/// Tries the whole text, then the suffix from the first opening bracket.
fn with_prose_stripped(text: &str, parse: impl Fn(&str) -> Option<Value>) -> Option<Value> {
    if let Some(v) = parse(text) {
        return Some(v);
    }
    let mut starts: Vec<usize> = ['[', '{', '('].iter().filter_map(|c| text.find(*c)).collect();
    starts.sort_unstable();
    starts.into_iter().filter(|&s| s > 0).find_map(|s| parse(&text[s..]))
}

fn xml_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?s)<tool_call>\s*(.*?)\s*</tool_call>").unwrap())
}

fn fence_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?s)```json\s*(.*?)\s*```").unwrap())
}

fn any_document(text: &str) -> Option<Value> {
    json_document(text).or_else(|| python_literal(text))
}

fn stage_value(text: &str) -> Option<(ParseStage, Value)> {
    if let Some(v) = with_prose_stripped(text, json_document) {
        return Some((ParseStage::Json, v));
    }
    if let Some(v) = with_prose_stripped(text, python_literal) {
        return Some((ParseStage::Literal, v));
    }
    let blocks: Vec<&str> = xml_pattern().captures_iter(text).map(|c| c.get(1).unwrap().as_str()).collect();
    if !blocks.is_empty() {
        let parsed: Option<Vec<Value>> = blocks.iter().map(|b| any_document(b)).collect();
        if let Some(values) = parsed {
            return Some((ParseStage::XmlTags, Value::Array(values)));
        }
    }
    fence_pattern()
        .captures_iter(text)
        .filter_map(|c| any_document(c.get(1).unwrap().as_str()))
        .last()
        .map(|v| (ParseStage::FencedBlock, v))
}

fn flatten(value: Value, out: &mut Vec<Value>) {
    match value {
        Value::Array(items) => items.into_iter().for_each(|v| flatten(v, out)),
        other => out.push(other),
    }
}

fn to_call(item: &Value) -> Result<ToolCall, String> {
    let obj = item.as_object().ok_or_else(|| format!("item is not an object: {item}"))?;
    let name = obj.get("name").and_then(Value::as_str).ok_or("missing string `name`")?;
    let arguments = match obj.get("arguments") {
        None | Some(Value::Null) => Map::new(),
        Some(Value::Object(m)) => m.clone(),
        Some(Value::String(s)) => match serde_json::from_str(s) {
            Ok(Value::Object(m)) => m,
            _ => return Err(format!("`arguments` of `{name}` is not an object")),
        },
        Some(_) => return Err(format!("`arguments` of `{name}` is not an object")),
    };
    let label = match obj.get("label") {
        Some(Value::String(s)) => Some(s.clone()),
        _ => None,
    };
    Ok(ToolCall { name: name.to_string(), arguments, label })
}

/// Four stages, first success wins: strict JSON or JSONL, Python literal,
/// `<tool_call>` tags, and the last parseable fenced json block.
pub fn parse_model_output(text: &str) -> ParsedPrediction {
    let raw_text = text.to_string();
    let Some((stage, value)) = stage_value(text) else {
        return ParsedPrediction {
            calls: Vec::new(),
            parse_stage: ParseStage::Failed,
            raw_text,
            item_count: 0,
            format_error: None,
        };
    };
    let mut items = Vec::new();
    flatten(value, &mut items);
    let converted: Result<Vec<ToolCall>, String> = items.iter().map(to_call).collect();
    let (calls, format_error) = match converted {
        Ok(c) if !c.is_empty() => (c, None),
        Ok(_) => (Vec::new(), Some("no calls".to_string())),
        Err(e) => (Vec::new(), Some(e)),
    };
    ParsedPrediction { calls, parse_stage: stage, raw_text, item_count: items.len(), format_error }
}

/// Parses a Python literal (dict, list, tuple, str, number, True/False/None)
/// into JSON. The whole text must be consumed.
pub fn python_literal(text: &str) -> Option<Value> {
    let mut p = LiteralParser { s: text.as_bytes(), i: 0, src: text };
    let v = p.value()?;
    p.ws();
    (p.i == p.s.len()).then_some(v)
}

struct LiteralParser<'a> {
    s: &'a [u8],
    i: usize,
    src: &'a str,
}

impl LiteralParser<'_> {
    fn ws(&mut self) {
        while self.i < self.s.len() && self.s[self.i].is_ascii_whitespace() {
            self.i += 1;
        }
    }

    fn peek(&self) -> Option<u8> {
        self.s.get(self.i).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        self.ws();
        if self.peek() == Some(c) {
            self.i += 1;
            true
        } else {
            false
        }
    }

    fn value(&mut self) -> Option<Value> {
        self.ws();
        match self.peek()? {
            b'{' => self.dict(),
            b'[' => self.seq(b']').map(Value::Array),
            b'(' => self.seq(b')').map(Value::Array),
            b'\'' | b'"' => {
                let mut s = self.string()?;
                // Adjacent literals concatenate.
                loop {
                    self.ws();
                    match self.peek() {
                        Some(b'\'' | b'"') => s.push_str(&self.string()?),
                        _ => break,
                    }
                }
                Some(Value::String(s))
            }
            _ => self.word(),
        }
    }

    fn dict(&mut self) -> Option<Value> {
        self.i += 1;
        let mut m = Map::new();
        loop {
            if self.eat(b'}') {
                return Some(Value::Object(m));
            }
            let key = match self.value()? {
                Value::String(s) => s,
                Value::Number(n) => n.to_string(),
                _ => return None,
            };
            if !self.eat(b':') {
                return None;
            }
            let v = self.value()?;
            m.insert(key, v);
            if !self.eat(b',') {
                return self.eat(b'}').then_some(Value::Object(m));
            }
        }
    }

    fn seq(&mut self, close: u8) -> Option<Vec<Value>> {
        self.i += 1;
        let mut out = Vec::new();
        loop {
            if self.eat(close) {
                return Some(out);
            }
            out.push(self.value()?);
            if !self.eat(b',') {
                return self.eat(close).then_some(out);
            }
        }
    }

    fn string(&mut self) -> Option<String> {
        let quote = self.s[self.i];
        self.i += 1;
        let mut out = String::new();
        let mut chars = self.src[self.i..].char_indices();
        while let Some((off, c)) = chars.next() {
            if c as u32 == quote as u32 {
                self.i += off + 1;
                return Some(out);
            }
            if c != '\\' {
                out.push(c);
                continue;
            }
            let (_, e) = chars.next()?;
            match e {
                'n' => out.push('\n'),
                't' => out.push('\t'),
                'r' => out.push('\r'),
                '0' => out.push('\0'),
                'u' => {
                    let hex: String = (0..4).filter_map(|_| chars.next().map(|(_, h)| h)).collect();
                    out.push(char::from_u32(u32::from_str_radix(&hex, 16).ok()?)?);
                }
                other => out.push(other),
            }
        }
        None
    }

    fn word(&mut self) -> Option<Value> {
        let start = self.i;
        while self.i < self.s.len() && (self.s[self.i].is_ascii_alphanumeric() || b"+-._".contains(&self.s[self.i])) {
            self.i += 1;
        }
        let w = &self.src[start..self.i];
        match w {
            "True" => Some(Value::Bool(true)),
            "False" => Some(Value::Bool(false)),
            "None" => Some(Value::Null),
            _ => {
                let w = w.replace('_', "");
                if let Ok(i) = w.parse::<i64>() {
                    Some(Value::Number(i.into()))
                } else {
                    w.parse::<f64>().ok().filter(|f| f.is_finite()).and_then(Number::from_f64).map(Value::Number)
                }
            }
        }
    }
}
