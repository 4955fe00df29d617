//! Shared vocabulary: tokens, tool specifications, tool calls, canonical keys,
//! and conversation turns.
//!
//! A tool call travels inside a `TOOL_START … TOOL_END` span. The interior
//! TEXT tokens concatenate to a payload of the form `name {json-object}`,
//! where the object holds flat scalar arguments.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// Characters per mock token. Every text payload is chunked at this width.
pub const CHARS_PER_TOKEN: usize = 4;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DomainError {
    #[error("invalid tool call: {0}")]
    InvalidCall(String),
    #[error("no tool call in token sequence")]
    NoToolCall,
    #[error("malformed tool call: {0}")]
    MalformedToolCall(String),
    #[error("unknown tool `{0}` for the active toolset")]
    UnknownTool(String),
    #[error("duplicate tool name `{0}` in toolset")]
    DuplicateTool(String),
    #[error("token stream violates marker rules: {0}")]
    InvalidTokens(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TokenKind {
    Text,
    ToolStart,
    ToolEnd,
    Eos,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Token {
    pub kind: TokenKind,
    pub text: String,
}

impl Token {
    pub fn text(s: impl Into<String>) -> Self {
        Self {
            kind: TokenKind::Text,
            text: s.into(),
        }
    }

    pub fn tool_start() -> Self {
        Self {
            kind: TokenKind::ToolStart,
            text: String::new(),
        }
    }

    pub fn tool_end() -> Self {
        Self {
            kind: TokenKind::ToolEnd,
            text: String::new(),
        }
    }

    pub fn eos() -> Self {
        Self {
            kind: TokenKind::Eos,
            text: String::new(),
        }
    }
}

/// Splits text into TEXT tokens of at most [`CHARS_PER_TOKEN`] characters.
pub fn tokenize(text: &str) -> Vec<Token> {
    let chars: Vec<char> = text.chars().collect();
    chars
        .chunks(CHARS_PER_TOKEN)
        .map(|c| Token::text(c.iter().collect::<String>()))
        .collect()
}

/// Number of tokens [`tokenize`] produces for `text`.
pub fn token_count(text: &str) -> usize {
    text.chars().count().div_ceil(CHARS_PER_TOKEN)
}

/// Checks the marker rules: EOS only as the final token, and every
/// TOOL_START closed by a TOOL_END before EOS or the next TOOL_START.
pub fn check_tokens(tokens: &[Token]) -> Result<(), DomainError> {
    let mut open = false;
    for (i, tok) in tokens.iter().enumerate() {
        match tok.kind {
            TokenKind::Eos => {
                if i + 1 != tokens.len() {
                    return Err(DomainError::InvalidTokens(format!(
                        "EOS at position {i} is not final"
                    )));
                }
                if open {
                    return Err(DomainError::InvalidTokens("EOS inside tool span".into()));
                }
            }
            TokenKind::ToolStart => {
                if open {
                    return Err(DomainError::InvalidTokens(format!(
                        "nested TOOL_START at position {i}"
                    )));
                }
                open = true;
            }
            TokenKind::ToolEnd => {
                if !open {
                    return Err(DomainError::InvalidTokens(format!(
                        "TOOL_END without TOOL_START at position {i}"
                    )));
                }
                open = false;
            }
            TokenKind::Text => {}
        }
    }
    if open {
        return Err(DomainError::InvalidTokens("unterminated tool span".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalarKind {
    String,
    Number,
    Bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CostClass {
    Cheap,
    Expensive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub kind: ScalarKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    #[serde(default)]
    pub params: Vec<ParamSpec>,
    pub stateless: bool,
    pub cost_class: CostClass,
}

impl ToolSpec {
    /// Only stateless, cheap tools may run before the main model asks for them.
    pub fn speculable(&self) -> bool {
        self.stateless && self.cost_class == CostClass::Cheap
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ToolSpec>", into = "Vec<ToolSpec>")]
pub struct Toolset {
    specs: Vec<ToolSpec>,
}

impl Toolset {
    pub fn new(specs: Vec<ToolSpec>) -> Result<Self, DomainError> {
        let mut seen = HashSet::new();
        for s in &specs {
            if !seen.insert(s.name.as_str()) {
                return Err(DomainError::DuplicateTool(s.name.clone()));
            }
        }
        Ok(Self { specs })
    }

    pub fn get(&self, name: &str) -> Option<&ToolSpec> {
        self.specs.iter().find(|s| s.name == name)
    }

    pub fn specs(&self) -> &[ToolSpec] {
        &self.specs
    }

    pub fn validate(&self, call: &ToolCall) -> Result<(), DomainError> {
        self.get(&call.name)
            .map(|_| ())
            .ok_or_else(|| DomainError::UnknownTool(call.name.clone()))
    }

    pub fn is_speculable(&self, name: &str) -> bool {
        self.get(name).is_some_and(ToolSpec::speculable)
    }
}

impl TryFrom<Vec<ToolSpec>> for Toolset {
    type Error = DomainError;

    fn try_from(specs: Vec<ToolSpec>) -> Result<Self, Self::Error> {
        Self::new(specs)
    }
}

impl From<Toolset> for Vec<ToolSpec> {
    fn from(t: Toolset) -> Self {
        t.specs
    }
}

/// A flat argument value. Integers and floats share one numeric domain so
/// that `3` and `3.0` are the same argument.
#[derive(Debug, Clone, PartialEq)]
pub enum Scalar {
    Str(String),
    Num(f64),
    Bool(bool),
    Null,
}

impl Scalar {
    fn from_json(v: &Value) -> Result<Self, String> {
        match v {
            Value::String(s) => Ok(Scalar::Str(s.clone())),
            Value::Number(n) => n
                .as_f64()
                .map(Scalar::Num)
                .ok_or_else(|| format!("unrepresentable number {n}")),
            Value::Bool(b) => Ok(Scalar::Bool(*b)),
            Value::Null => Ok(Scalar::Null),
            Value::Array(_) | Value::Object(_) => Err("nested arguments are not supported".into()),
        }
    }

    fn to_json(&self) -> Value {
        match self {
            Scalar::Str(s) => Value::String(s.clone()),
            Scalar::Num(n) => serde_json::Number::from_f64(*n)
                .map(Value::Number)
                .unwrap_or(Value::Null),
            Scalar::Bool(b) => Value::Bool(*b),
            Scalar::Null => Value::Null,
        }
    }

    /// Canonical text: shortest round-trip decimal for numbers, JSON-escaped strings.
    fn write_canonical(&self, out: &mut String) {
        match self {
            Scalar::Str(s) => out.push_str(&Value::String(s.clone()).to_string()),
            Scalar::Num(n) => out.push_str(&canonical_number(*n)),
            Scalar::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
            Scalar::Null => out.push_str("null"),
        }
    }
}

impl From<&str> for Scalar {
    fn from(s: &str) -> Self {
        Scalar::Str(s.to_string())
    }
}

impl From<String> for Scalar {
    fn from(s: String) -> Self {
        Scalar::Str(s)
    }
}

impl From<f64> for Scalar {
    fn from(n: f64) -> Self {
        Scalar::Num(n)
    }
}

impl From<i64> for Scalar {
    fn from(n: i64) -> Self {
        Scalar::Num(n as f64)
    }
}

impl From<bool> for Scalar {
    fn from(b: bool) -> Self {
        Scalar::Bool(b)
    }
}

fn canonical_number(n: f64) -> String {
    if n == 0.0 {
        // folds -0 into 0
        return "0".to_string();
    }
    // Display for f64 is the shortest string that round-trips, never exponent form.
    format!("{n}")
}

/// A named invocation with ordered, flat arguments.
#[derive(Debug, Clone, PartialEq)]
pub struct ToolCall {
    pub name: String,
    pub args: Vec<(String, Scalar)>,
}

impl ToolCall {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            args: Vec::new(),
        }
    }

    pub fn arg(mut self, key: impl Into<String>, value: impl Into<Scalar>) -> Self {
        self.args.push((key.into(), value.into()));
        self
    }

    pub fn get(&self, key: &str) -> Option<&Scalar> {
        self.args.iter().find(|(k, _)| k == key).map(|(_, v)| v)
    }

    fn check_unique(&self) -> Result<(), DomainError> {
        if self.name.is_empty() {
            return Err(DomainError::InvalidCall("empty tool name".into()));
        }
        if self.name.contains(char::is_whitespace) {
            return Err(DomainError::InvalidCall(format!(
                "tool name `{}` contains whitespace",
                self.name
            )));
        }
        let mut seen = HashSet::new();
        for (k, _) in &self.args {
            if !seen.insert(k.as_str()) {
                return Err(DomainError::InvalidCall(format!("duplicate argument `{k}`")));
            }
        }
        Ok(())
    }

    /// Arguments as a JSON object, in call order.
    pub fn args_json(&self) -> Map<String, Value> {
        self.args
            .iter()
            .map(|(k, v)| (k.clone(), v.to_json()))
            .collect()
    }

    /// Builds a call from a JSON object of flat scalars.
    pub fn from_json_args(name: impl Into<String>, args: &Map<String, Value>) -> Result<Self, DomainError> {
        let mut call = ToolCall::new(name);
        for (k, v) in args {
            let s = Scalar::from_json(v).map_err(|e| DomainError::InvalidCall(format!("argument `{k}`: {e}")))?;
            call.args.push((k.clone(), s));
        }
        call.check_unique()?;
        Ok(call)
    }
}

impl Serialize for ToolCall {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = serializer.serialize_struct("ToolCall", 2)?;
        st.serialize_field("name", &self.name)?;
        st.serialize_field("args", &self.args_json())?;
        st.end()
    }
}

impl<'de> Deserialize<'de> for ToolCall {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            name: String,
            #[serde(default)]
            args: Map<String, Value>,
        }
        let raw = Raw::deserialize(deserializer)?;
        ToolCall::from_json_args(raw.name, &raw.args).map_err(serde::de::Error::custom)
    }
}

/// Order-insensitive identity of a tool call, used as a cache key.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CanonicalKey(Vec<u8>);

impl CanonicalKey {
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(&self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, hex::FromHexError> {
        hex::decode(s).map(CanonicalKey)
    }
}

impl fmt::Display for CanonicalKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&String::from_utf8_lossy(&self.0))
    }
}

/// `name {"k1":v1,"k2":v2}` with keys sorted by bytes and no whitespace.
pub fn canonical_key(call: &ToolCall) -> Result<CanonicalKey, DomainError> {
    call.check_unique()?;
    let mut args: Vec<&(String, Scalar)> = call.args.iter().collect();
    args.sort_by(|a, b| a.0.as_bytes().cmp(b.0.as_bytes()));
    let mut out = String::with_capacity(call.name.len() + 16);
    out.push_str(&call.name);
    out.push_str(" {");
    for (i, (k, v)) in args.into_iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&Value::String(k.clone()).to_string());
        out.push(':');
        v.write_canonical(&mut out);
    }
    out.push('}');
    Ok(CanonicalKey(out.into_bytes()))
}

/// The payload that sits between the tool-call markers, in call order.
pub fn render_payload(call: &ToolCall) -> String {
    format!("{} {}", call.name, Value::Object(call.args_json()))
}

/// Full tool-call span: TOOL_START, the tokenized payload, TOOL_END.
pub fn render_call_tokens(call: &ToolCall) -> Vec<Token> {
    let mut out = Vec::new();
    out.push(Token::tool_start());
    out.extend(tokenize(&render_payload(call)));
    out.push(Token::tool_end());
    out
}

pub fn parse_payload(payload: &str) -> Result<ToolCall, DomainError> {
    let (name, rest) = payload
        .split_once(' ')
        .ok_or_else(|| DomainError::MalformedToolCall(format!("missing argument object in `{payload}`")))?;
    if name.is_empty() {
        return Err(DomainError::MalformedToolCall("empty tool name".into()));
    }
    let value: Value = serde_json::from_str(rest)
        .map_err(|e| DomainError::MalformedToolCall(format!("arguments: {e}")))?;
    let Value::Object(map) = value else {
        return Err(DomainError::MalformedToolCall("arguments are not an object".into()));
    };
    ToolCall::from_json_args(name, &map).map_err(|e| DomainError::MalformedToolCall(e.to_string()))
}

/// Returns the last complete tool call in `tokens`.
pub fn extract_tool_call(tokens: &[Token]) -> Result<ToolCall, DomainError> {
    let mut open: Option<String> = None;
    let mut last = None;
    for tok in tokens {
        match tok.kind {
            TokenKind::ToolStart => {
                if open.is_some() {
                    return Err(DomainError::MalformedToolCall("nested TOOL_START".into()));
                }
                open = Some(String::new());
            }
            TokenKind::ToolEnd => {
                let payload = open
                    .take()
                    .ok_or_else(|| DomainError::MalformedToolCall("TOOL_END without TOOL_START".into()))?;
                last = Some(payload);
            }
            TokenKind::Text => {
                if let Some(buf) = open.as_mut() {
                    buf.push_str(&tok.text);
                }
            }
            TokenKind::Eos => {
                if open.is_some() {
                    return Err(DomainError::MalformedToolCall("EOS inside tool span".into()));
                }
            }
        }
    }
    if open.is_some() {
        return Err(DomainError::MalformedToolCall("unterminated tool span".into()));
    }
    match last {
        Some(payload) => parse_payload(&payload),
        None => Err(DomainError::NoToolCall),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
    Tool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call: Option<ToolCall>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_output: Option<String>,
}

impl Turn {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
            tool_call: None,
            tool_output: None,
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
            tool_call: None,
            tool_output: None,
        }
    }

    pub fn assistant_call(call: ToolCall) -> Self {
        Self {
            role: Role::Assistant,
            content: render_payload(&call),
            tool_call: Some(call),
            tool_output: None,
        }
    }

    pub fn tool(call: ToolCall, output: impl Into<String>) -> Self {
        let output = output.into();
        Self {
            role: Role::Tool,
            content: output.clone(),
            tool_call: Some(call),
            tool_output: Some(output),
        }
    }

    pub fn is_valid(&self) -> bool {
        self.role != Role::Tool || (self.tool_call.is_some() && self.tool_output.is_some())
    }
}
