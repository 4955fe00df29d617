//! Scripted main model, speculative model, and black-box tools.

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::domain::{self, canonical_key, render_call_tokens, token_count, tokenize, CanonicalKey, DomainError, Scalar, Token, ToolCall};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MockError {
    #[error("script exhausted: turn {turn} requested, script has {available}")]
    ScriptExhausted { turn: usize, available: usize },
    #[error("unknown tool call `{0}` and no fallback output configured")]
    UnknownTool(String),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("fixture error: {0}")]
    Fixture(String),
    #[error("invalid config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, MockError>;

// ---------------------------------------------------------------------------
// seeds

/// Independent random streams derived from one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    SpecCoins = 0x5EC,
    ToolLatency = 0x7001,
    TaskPick = 0x7A5C,
    Library = 0x11B,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a tuple of coordinates into one seed.
pub fn mix_seed(stream: Stream, parts: &[u64]) -> u64 {
    parts.iter().fold(splitmix(stream as u64), |acc, &p| splitmix(acc ^ splitmix(p)))
}

pub fn rng_for(stream: Stream, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(stream, parts))
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

/// Where in a run a random draw happens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DrawSite {
    pub seed: u64,
    pub agent: u64,
    pub slot: u64,
    pub turn: u64,
}

impl DrawSite {
    pub fn parts(&self) -> [u64; 4] {
        [self.seed, self.agent, self.slot, self.turn]
    }
}

// ---------------------------------------------------------------------------
// scripts

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptTurn {
    pub reasoning: String,
    pub call: ToolCall,
    /// Fixed tool duration for this turn, overriding the runtime distribution.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalTurn {
    pub reasoning: String,
    pub answer: String,
}

/// One agent task: a prompt, tool-calling turns, and a final answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskScript {
    pub id: String,
    pub prompt: String,
    pub turns: Vec<ScriptTurn>,
    #[serde(rename = "final")]
    pub final_turn: FinalTurn,
}

impl TaskScript {
    pub fn prompt_tokens(&self) -> u64 {
        token_count(&self.prompt) as u64
    }

    /// Number of turns including the final answer turn.
    pub fn len(&self) -> usize {
        self.turns.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn intended_call(&self, turn: usize) -> Option<&ToolCall> {
        self.turns.get(turn).map(|t| &t.call)
    }

    /// Scripted tokens for `turn`: reasoning, then a tool span or answer and EOS.
    pub fn turn_tokens(&self, turn: usize) -> Result<Vec<Token>> {
        if let Some(t) = self.turns.get(turn) {
            let mut out = tokenize(&t.reasoning);
            out.extend(render_call_tokens(&t.call));
            Ok(out)
        } else if turn == self.turns.len() {
            let mut out = tokenize(&self.final_turn.reasoning);
            out.extend(tokenize(&self.final_turn.answer));
            out.push(Token::eos());
            Ok(out)
        } else {
            Err(MockError::ScriptExhausted { turn, available: self.len() })
        }
    }

    pub fn check(&self) -> Result<()> {
        for i in 0..self.len() {
            domain::check_tokens(&self.turn_tokens(i)?)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MainTiming {
    /// Every call takes the same time.
    Fixed { latency: f64 },
    /// Prefill and decode are charged per token.
    PerToken { phi: f64, delta: f64 },
}

impl MainTiming {
    pub fn check(&self) -> Result<()> {
        match *self {
            MainTiming::Fixed { latency } if latency.is_finite() && latency > 0.0 => Ok(()),
            MainTiming::PerToken { phi, delta } if phi.is_finite() && phi >= 0.0 && delta.is_finite() && delta > 0.0 => Ok(()),
            other => Err(MockError::Config(format!("invalid main timing {other:?}"))),
        }
    }
}

/// Per-token or fixed timing bound to a script.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenerationScript<'a> {
    pub task: &'a TaskScript,
    pub timing: MainTiming,
}

impl GenerationScript<'_> {
    /// Tokens for `turn` and the time they take given `prefill` uncached prompt tokens.
    pub fn main_generate(&self, turn: usize, prefill: u64) -> Result<(Vec<Token>, f64)> {
        let tokens = self.task.turn_tokens(turn)?;
        let latency = match self.timing {
            MainTiming::Fixed { latency } => latency,
            MainTiming::PerToken { phi, delta } => phi * prefill as f64 + delta * tokens.len() as f64,
        };
        Ok((tokens, latency))
    }
}

// ---------------------------------------------------------------------------
// speculative model

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissBehavior {
    /// A wrong sample is a well-formed call with one argument replaced.
    #[default]
    Perturb,
    /// A wrong sample contains no tool call.
    NoCall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecModelConfig {
    pub latency_g: f64,
    pub alpha: f64,
    pub lambda: u32,
    #[serde(default)]
    pub miss: MissBehavior,
    /// Per-turn outcomes that override the coins, cycled over an agent's turns.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forced: Option<Vec<bool>>,
}

impl SpecModelConfig {
    pub fn new(latency_g: f64, alpha: f64, lambda: u32) -> Self {
        Self { latency_g, alpha, lambda, miss: MissBehavior::Perturb, forced: None }
    }

    pub fn check(&self) -> Result<()> {
        if !(self.latency_g.is_finite() && self.latency_g > 0.0) {
            return Err(MockError::Config(format!("latency_g must be > 0, got {}", self.latency_g)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(MockError::Config(format!("alpha must lie in [0,1], got {}", self.alpha)));
        }
        if matches!(&self.forced, Some(v) if v.is_empty()) {
            return Err(MockError::Config("forced outcome vector is empty".into()));
        }
        Ok(())
    }

    pub fn forced_at(&self, ordinal: usize) -> Option<bool> {
        self.forced.as_ref().map(|v| v[ordinal % v.len()])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpecSample {
    pub index: u32,
    pub call: Option<ToolCall>,
    pub correct: bool,
}

pub fn miss_sentinel(index: u32) -> String {
    format!("__spec_miss_{index}__")
}

/// Replaces the first argument in key order with a sentinel string, or adds
/// one when the call has no arguments. The key always changes.
pub fn perturb(call: &ToolCall, index: u32) -> ToolCall {
    let mut out = call.clone();
    let sentinel = Scalar::Str(miss_sentinel(index));
    let first = out
        .args
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .0.as_bytes().cmp(b.1 .0.as_bytes()))
        .map(|(i, _)| i);
    match first {
        Some(i) if out.args[i].1 != sentinel => out.args[i].1 = sentinel,
        Some(i) => out.args[i].1 = Scalar::Str(format!("{}_", miss_sentinel(index))),
        None => out.args.push(("_".into(), sentinel)),
    }
    out
}

/// Draws `lambda` samples. Sample `i` uses the `i`-th coin, so outcomes are
/// monotone in both `alpha` and `lambda` for a fixed site.
pub fn speculate(cfg: &SpecModelConfig, intended: Option<&ToolCall>, site: DrawSite, forced: Option<bool>) -> Vec<SpecSample> {
    let mut rng = rng_for(Stream::SpecCoins, &site.parts());
    (0..cfg.lambda)
        .map(|index| {
            let coin: f64 = rng.random();
            let correct = forced.unwrap_or(coin < cfg.alpha);
            let call = match intended {
                None => None,
                Some(c) if correct => Some(c.clone()),
                Some(c) => match cfg.miss {
                    MissBehavior::Perturb => Some(perturb(c, index)),
                    MissBehavior::NoCall => None,
                },
            };
            SpecSample { index, call, correct: correct && intended.is_some() }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// tools

/// Normal latency truncated at zero (negative draws become zero).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyDist {
    pub mean: f64,
    pub stddev: f64,
}

impl LatencyDist {
    pub fn fixed(mean: f64) -> Self {
        Self { mean, stddev: 0.0 }
    }

    pub fn check(&self) -> Result<()> {
        if self.mean.is_finite() && self.stddev.is_finite() && self.stddev >= 0.0 {
            Ok(())
        } else {
            Err(MockError::Config(format!("invalid latency distribution {self:?}")))
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        let raw = if self.stddev == 0.0 {
            self.mean
        } else {
            Normal::new(self.mean, self.stddev).expect("checked stddev").sample(rng)
        };
        raw.max(0.0)
    }

    /// Mean of `max(0, X)` for `X ~ N(mean, stddev)`.
    pub fn truncated_mean(&self) -> f64 {
        if self.stddev == 0.0 {
            return self.mean.max(0.0);
        }
        let z = self.mean / self.stddev;
        use statrs::distribution::{Continuous, ContinuousCDF};
        let std = statrs::distribution::Normal::standard();
        self.mean * std.cdf(z) + self.stddev * std.pdf(z)
    }
}


/// Canonical key → tool output.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Fixtures {
    outputs: HashMap<CanonicalKey, String>,
}

impl Fixtures {
    pub fn insert(&mut self, call: &ToolCall, output: impl Into<String>) -> Result<()> {
        self.outputs.insert(canonical_key(call)?, output.into());
        Ok(())
    }

    pub fn get(&self, key: &CanonicalKey) -> Option<&str> {
        self.outputs.get(key).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    pub fn extend(&mut self, other: Fixtures) {
        self.outputs.extend(other.outputs);
    }

    /// JSON object from hex key to output, sorted by key.
    pub fn to_json(&self) -> String {
        let mut sorted: Vec<(String, &String)> = self.outputs.iter().map(|(k, v)| (k.to_hex(), v)).collect();
        sorted.sort();
        let map: serde_json::Map<String, serde_json::Value> =
            sorted.into_iter().map(|(k, v)| (k, serde_json::Value::String(v.clone()))).collect();
        let mut s = serde_json::to_string_pretty(&map).expect("strings serialize");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let map: HashMap<String, String> = serde_json::from_str(text).map_err(|e| MockError::Fixture(e.to_string()))?;
        let mut outputs = HashMap::with_capacity(map.len());
        for (k, v) in map {
            let key = CanonicalKey::from_hex(&k).map_err(|e| MockError::Fixture(format!("key `{k}`: {e}")))?;
            outputs.insert(key, v);
        }
        Ok(Self { outputs })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| MockError::Fixture(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToolRuntime {
    pub latency: LatencyDist,
    pub fixtures: Fixtures,
    /// Output for calls without a fixture, e.g. perturbed speculative calls.
    pub fallback_output: Option<String>,
}

pub const DEFAULT_FALLBACK: &str = "error: no matching record";

impl ToolRuntime {
    pub fn new(latency: LatencyDist, fixtures: Fixtures) -> Self {
        Self { latency, fixtures, fallback_output: Some(DEFAULT_FALLBACK.to_string()) }
    }

    /// Output and duration. The duration depends only on the site and the
    /// call's key, so the same call at the same site takes the same time in
    /// every mode.
    pub fn run_tool(&self, call: &ToolCall, site: DrawSite, fixed: Option<f64>) -> Result<(String, f64)> {
        let key = canonical_key(call)?;
        let output = match self.fixtures.get(&key) {
            Some(o) => o.to_string(),
            None => self.fallback_output.clone().ok_or_else(|| MockError::UnknownTool(key.to_string()))?,
        };
        Ok((output, self.duration(&key, site, fixed)))
    }

    pub fn duration(&self, key: &CanonicalKey, site: DrawSite, fixed: Option<f64>) -> f64 {
        if let Some(t) = fixed {
            return t.max(0.0);
        }
        let p = site.parts();
        let mut rng = rng_for(Stream::ToolLatency, &[p[0], p[1], p[2], p[3], fnv1a(key.as_bytes())]);
        self.latency.sample(&mut rng)
    }
}

// ---------------------------------------------------------------------------
// scenario builders

const FILLER: &str = "the quick brown fox jumps over the lazy dog and ";

/// Deterministic text of exactly `tokens` tokens.
pub fn filler_text(tokens: u64) -> String {
    let n = tokens as usize * domain::CHARS_PER_TOKEN;
    FILLER.chars().cycle().take(n).collect()
}

/// A call to `name` whose span is exactly `t` tokens, padded through a `q` argument.
pub fn call_with_span(name: &str, t: u64) -> Result<ToolCall> {
    let base = ToolCall::new(name).arg("q", "");
    let min = render_call_tokens(&base).len() as u64;
    if t < min {
        return Err(MockError::Config(format!("tool span of {t} tokens is shorter than the minimum {min} for `{name}`")));
    }
    let base_len = domain::render_payload(&base).chars().count();
    let target = (t - 2) as usize * domain::CHARS_PER_TOKEN;
    let pad: String = "x".repeat(target - base_len);
    let call = ToolCall::new(name).arg("q", pad);
    debug_assert_eq!(render_call_tokens(&call).len() as u64, t);
    Ok(call)
}
