//! Simulated inference engine.
//!
//! Two behaviours share one state machine. Without the tool cache, a
//! sequence that emits a tool call is evicted and the client resubmits the
//! grown history. With the tool cache the engine consults client
//! submissions: at the start of a tool span it validates the latest entry
//! with the same name as a draft, and at the end of the span it ingests the
//! output for the exact call and keeps decoding.
//!
//! The engine never touches a clock. Handlers take `now` and return
//! [`Effect`]s; the caller turns delays into scheduled events.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::domain::{canonical_key, render_call_tokens, token_count, tokenize, CanonicalKey, DomainError, Token, ToolCall};
use crate::mock::TaskScript;

pub type Rid = Arc<str>;

// ---------------------------------------------------------------------------
// tool cache

#[derive(Debug, Clone, PartialEq)]
pub struct Submission {
    pub name: String,
    pub key: Option<CanonicalKey>,
    pub call_tokens: Vec<Token>,
    pub output: String,
    pub keep_alive: Option<f64>,
}

impl Submission {
    pub fn from_call(call: &ToolCall, output: impl Into<String>, keep_alive: Option<f64>) -> Result<Self, DomainError> {
        Ok(Self {
            name: call.name.clone(),
            key: Some(canonical_key(call)?),
            call_tokens: render_call_tokens(call),
            output: output.into(),
            keep_alive,
        })
    }

    /// An entry known only by tool name. Its draft covers the span opening.
    pub fn name_only(name: &str, output: impl Into<String>, keep_alive: Option<f64>) -> Self {
        let mut call_tokens = vec![Token::tool_start()];
        call_tokens.extend(tokenize(&format!("{name} ")));
        Self {
            name: name.to_string(),
            key: None,
            call_tokens,
            output: output.into(),
            keep_alive,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CacheEntry {
    pub name: String,
    pub key: Option<CanonicalKey>,
    pub call_tokens: Vec<Token>,
    pub output: String,
    pub submitted_at: f64,
    pub keep_alive: Option<f64>,
}

impl CacheEntry {
    pub fn live_at(&self, now: f64) -> bool {
        self.keep_alive.is_none_or(|ka| now - self.submitted_at <= ka)
    }

    pub fn output_tokens(&self) -> u64 {
        token_count(&self.output) as u64
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
struct RidEntries {
    by_key: HashMap<CanonicalKey, CacheEntry>,
    // submission order per name; the last live entry wins
    by_name: HashMap<String, Vec<CacheEntry>>,
}

/// Associative store keyed by `(request id, canonical key)` and
/// `(request id, tool name)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ToolCacheStore {
    rids: HashMap<String, RidEntries>,
}

impl ToolCacheStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stores one entry. A resubmitted key replaces its earlier entry in both
    /// indices. Returns the number of entries accepted.
    pub fn submit(&mut self, rid: &str, sub: Submission, now: f64) -> usize {
        let entry = CacheEntry {
            name: sub.name,
            key: sub.key,
            call_tokens: sub.call_tokens,
            output: sub.output,
            submitted_at: now,
            keep_alive: sub.keep_alive,
        };
        let slot = self.rids.entry(rid.to_string()).or_default();
        let list = slot.by_name.entry(entry.name.clone()).or_default();
        match &entry.key {
            Some(k) => {
                list.retain(|e| e.key.as_ref() != Some(k));
                slot.by_key.insert(k.clone(), entry.clone());
            }
            None => list.retain(|e| e.key.is_some() || e.call_tokens != entry.call_tokens),
        }
        list.push(entry);
        1
    }

    pub fn lookup_key(&self, rid: &str, key: &CanonicalKey, now: f64) -> Option<&CacheEntry> {
        self.rids.get(rid)?.by_key.get(key).filter(|e| e.live_at(now))
    }

    pub fn lookup_name(&self, rid: &str, name: &str, now: f64) -> Option<&CacheEntry> {
        self.rids.get(rid)?.by_name.get(name)?.iter().rev().find(|e| e.live_at(now))
    }

    pub fn purge(&mut self, rid: &str) -> usize {
        self.rids.remove(rid).map_or(0, |r| r.by_name.values().map(Vec::len).sum())
    }

    /// Drops every entry whose keep-alive has lapsed.
    pub fn expire(&mut self, now: f64) -> usize {
        let mut removed = 0;
        for slot in self.rids.values_mut() {
            slot.by_key.retain(|_, e| e.live_at(now));
            for list in slot.by_name.values_mut() {
                let before = list.len();
                list.retain(|e| e.live_at(now));
                removed += before - list.len();
            }
            slot.by_name.retain(|_, l| !l.is_empty());
        }
        self.rids.retain(|_, s| !s.by_name.is_empty());
        removed
    }

    pub fn len(&self) -> usize {
        self.rids.values().flat_map(|s| s.by_name.values()).map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn rid_count(&self) -> usize {
        self.rids.len()
    }
}

// ---------------------------------------------------------------------------
// draft validation

#[derive(Debug, Clone, PartialEq)]
pub struct Validation {
    pub accepted: usize,
    /// The scripted token after the accepted prefix, produced by the same pass.
    pub next: Option<Token>,
}

/// Greedy validation: accept the longest common prefix of draft and script.
pub fn validate_draft(scripted: &[Token], draft: &[Token]) -> Validation {
    let accepted = scripted.iter().zip(draft).take_while(|(a, b)| a == b).count();
    Validation { accepted, next: scripted.get(accepted).cloned() }
}

// ---------------------------------------------------------------------------
// engine

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerifyCost {
    /// One decode step validates the whole draft.
    #[default]
    SingleStep,
    /// Each drafted token costs a decode step; no saving from drafts.
    PerToken,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub batch_size: usize,
    pub phi: f64,
    pub delta: f64,
    pub overhead_o: f64,
    pub prefix_cache: bool,
    #[serde(default)]
    pub tool_cache: bool,
    #[serde(default)]
    pub verify: VerifyCost,
}

impl EngineConfig {
    pub fn check(&self) -> Result<(), String> {
        if self.batch_size == 0 {
            return Err("batch_size must be >= 1".into());
        }
        if !(self.phi.is_finite() && self.phi >= 0.0 && self.delta.is_finite() && self.delta > 0.0) {
            return Err("phi must be >= 0 and delta > 0".into());
        }
        if !(self.overhead_o.is_finite() && self.overhead_o >= 0.0) {
            return Err("overhead_o must be >= 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SeqStatus {
    New,
    Decode,
    WaitingTool,
    Done,
}

/// One resident request.
#[derive(Debug, Clone)]
pub struct EngineSequence {
    pub rid: Rid,
    pub conv: u64,
    pub task: Arc<TaskScript>,
    pub turn: usize,
    pub status: SeqStatus,
    pub prompt_tokens: u64,
    pub prefilled: u64,
    pub decoded: u64,
    pub injected: u64,
    pub kv_tokens: u64,
    pub emitted: Vec<Token>,
    pub evictions: u32,
    // accepted draft tokens for the current span
    accepted: usize,
    // output tokens being ingested for the current span
    ingest_tokens: u64,
}

impl EngineSequence {
    fn resync_kv(&mut self) {
        self.kv_tokens = self.prefilled + self.decoded + self.injected;
    }
}

/// A request from a client: continue `task` at `turn` with a prompt of
/// `prompt_tokens` tokens.
#[derive(Debug, Clone)]
pub struct EngineRequest {
    pub rid: Rid,
    pub conv: u64,
    pub task: Arc<TaskScript>,
    pub turn: usize,
    pub prompt_tokens: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EngineEvent {
    PrefillDone(Rid),
    ReasoningDone(Rid),
    SpanDone(Rid),
    IngestDone(Rid),
    FinalDone(Rid),
}

impl EngineEvent {
    pub fn rid(&self) -> &Rid {
        match self {
            EngineEvent::PrefillDone(r)
            | EngineEvent::ReasoningDone(r)
            | EngineEvent::SpanDone(r)
            | EngineEvent::IngestDone(r)
            | EngineEvent::FinalDone(r) => r,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EngineEvent::PrefillDone(_) => "prefill_done",
            EngineEvent::ReasoningDone(_) => "reasoning_done",
            EngineEvent::SpanDone(_) => "span_done",
            EngineEvent::IngestDone(_) => "ingest_done",
            EngineEvent::FinalDone(_) => "final_done",
        }
    }
}

/// What the caller must do after a handler runs.
#[derive(Debug, Clone, PartialEq)]
pub enum Effect {
    /// Fire `event` after `delay` seconds.
    After(f64, EngineEvent),
    /// The sequence stopped on a tool call the cache could not serve.
    ToolCallEmitted { rid: Rid, conv: u64, turn: usize, call: ToolCall },
    /// The cached output was used; the sequence keeps decoding.
    Ingested { rid: Rid, conv: u64, turn: usize, accepted: usize },
    Finished { rid: Rid, conv: u64, turn: usize },
}

/// Timing marks for one conversation, used to measure its tool phase.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ConversationTrace {
    pub first_admission: Option<f64>,
    /// Per tool turn: when the result reached the engine.
    pub arrived: BTreeMap<usize, f64>,
    /// Per tool turn: when the result was part of the KV state.
    pub absorbed: BTreeMap<usize, f64>,
    /// Per tool turn: draft tokens accepted and whether the output was ingested.
    pub accepted: BTreeMap<usize, usize>,
    pub ingested: BTreeMap<usize, bool>,
    pub evictions: BTreeMap<usize, u32>,
    pub emitted: Vec<Token>,
}

impl ConversationTrace {
    /// Time from first admission until the last tool result is in the
    /// engine: on arrival when prompts are re-prefilled from scratch, once
    /// absorbed when the prefix is retained.
    pub fn window(&self, prefix_cache: bool, tool_turns: usize) -> Option<f64> {
        let start = self.first_admission?;
        if tool_turns == 0 {
            return Some(0.0);
        }
        let last = tool_turns - 1;
        let end = if prefix_cache || self.ingested.get(&last) == Some(&true) {
            self.absorbed.get(&last)?
        } else {
            self.arrived.get(&last)?
        };
        Some(end - start)
    }
}

#[derive(Debug)]
pub struct EngineSim {
    pub cfg: EngineConfig,
    pub store: ToolCacheStore,
    seqs: HashMap<Rid, EngineSequence>,
    queue: VecDeque<EngineRequest>,
    resident: usize,
    retained: HashMap<u64, u64>,
    traces: HashMap<u64, ConversationTrace>,
    log: Option<String>,
}

impl EngineSim {
    pub fn new(cfg: EngineConfig) -> Self {
        Self {
            cfg,
            store: ToolCacheStore::new(),
            seqs: HashMap::new(),
            queue: VecDeque::new(),
            resident: 0,
            retained: HashMap::new(),
            traces: HashMap::new(),
            log: None,
        }
    }

    pub fn with_log(mut self) -> Self {
        self.log = Some(String::new());
        self
    }

    pub fn log(&self) -> Option<&str> {
        self.log.as_deref()
    }

    pub fn take_log(&mut self) -> Option<String> {
        self.log.as_mut().map(std::mem::take)
    }

    pub fn trace(&self, conv: u64) -> Option<&ConversationTrace> {
        self.traces.get(&conv)
    }

    pub fn take_trace(&mut self, conv: u64) -> Option<ConversationTrace> {
        self.traces.remove(&conv)
    }

    pub fn sequence(&self, rid: &str) -> Option<&EngineSequence> {
        self.seqs.get(rid)
    }

    pub fn resident(&self) -> usize {
        self.resident
    }

    pub fn queued(&self) -> usize {
        self.queue.len()
    }

    fn note(&mut self, now: f64, rid: &str, phase: &str, tokens: u64) {
        if let Some(log) = self.log.as_mut() {
            let _ = writeln!(log, "t={now:.9} rid={rid} phase={phase} tokens={tokens}");
        }
    }

    /// A request reaches the engine. It is admitted if the batch has room.
    pub fn arrive(&mut self, now: f64, req: EngineRequest) -> Vec<Effect> {
        if req.turn > 0 {
            self.traces.entry(req.conv).or_default().arrived.insert(req.turn - 1, now);
        }
        if self.resident < self.cfg.batch_size {
            self.admit(now, req)
        } else {
            self.queue.push_back(req);
            Vec::new()
        }
    }

    fn admit(&mut self, now: f64, req: EngineRequest) -> Vec<Effect> {
        self.resident += 1;
        let cached = if self.cfg.prefix_cache {
            self.retained.get(&req.conv).copied().unwrap_or(0).min(req.prompt_tokens)
        } else {
            0
        };
        let uncached = req.prompt_tokens - cached;
        let trace = self.traces.entry(req.conv).or_default();
        trace.first_admission.get_or_insert(now);
        self.note(now, &req.rid, "prefill", uncached);
        let seq = EngineSequence {
            rid: req.rid.clone(),
            conv: req.conv,
            task: req.task,
            turn: req.turn,
            status: SeqStatus::New,
            prompt_tokens: req.prompt_tokens,
            prefilled: req.prompt_tokens,
            decoded: 0,
            injected: 0,
            kv_tokens: req.prompt_tokens,
            emitted: Vec::new(),
            evictions: 0,
            accepted: 0,
            ingest_tokens: 0,
        };
        self.seqs.insert(req.rid.clone(), seq);
        vec![Effect::After(self.cfg.phi * uncached as f64, EngineEvent::PrefillDone(req.rid))]
    }

    pub fn handle(&mut self, now: f64, ev: EngineEvent) -> Vec<Effect> {
        match ev {
            EngineEvent::PrefillDone(rid) => self.on_prefill_done(now, rid),
            EngineEvent::ReasoningDone(rid) => self.on_reasoning_done(now, rid),
            EngineEvent::SpanDone(rid) => self.on_span_done(now, rid),
            EngineEvent::IngestDone(rid) => self.on_ingest_done(now, rid),
            EngineEvent::FinalDone(rid) => self.on_final_done(now, rid),
        }
    }

    fn seq_mut(&mut self, rid: &Rid) -> &mut EngineSequence {
        self.seqs.get_mut(rid).expect("event for a live sequence")
    }

    fn on_prefill_done(&mut self, now: f64, rid: Rid) -> Vec<Effect> {
        let (conv, turn, prompt) = {
            let s = self.seq_mut(&rid);
            s.status = SeqStatus::Decode;
            (s.conv, s.turn, s.prompt_tokens)
        };
        if self.cfg.prefix_cache {
            self.retained.insert(conv, prompt);
        }
        if turn > 0 {
            self.traces.entry(conv).or_default().absorbed.insert(turn - 1, now);
        }
        self.begin_turn(now, rid)
    }

    fn begin_turn(&mut self, now: f64, rid: Rid) -> Vec<Effect> {
        let delta = self.cfg.delta;
        let s = self.seqs.get(&rid).expect("live sequence");
        let task = s.task.clone();
        let turn = s.turn;
        match task.turns.get(turn) {
            Some(st) => {
                let r = token_count(&st.reasoning) as u64;
                self.note(now, &rid, "decode", r);
                vec![Effect::After(delta * r as f64, EngineEvent::ReasoningDone(rid))]
            }
            None => {
                let n = task.turn_tokens(turn).map(|t| t.len()).unwrap_or(0) as u64;
                self.note(now, &rid, "decode", n);
                vec![Effect::After(delta * n as f64, EngineEvent::FinalDone(rid))]
            }
        }
    }

    /// At the span opening: look for a draft by name and validate it.
    fn on_reasoning_done(&mut self, now: f64, rid: Rid) -> Vec<Effect> {
        let (task, turn) = {
            let s = self.seq_mut(&rid);
            (s.task.clone(), s.turn)
        };
        let st = &task.turns[turn];
        let scripted = render_call_tokens(&st.call);
        let reasoning = tokenize(&st.reasoning);
        let t = scripted.len();
        let draft = if self.cfg.tool_cache {
            self.store.lookup_name(&rid, &st.call.name, now).map(|e| e.call_tokens.clone())
        } else {
            None
        };
        let (accepted, span_cost) = match draft {
            Some(d) => {
                let v = validate_draft(&scripted, &d);
                debug_assert!(scripted[..v.accepted] == d[..v.accepted]);
                self.note(now, &rid, "validate", v.accepted as u64);
                let steps = match self.cfg.verify {
                    VerifyCost::SingleStep => (t - v.accepted).max(1),
                    VerifyCost::PerToken => t,
                };
                if v.accepted < t {
                    self.note(now, &rid, "decode", (t - v.accepted - 1) as u64);
                }
                (v.accepted, steps)
            }
            None => {
                self.note(now, &rid, "decode", t as u64);
                (0, t)
            }
        };
        let conv = {
            let s = self.seq_mut(&rid);
            s.decoded += (reasoning.len() + t) as u64;
            s.emitted.extend(reasoning);
            s.emitted.extend(scripted);
            s.accepted = accepted;
            s.resync_kv();
            s.conv
        };
        self.traces.entry(conv).or_default().accepted.insert(turn, accepted);
        vec![Effect::After(self.cfg.delta * span_cost as f64, EngineEvent::SpanDone(rid))]
    }

    /// At the span end: ingest a cached output or stop and emit.
    fn on_span_done(&mut self, now: f64, rid: Rid) -> Vec<Effect> {
        let (task, turn, conv, accepted) = {
            let s = self.seq_mut(&rid);
            (s.task.clone(), s.turn, s.conv, s.accepted)
        };
        let call = &task.turns[turn].call;
        let key = canonical_key(call).expect("scripts hold valid calls");
        let hit = if self.cfg.tool_cache {
            self.store.lookup_key(&rid, &key, now).map(|e| e.output_tokens())
        } else {
            None
        };
        let t = render_call_tokens(call).len() as u64;
        match hit {
            Some(t_o) => {
                self.note(now, &rid, "ingest", t + t_o);
                let s = self.seq_mut(&rid);
                s.injected += t_o;
                s.ingest_tokens = t_o;
                s.resync_kv();
                self.traces.entry(conv).or_default().ingested.insert(turn, true);
                vec![
                    Effect::After(self.cfg.phi * (t + t_o) as f64, EngineEvent::IngestDone(rid.clone())),
                    Effect::Ingested { rid, conv, turn, accepted },
                ]
            }
            None => {
                let (kv, emitted) = {
                    let s = self.seq_mut(&rid);
                    s.status = SeqStatus::WaitingTool;
                    s.evictions += 1;
                    (s.kv_tokens, std::mem::take(&mut s.emitted))
                };
                self.note(now, &rid, "emit", emitted.len() as u64);
                self.note(now, &rid, "evict", kv);
                let trace = self.traces.entry(conv).or_default();
                trace.ingested.insert(turn, false);
                *trace.evictions.entry(turn).or_default() += 1;
                trace.emitted.extend(emitted);
                let mut out = vec![Effect::ToolCallEmitted { rid: rid.clone(), conv, turn, call: call.clone() }];
                out.extend(self.release(now, &rid));
                out
            }
        }
    }

    fn on_ingest_done(&mut self, now: f64, rid: Rid) -> Vec<Effect> {
        let (conv, turn, prompt) = {
            let s = self.seq_mut(&rid);
            let t = render_call_tokens(&s.task.turns[s.turn].call).len() as u64;
            s.prompt_tokens += t + s.ingest_tokens;
            s.ingest_tokens = 0;
            s.turn += 1;
            (s.conv, s.turn, s.prompt_tokens)
        };
        if self.cfg.prefix_cache {
            self.retained.insert(conv, prompt);
        }
        self.traces.entry(conv).or_default().absorbed.insert(turn - 1, now);
        self.begin_turn(now, rid)
    }

    fn on_final_done(&mut self, now: f64, rid: Rid) -> Vec<Effect> {
        let (conv, turn, emitted) = {
            let s = self.seq_mut(&rid);
            let toks = s.task.turn_tokens(s.turn).unwrap_or_default();
            s.decoded += toks.len() as u64;
            s.emitted.extend(toks);
            s.status = SeqStatus::Done;
            s.resync_kv();
            (s.conv, s.turn, std::mem::take(&mut s.emitted))
        };
        self.note(now, &rid, "emit", emitted.len() as u64);
        self.traces.entry(conv).or_default().emitted.extend(emitted);
        self.retained.remove(&conv);
        let mut out = vec![Effect::Finished { rid: rid.clone(), conv, turn }];
        out.extend(self.release(now, &rid));
        out
    }

    /// Frees the batch slot and purges cache entries for a finished response.
    fn release(&mut self, now: f64, rid: &Rid) -> Vec<Effect> {
        self.store.purge(rid);
        self.resident -= 1;
        let mut out = Vec::new();
        if let Some(next) = self.queue.pop_front() {
            out.extend(self.admit(now, next));
        }
        out
    }

    /// A client submission reaches the engine. Entries for responses that
    /// already ended are accepted and dropped.
    pub fn submit(&mut self, now: f64, rid: &str, sub: Submission) -> usize {
        match self.seqs.get(rid).map(|s| s.status) {
            Some(SeqStatus::WaitingTool | SeqStatus::Done) => 1,
            _ => self.store.submit(rid, sub, now),
        }
    }
}
