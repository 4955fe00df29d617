//! Agent-side loops.
//!
//! * [`baseline_loop`]: call the model, run the requested tool, repeat.
//! * [`speculative_loop`]: alongside each model call, ask a fast model for
//!   `lambda` guesses of the next tool call and start those tools early.
//!   The main call reuses a matching execution instead of starting its own.
//! * [`engine_mode_loop`]: as above, but finished speculative executions are
//!   submitted to the engine's tool cache so the engine can skip the round
//!   trip to the client entirely.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::Arc;

use serde::Serialize;

use crate::domain::{CanonicalKey, Toolset, Turn};
use crate::engine::EngineConfig;
use crate::mock::{MainTiming, SpecModelConfig, TaskScript, ToolRuntime};
use crate::world::{run_world, WorldConfig, WorldError};

pub use crate::world::Mode;

/// Index of a tool execution within one run.
pub type ExecId = usize;

/// Maps a canonical key to the execution started for it this turn.
#[derive(Debug, Clone, Default)]
pub struct PendingToolCache {
    map: HashMap<CanonicalKey, ExecId>,
}

impl PendingToolCache {
    pub fn get(&self, key: &CanonicalKey) -> Option<ExecId> {
        self.map.get(key).copied()
    }

    pub fn contains(&self, key: &CanonicalKey) -> bool {
        self.map.contains_key(key)
    }

    /// Starts an execution only if none exists for `key`. Returns the
    /// execution id and whether `start` ran.
    pub fn get_or_start<E>(&mut self, key: CanonicalKey, start: impl FnOnce() -> Result<ExecId, E>) -> Result<(ExecId, bool), E> {
        if let Some(&id) = self.map.get(&key) {
            return Ok((id, false));
        }
        let id = start()?;
        self.map.insert(key, id);
        Ok((id, true))
    }

    pub fn clear(&mut self) {
        self.map.clear();
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TurnOutcome {
    pub agent: u64,
    pub slot: usize,
    pub task_id: String,
    pub turn_index: usize,
    /// The model's call was served by a speculative execution.
    pub hit: bool,
    /// The engine consumed the output without returning to the client.
    pub ingested: bool,
    /// The requested tool may be speculated at all.
    pub eligible: bool,
    pub is_final: bool,
    pub turn_start: f64,
    pub main_done_at: f64,
    pub spec_done_at: Option<f64>,
    pub tool_done_at: Option<f64>,
    pub turn_done_at: f64,
    pub tokens_emitted: u64,
    pub draft_accepted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskRun {
    pub agent: u64,
    pub slot: usize,
    pub task_id: String,
    pub start: f64,
    /// When the last tool result was available to the client.
    pub tool_phase_end: f64,
    pub end: f64,
    pub tool_turns: usize,
    /// Engine-side tool phase, when an engine served the task.
    pub engine_window: Option<f64>,
}

impl TaskRun {
    pub fn tool_phase(&self) -> f64 {
        self.tool_phase_end - self.start
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Usage {
    pub main_calls: u64,
    pub main_input: u64,
    pub main_output: u64,
    pub spec_calls: u64,
    pub spec_input: u64,
    pub spec_output: u64,
    pub turns: u64,
}

impl Usage {
    pub fn add(&mut self, o: &Usage) {
        self.main_calls += o.main_calls;
        self.main_input += o.main_input;
        self.main_output += o.main_output;
        self.spec_calls += o.spec_calls;
        self.spec_input += o.spec_input;
        self.spec_output += o.spec_output;
        self.turns += o.turns;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExecRecord {
    pub agent: u64,
    pub slot: usize,
    pub turn: usize,
    pub key: String,
    pub speculative: bool,
    pub started: f64,
    pub done: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentReport {
    pub agent: u64,
    pub transcripts: Vec<Vec<Turn>>,
    pub outcomes: Vec<TurnOutcome>,
    pub tasks: Vec<TaskRun>,
    pub usage: Usage,
    pub tokens_emitted: u64,
    pub finished_at: f64,
}

impl AgentReport {
    pub fn hit_turns(&self) -> usize {
        self.outcomes.iter().filter(|o| o.hit).count()
    }

    pub fn tool_turns(&self) -> usize {
        self.outcomes.iter().filter(|o| !o.is_final).count()
    }

    /// Tool-phase time summed over tasks.
    pub fn tool_phase(&self) -> f64 {
        self.tasks.iter().map(TaskRun::tool_phase).sum()
    }

    /// One JSON object per turn.
    pub fn outcomes_jsonl(&self) -> String {
        let mut out = String::new();
        for o in &self.outcomes {
            let _ = writeln!(out, "{}", serde_json::to_string(o).expect("plain data"));
        }
        out
    }

    /// Transcripts as JSON, for byte comparison across modes.
    pub fn transcript_json(&self) -> String {
        serde_json::to_string(&self.transcripts).expect("plain data")
    }
}

/// Everything one agent needs to run its tasks.
#[derive(Debug, Clone)]
pub struct AgentConfig {
    pub agent: u64,
    pub tasks: Vec<Arc<TaskScript>>,
    pub timing: MainTiming,
    pub overhead_o: f64,
    pub runtime: ToolRuntime,
    /// Tools eligible for speculation; `None` treats every tool as eligible.
    pub toolset: Option<Toolset>,
    pub seed: u64,
}

fn single(cfg: &AgentConfig, mode: Mode, spec: Option<SpecModelConfig>, engine: Option<EngineConfig>) -> Result<AgentReport, WorldError> {
    let world = WorldConfig {
        mode,
        timing: cfg.timing,
        overhead_o: cfg.overhead_o,
        spec,
        engine,
        runtime: cfg.runtime.clone(),
        toolset: cfg.toolset.clone(),
        seed: cfg.seed,
        trace: false,
        keep_alive: None,
    };
    let mut out = run_world(&world, vec![(cfg.agent, cfg.tasks.clone())])?;
    Ok(out.agents.pop().expect("one agent"))
}

/// Call the model; run each requested tool before calling again.
pub fn baseline_loop(cfg: &AgentConfig) -> Result<AgentReport, WorldError> {
    single(cfg, Mode::Baseline, None, engine_for(cfg, false))
}

/// Overlap speculative tool executions with the model call.
pub fn speculative_loop(cfg: &AgentConfig, spec: &SpecModelConfig) -> Result<AgentReport, WorldError> {
    single(cfg, Mode::ClientSpec, Some(spec.clone()), engine_for(cfg, false))
}

/// Submit speculative outputs to the engine's tool cache.
pub fn engine_mode_loop(cfg: &AgentConfig, spec: &SpecModelConfig, engine: &EngineConfig) -> Result<AgentReport, WorldError> {
    let mut engine = engine.clone();
    engine.tool_cache = true;
    single(cfg, Mode::EngineSpec, Some(spec.clone()), Some(engine))
}

fn engine_for(cfg: &AgentConfig, tool_cache: bool) -> Option<EngineConfig> {
    match cfg.timing {
        MainTiming::Fixed { .. } => None,
        MainTiming::PerToken { phi, delta } => Some(EngineConfig {
            batch_size: 64,
            phi,
            delta,
            overhead_o: cfg.overhead_o,
            prefix_cache: true,
            tool_cache,
            verify: Default::default(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::ToolCall;
    use crate::mock::{filler_text, FinalTurn, Fixtures, LatencyDist, ScriptTurn};

    fn task(n: usize, tool_time: f64) -> (Arc<TaskScript>, Fixtures) {
        let mut fx = Fixtures::default();
        let turns = (0..n)
            .map(|i| {
                let call = ToolCall::new(format!("tool_{i}")).arg("q", format!("x{i}"));
                fx.insert(&call, filler_text(10)).unwrap();
                ScriptTurn { reasoning: filler_text(5), call, tool_time: Some(tool_time) }
            })
            .collect();
        let t = TaskScript {
            id: "t".into(),
            prompt: filler_text(10),
            turns,
            final_turn: FinalTurn { reasoning: String::new(), answer: "ok".into() },
        };
        (Arc::new(t), fx)
    }

    fn cfg(n: usize, big_g: f64, tool: f64) -> AgentConfig {
        let (t, fx) = task(n, tool);
        AgentConfig {
            agent: 0,
            tasks: vec![t],
            timing: MainTiming::Fixed { latency: big_g },
            overhead_o: 0.0,
            runtime: ToolRuntime::new(LatencyDist::fixed(tool), fx),
            toolset: None,
            seed: 1,
        }
    }

    fn forced(g: f64, hits: Vec<bool>) -> SpecModelConfig {
        SpecModelConfig { forced: Some(hits), ..SpecModelConfig::new(g, 0.5, 1) }
    }

    #[test]
    fn baseline_single_turn() {
        let r = baseline_loop(&cfg(1, 2.0, 1.0)).unwrap();
        assert!((r.tasks[0].tool_phase() - 3.0).abs() < 1e-9);
        assert!((r.finished_at - 5.0).abs() < 1e-9);
    }

    #[test]
    fn baseline_ten_turns() {
        let r = baseline_loop(&cfg(10, 2.0, 1.0)).unwrap();
        assert!((r.tasks[0].tool_phase() - 30.0).abs() < 1e-9);
        assert_eq!(r.tool_turns(), 10);
    }

    #[test]
    fn immediate_final_runs_no_tools() {
        let r = baseline_loop(&cfg(0, 2.0, 1.0)).unwrap();
        assert_eq!(r.tool_turns(), 0);
        assert_eq!(r.tasks[0].tool_phase(), 0.0);
    }

    #[test]
    fn hit_turn_overlaps() {
        let r = speculative_loop(&cfg(1, 2.0, 2.0), &forced(0.5, vec![true])).unwrap();
        assert!((r.tasks[0].tool_phase() - 2.5).abs() < 1e-9);
        assert!(r.outcomes[0].hit);
        let r = speculative_loop(&cfg(1, 2.0, 0.5), &forced(0.1, vec![true])).unwrap();
        assert!((r.tasks[0].tool_phase() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn zero_alpha_equals_baseline() {
        let c = cfg(4, 2.0, 1.0);
        let base = baseline_loop(&c).unwrap();
        let spec = speculative_loop(&c, &SpecModelConfig::new(0.5, 0.0, 3)).unwrap();
        assert_eq!(base.finished_at, spec.finished_at);
        assert_eq!(base.transcript_json(), spec.transcript_json());
        assert_eq!(spec.hit_turns(), 0);
    }

    #[test]
    fn pending_cache_single_flight() {
        let mut c = PendingToolCache::default();
        let key = crate::domain::canonical_key(&ToolCall::new("a")).unwrap();
        let mut started = 0;
        for _ in 0..3 {
            c.get_or_start::<()>(key.clone(), || {
                started += 1;
                Ok(started)
            })
            .unwrap();
        }
        assert_eq!(started, 1);
        c.clear();
        assert!(c.is_empty());
    }

    #[test]
    fn jsonl_dump_has_one_line_per_turn() {
        let r = baseline_loop(&cfg(3, 2.0, 1.0)).unwrap();
        let dump = r.outcomes_jsonl();
        assert_eq!(dump.lines().count(), 4);
        let first: serde_json::Value = serde_json::from_str(dump.lines().next().unwrap()).unwrap();
        assert_eq!(first["turn_index"], 0);
    }

    #[test]
    fn spec_call_must_be_speculable() {
        let mut c = cfg(1, 2.0, 2.0);
        c.toolset = Some(Toolset::default());
        let r = speculative_loop(&c, &forced(0.5, vec![true])).unwrap();
        assert!(!r.outcomes[0].hit && !r.outcomes[0].eligible);
        assert!((r.tasks[0].tool_phase() - 4.0).abs() < 1e-9);
    }
}
