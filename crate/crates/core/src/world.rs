//! One simulation: agents, tools, the speculative model, and optionally an
//! engine, interleaved on a single scheduler.

use std::borrow::Cow;
use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::client::{AgentReport, ExecId, ExecRecord, PendingToolCache, TaskRun, TurnOutcome, Usage};
use crate::domain::{canonical_key, render_call_tokens, token_count, CanonicalKey, DomainError, ToolCall, Toolset, Turn};
use crate::engine::{Effect, EngineConfig, EngineEvent, EngineRequest, EngineSim, Rid, Submission};
use crate::mock::{speculate, DrawSite, GenerationScript, MainTiming, MockError, SpecModelConfig, SpecSample, TaskScript, ToolRuntime};
use crate::sim::{Scheduler, SimAction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Baseline,
    ClientSpec,
    EngineSpec,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Baseline, Mode::ClientSpec, Mode::EngineSpec];

    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::ClientSpec => "client_spec",
            Mode::EngineSpec => "engine_spec",
        }
    }

    pub fn speculates(&self) -> bool {
        !matches!(self, Mode::Baseline)
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim() {
            "baseline" => Ok(Mode::Baseline),
            "client_spec" => Ok(Mode::ClientSpec),
            "engine_spec" => Ok(Mode::EngineSpec),
            other => Err(format!("unknown mode `{other}` (expected baseline, client_spec or engine_spec)")),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum WorldError {
    #[error("config error: {0}")]
    Config(String),
    #[error("agent {agent}, task {slot}, turn {turn}: {source}")]
    Agent { agent: u64, slot: usize, turn: usize, source: MockError },
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("inconsistent state: {0}")]
    State(String),
}

#[derive(Debug, Clone)]
pub struct WorldConfig {
    pub mode: Mode,
    pub timing: MainTiming,
    pub overhead_o: f64,
    pub spec: Option<SpecModelConfig>,
    pub engine: Option<EngineConfig>,
    pub runtime: ToolRuntime,
    pub toolset: Option<Toolset>,
    pub seed: u64,
    pub trace: bool,
    /// Keep-alive attached to engine submissions.
    pub keep_alive: Option<f64>,
}

impl WorldConfig {
    fn check(&self) -> Result<(), WorldError> {
        let cfg = |e: String| WorldError::Config(e);
        self.timing.check().map_err(|e| cfg(e.to_string()))?;
        self.runtime.latency.check().map_err(|e| cfg(e.to_string()))?;
        if !(self.overhead_o.is_finite() && self.overhead_o >= 0.0) {
            return Err(cfg(format!("overhead must be >= 0, got {}", self.overhead_o)));
        }
        if let Some(s) = &self.spec {
            s.check().map_err(|e| cfg(e.to_string()))?;
        }
        if self.mode.speculates() && self.spec.is_none() {
            return Err(cfg(format!("mode {} needs a speculative model", self.mode)));
        }
        match (&self.timing, &self.engine) {
            (MainTiming::PerToken { .. }, None) => return Err(cfg("per-token timing needs an engine".into())),
            (MainTiming::Fixed { .. }, Some(_)) => return Err(cfg("fixed timing does not use an engine".into())),
            _ => {}
        }
        if let Some(e) = &self.engine {
            e.check().map_err(cfg)?;
            if e.tool_cache != (self.mode == Mode::EngineSpec) {
                return Err(cfg("the engine tool cache is used exactly in engine_spec mode".into()));
            }
        } else if self.mode == Mode::EngineSpec {
            return Err(cfg("engine_spec mode needs per-token timing and an engine".into()));
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct WorldReport {
    pub agents: Vec<AgentReport>,
    pub exec_log: Vec<ExecRecord>,
    pub trace: Option<String>,
    pub engine_log: Option<String>,
    pub end: f64,
}

#[derive(Debug, Clone)]
enum Ev {
    MainReply { agent: usize, epoch: u64 },
    SpecReply { agent: usize, epoch: u64, sample: usize },
    ToolDone { exec: ExecId },
    EngineArrive(Box<EngineRequest>),
    Engine(EngineEvent),
    EngineSubmit { rid: Rid, sub: Box<Submission> },
    Emitted { agent: usize, turn: usize },
    Ingested { agent: usize, turn: usize, accepted: usize },
    Finished { agent: usize, turn: usize },
}

impl SimAction for Ev {
    fn label(&self) -> Cow<'_, str> {
        Cow::Owned(match self {
            Ev::MainReply { agent, epoch } => format!("main_reply:a{agent}:e{epoch}"),
            Ev::SpecReply { agent, epoch, sample } => format!("spec_reply:a{agent}:e{epoch}:s{sample}"),
            Ev::ToolDone { exec } => format!("tool_done:x{exec}"),
            Ev::EngineArrive(r) => format!("engine_arrive:{}", r.rid),
            Ev::Engine(e) => format!("engine_{}:{}", e.name(), e.rid()),
            Ev::EngineSubmit { rid, sub } => format!("engine_submit:{rid}:{}", sub.name),
            Ev::Emitted { agent, turn } => format!("emitted:a{agent}:t{turn}"),
            Ev::Ingested { agent, turn, .. } => format!("ingested:a{agent}:t{turn}"),
            Ev::Finished { agent, turn } => format!("finished:a{agent}:t{turn}"),
        })
    }
}

#[derive(Debug, Clone)]
struct Exec {
    agent: usize,
    call: ToolCall,
    speculative: bool,
    rid: Option<Rid>,
    output: String,
    done_at: f64,
    finished: bool,
}

#[derive(Debug)]
struct AgentState {
    id: u64,
    tasks: Vec<Arc<TaskScript>>,
    slot: usize,
    turn: usize,
    // tool turns started so far, for forced outcome vectors
    ordinal: usize,
    epoch: u64,
    main_returned: bool,
    samples: Vec<SpecSample>,
    pending: PendingToolCache,
    waiting: Option<(ExecId, bool)>,
    history: Vec<Turn>,
    prompt_tokens: u64,
    rid: Option<Rid>,
    rid_counter: u64,
    turn_start: f64,
    task_start: f64,
    main_done_at: f64,
    spec_done_at: Option<f64>,
    last_tool_done: f64,
    report: AgentReport,
}

impl AgentState {
    fn task(&self) -> &Arc<TaskScript> {
        &self.tasks[self.slot]
    }

    fn conv(&self) -> u64 {
        (self.id << 32) | self.slot as u64
    }

    fn site(&self, seed: u64) -> DrawSite {
        DrawSite { seed, agent: self.id, slot: self.slot as u64, turn: self.turn as u64 }
    }

    fn err(&self, source: MockError) -> WorldError {
        WorldError::Agent { agent: self.id, slot: self.slot, turn: self.turn, source }
    }
}

struct World<'a> {
    cfg: &'a WorldConfig,
    sched: Scheduler<Ev>,
    agents: Vec<AgentState>,
    engine: Option<EngineSim>,
    execs: Vec<Exec>,
    exec_log: Vec<ExecRecord>,
}

/// Runs every agent through its tasks and returns per-agent reports.
pub fn run_world(cfg: &WorldConfig, agents: Vec<(u64, Vec<Arc<TaskScript>>)>) -> Result<WorldReport, WorldError> {
    cfg.check()?;
    for (id, tasks) in &agents {
        for t in tasks {
            t.check().map_err(|e| WorldError::Config(format!("agent {id}, task {}: {e}", t.id)))?;
            for st in &t.turns {
                if cfg.runtime.fixtures.get(&canonical_key(&st.call)?).is_none() {
                    return Err(WorldError::Config(format!("task {}: no fixture output for `{}`", t.id, canonical_key(&st.call)?)));
                }
            }
        }
    }
    let mut sched = Scheduler::new();
    if cfg.trace {
        sched = sched.with_trace();
    }
    let engine = cfg.engine.clone().map(|e| {
        let sim = EngineSim::new(e);
        if cfg.trace {
            sim.with_log()
        } else {
            sim
        }
    });
    let mut world = World {
        cfg,
        sched,
        agents: agents
            .into_iter()
            .map(|(id, tasks)| AgentState {
                id,
                tasks,
                slot: 0,
                turn: 0,
                ordinal: 0,
                epoch: 0,
                main_returned: false,
                samples: Vec::new(),
                pending: PendingToolCache::default(),
                waiting: None,
                history: Vec::new(),
                prompt_tokens: 0,
                rid: None,
                rid_counter: 0,
                turn_start: 0.0,
                task_start: 0.0,
                main_done_at: 0.0,
                spec_done_at: None,
                last_tool_done: 0.0,
                report: AgentReport {
                    agent: id,
                    transcripts: Vec::new(),
                    outcomes: Vec::new(),
                    tasks: Vec::new(),
                    usage: Usage::default(),
                    tokens_emitted: 0,
                    finished_at: 0.0,
                },
            })
            .collect(),
        engine,
        execs: Vec::new(),
        exec_log: Vec::new(),
    };
    for a in 0..world.agents.len() {
        if !world.agents[a].tasks.is_empty() {
            world.begin_task(a)?;
        }
    }
    while let Some((_, ev)) = world.sched.pop() {
        world.handle(ev)?;
    }
    let end = world.sched.now();
    for a in &world.agents {
        if a.slot < a.tasks.len() {
            return Err(WorldError::State(format!("agent {} stalled in task {} turn {}", a.id, a.slot, a.turn)));
        }
    }
    let trace = world.sched.take_trace();
    let engine_log = world.engine.as_mut().and_then(EngineSim::take_log);
    Ok(WorldReport {
        agents: world.agents.into_iter().map(|a| a.report).collect(),
        exec_log: world.exec_log,
        trace,
        engine_log,
        end,
    })
}

impl World<'_> {
    fn now(&self) -> f64 {
        self.sched.now()
    }

    fn after(&mut self, delay: f64, ev: Ev) -> Result<(), WorldError> {
        self.sched.schedule(delay, ev).map(|_| ()).map_err(|e| WorldError::State(e.to_string()))
    }

    fn begin_task(&mut self, a: usize) -> Result<(), WorldError> {
        let now = self.now();
        let ag = &mut self.agents[a];
        let task = ag.task().clone();
        ag.turn = 0;
        ag.history = vec![Turn::user(task.prompt.clone())];
        ag.prompt_tokens = task.prompt_tokens();
        ag.task_start = now;
        ag.last_tool_done = now;
        self.start_turn(a, true)
    }

    /// Opens a client-visible turn: optionally calls the main model, and
    /// asks the speculative model for guesses.
    fn start_turn(&mut self, a: usize, dispatch_main: bool) -> Result<(), WorldError> {
        let now = self.now();
        let cfg = self.cfg;
        let o = cfg.overhead_o;
        let ag = &mut self.agents[a];
        ag.epoch += 1;
        ag.pending.clear();
        ag.main_returned = false;
        ag.waiting = None;
        ag.turn_start = now;
        ag.spec_done_at = None;
        let epoch = ag.epoch;
        let task = ag.task().clone();
        let intended = task.intended_call(ag.turn).cloned();

        if dispatch_main {
            ag.report.usage.main_calls += 1;
            ag.report.usage.main_input += ag.prompt_tokens;
            match cfg.timing {
                MainTiming::Fixed { .. } => {
                    let script = GenerationScript { task: &task, timing: cfg.timing };
                    let (_, latency) = script.main_generate(ag.turn, ag.prompt_tokens).map_err(|e| ag.err(e))?;
                    self.after(o + latency, Ev::MainReply { agent: a, epoch })?;
                }
                MainTiming::PerToken { .. } => {
                    ag.rid_counter += 1;
                    let rid: Rid = format!("a{}-t{}-r{}", ag.id, ag.slot, ag.rid_counter).into();
                    ag.rid = Some(rid.clone());
                    let req = EngineRequest { rid, conv: ag.conv(), task: task.clone(), turn: ag.turn, prompt_tokens: ag.prompt_tokens };
                    self.after(o, Ev::EngineArrive(Box::new(req)))?;
                }
            }
        }

        let ag = &mut self.agents[a];
        if let (true, Some(spec)) = (cfg.mode.speculates(), cfg.spec.as_ref()) {
            let forced = if intended.is_some() { spec.forced_at(ag.ordinal) } else { None };
            ag.samples = speculate(spec, intended.as_ref(), ag.site(cfg.seed), forced);
            ag.report.usage.spec_calls += ag.samples.len() as u64;
            ag.report.usage.spec_input += ag.prompt_tokens * ag.samples.len() as u64;
            for s in &ag.samples {
                ag.report.usage.spec_output += s.call.as_ref().map_or(1, |c| render_call_tokens(c).len() as u64);
            }
            for i in 0..ag.samples.len() {
                self.after(o + spec.latency_g, Ev::SpecReply { agent: a, epoch, sample: i })?;
            }
        }
        if intended.is_some() {
            self.agents[a].ordinal += 1;
        }
        Ok(())
    }

    fn handle(&mut self, ev: Ev) -> Result<(), WorldError> {
        match ev {
            Ev::MainReply { agent, epoch } => {
                if self.agents[agent].epoch != epoch {
                    return Err(WorldError::State("main reply for a closed turn".into()));
                }
                self.on_model_reply(agent)
            }
            Ev::SpecReply { agent, epoch, sample } => self.on_spec_reply(agent, epoch, sample),
            Ev::ToolDone { exec } => self.on_tool_done(exec),
            Ev::EngineArrive(req) => {
                let now = self.now();
                let effects = self.engine_mut()?.arrive(now, *req);
                self.apply(effects)
            }
            Ev::Engine(e) => {
                let now = self.now();
                let effects = self.engine_mut()?.handle(now, e);
                self.apply(effects)
            }
            Ev::EngineSubmit { rid, sub } => {
                let now = self.now();
                self.engine_mut()?.submit(now, &rid, *sub);
                Ok(())
            }
            Ev::Emitted { agent, turn } | Ev::Finished { agent, turn } => {
                self.expect_turn(agent, turn)?;
                self.on_model_reply(agent)
            }
            Ev::Ingested { agent, turn, accepted } => {
                self.expect_turn(agent, turn)?;
                self.on_ingested(agent, accepted)
            }
        }
    }

    fn engine_mut(&mut self) -> Result<&mut EngineSim, WorldError> {
        self.engine.as_mut().ok_or_else(|| WorldError::State("engine event without an engine".into()))
    }

    fn expect_turn(&self, a: usize, turn: usize) -> Result<(), WorldError> {
        if self.agents[a].turn == turn {
            Ok(())
        } else {
            Err(WorldError::State(format!("agent {a}: engine at turn {turn}, client at {}", self.agents[a].turn)))
        }
    }

    fn agent_of_conv(&self, conv: u64) -> usize {
        let id = conv >> 32;
        self.agents.iter().position(|a| a.id == id).expect("conversation of a known agent")
    }

    fn apply(&mut self, effects: Vec<Effect>) -> Result<(), WorldError> {
        let o = self.cfg.overhead_o;
        for eff in effects {
            match eff {
                Effect::After(d, ev) => self.after(d, Ev::Engine(ev))?,
                Effect::ToolCallEmitted { conv, turn, .. } => {
                    let agent = self.agent_of_conv(conv);
                    self.after(o, Ev::Emitted { agent, turn })?;
                }
                Effect::Ingested { conv, turn, accepted, .. } => {
                    let agent = self.agent_of_conv(conv);
                    self.after(o, Ev::Ingested { agent, turn, accepted })?;
                }
                Effect::Finished { conv, turn, .. } => {
                    let agent = self.agent_of_conv(conv);
                    self.after(o, Ev::Finished { agent, turn })?;
                }
            }
        }
        Ok(())
    }

    fn speculable(&self, name: &str) -> bool {
        self.cfg.toolset.as_ref().is_none_or(|ts| ts.is_speculable(name))
    }

    fn start_exec(&mut self, a: usize, call: ToolCall, speculative: bool) -> Result<ExecId, WorldError> {
        let now = self.now();
        let ag = &self.agents[a];
        let task = ag.task();
        let key = canonical_key(&call)?;
        let scripted = task.turns.get(ag.turn);
        let fixed = scripted.filter(|st| st.call == call).and_then(|st| st.tool_time);
        let (output, duration) = self.cfg.runtime.run_tool(&call, ag.site(self.cfg.seed), fixed).map_err(|e| ag.err(e))?;
        let id = self.execs.len();
        self.exec_log.push(ExecRecord {
            agent: ag.id,
            slot: ag.slot,
            turn: ag.turn,
            key: key.to_string(),
            speculative,
            started: now,
            done: now + duration,
        });
        self.execs.push(Exec {
            agent: a,
            call,
            speculative,
            rid: ag.rid.clone(),
            output,
            done_at: now + duration,
            finished: false,
        });
        self.after(duration, Ev::ToolDone { exec: id })?;
        Ok(id)
    }

    fn on_spec_reply(&mut self, a: usize, epoch: u64, i: usize) -> Result<(), WorldError> {
        let now = self.now();
        let ag = &mut self.agents[a];
        if ag.epoch != epoch || ag.main_returned {
            return Ok(());
        }
        ag.spec_done_at.get_or_insert(now);
        let Some(call) = ag.samples[i].call.clone() else {
            return Ok(());
        };
        if !self.speculable(&call.name) {
            return Ok(());
        }
        let key = canonical_key(&call)?;
        let mut pending = std::mem::take(&mut self.agents[a].pending);
        // a sample that cannot run counts as a miss
        let _ = pending.get_or_start(key, || self.start_exec(a, call, true));
        self.agents[a].pending = pending;
        Ok(())
    }

    fn on_tool_done(&mut self, id: ExecId) -> Result<(), WorldError> {
        let exec = &mut self.execs[id];
        exec.finished = true;
        let a = exec.agent;
        if self.cfg.mode == Mode::EngineSpec && exec.speculative {
            if let Some(rid) = exec.rid.clone() {
                let sub = Submission::from_call(&exec.call, exec.output.clone(), self.cfg.keep_alive)?;
                self.after(self.cfg.overhead_o, Ev::EngineSubmit { rid, sub: Box::new(sub) })?;
            }
        }
        if self.agents[a].waiting.map(|w| w.0) == Some(id) {
            let hit = self.agents[a].waiting.expect("checked").1;
            self.finish_tool_turn(a, id, hit, false, 0)?;
        }
        Ok(())
    }

    /// The model's output for the current turn reached the client.
    fn on_model_reply(&mut self, a: usize) -> Result<(), WorldError> {
        let now = self.now();
        let ag = &mut self.agents[a];
        ag.main_returned = true;
        ag.main_done_at = now;
        let task = ag.task().clone();
        let tokens = task.turn_tokens(ag.turn).map_err(|e| ag.err(e))?.len() as u64;
        ag.report.tokens_emitted += tokens;
        ag.report.usage.main_output += tokens;
        match task.intended_call(ag.turn).cloned() {
            Some(call) => {
                let key = canonical_key(&call)?;
                let reuse = if self.cfg.mode.speculates() { self.agents[a].pending.get(&key) } else { None };
                let (id, hit) = match reuse {
                    Some(id) => (id, true),
                    None => (self.start_exec(a, call, false)?, false),
                };
                if self.execs[id].finished {
                    self.finish_tool_turn(a, id, hit, false, 0)
                } else {
                    self.agents[a].waiting = Some((id, hit));
                    Ok(())
                }
            }
            None => self.finish_task(a, tokens),
        }
    }

    /// The engine used a submitted output; the client only updates its view.
    fn on_ingested(&mut self, a: usize, accepted: usize) -> Result<(), WorldError> {
        let now = self.now();
        let ag = &mut self.agents[a];
        ag.main_returned = true;
        ag.main_done_at = now;
        let task = ag.task().clone();
        let call = task.intended_call(ag.turn).cloned().ok_or_else(|| WorldError::State("ingest on final turn".into()))?;
        let key = canonical_key(&call)?;
        let tokens = task.turn_tokens(ag.turn).map_err(|e| ag.err(e))?.len() as u64;
        ag.report.tokens_emitted += tokens;
        ag.report.usage.main_output += tokens;
        let id = match ag.pending.get(&key) {
            Some(id) => id,
            None => self.find_exec(a, &key).ok_or_else(|| WorldError::State("ingested output without a client execution".into()))?,
        };
        self.finish_tool_turn(a, id, true, true, accepted)
    }

    fn find_exec(&self, a: usize, key: &CanonicalKey) -> Option<ExecId> {
        let rid = self.agents[a].rid.as_ref()?;
        self.execs
            .iter()
            .enumerate()
            .rev()
            .find(|(_, e)| e.agent == a && e.speculative && e.rid.as_ref() == Some(rid) && canonical_key(&e.call).ok().as_ref() == Some(key))
            .map(|(i, _)| i)
    }

    fn finish_tool_turn(&mut self, a: usize, id: ExecId, hit: bool, ingested: bool, accepted: usize) -> Result<(), WorldError> {
        let now = self.now();
        let eligible = {
            let call = &self.execs[id].call;
            self.speculable(&call.name)
        };
        let exec = &self.execs[id];
        let (call, output, done_at) = (exec.call.clone(), exec.output.clone(), exec.done_at);
        let ag = &mut self.agents[a];
        let task = ag.task().clone();
        let tokens = task.turn_tokens(ag.turn).map(|t| t.len() as u64).unwrap_or(0);
        let grow = render_call_tokens(&call).len() as u64 + token_count(&output) as u64;
        ag.history.push(Turn::assistant_call(call.clone()));
        ag.history.push(Turn::tool(call, output));
        ag.prompt_tokens += grow;
        ag.report.usage.turns += 1;
        ag.report.outcomes.push(TurnOutcome {
            agent: ag.id,
            slot: ag.slot,
            task_id: task.id.clone(),
            turn_index: ag.turn,
            hit,
            ingested,
            eligible,
            is_final: false,
            turn_start: ag.turn_start,
            main_done_at: ag.main_done_at,
            spec_done_at: ag.spec_done_at,
            tool_done_at: Some(done_at),
            turn_done_at: now,
            tokens_emitted: tokens,
            draft_accepted: accepted,
        });
        ag.last_tool_done = now;
        ag.turn += 1;
        // after an ingest the engine keeps the request; otherwise resubmit
        self.start_turn(a, !ingested)
    }

    fn finish_task(&mut self, a: usize, tokens: u64) -> Result<(), WorldError> {
        let now = self.now();
        let prefix_cache = self.cfg.engine.as_ref().is_some_and(|e| e.prefix_cache);
        let conv = self.agents[a].conv();
        let tool_turns = self.agents[a].task().turns.len();
        let engine_window = self
            .engine
            .as_mut()
            .and_then(|e| e.take_trace(conv))
            .and_then(|tr| tr.window(prefix_cache, tool_turns));
        let ag = &mut self.agents[a];
        let task = ag.task().clone();
        ag.history.push(Turn::assistant(task.final_turn.answer.clone()));
        ag.report.usage.turns += 1;
        ag.report.outcomes.push(TurnOutcome {
            agent: ag.id,
            slot: ag.slot,
            task_id: task.id.clone(),
            turn_index: ag.turn,
            hit: false,
            ingested: false,
            eligible: false,
            is_final: true,
            turn_start: ag.turn_start,
            main_done_at: now,
            spec_done_at: ag.spec_done_at,
            tool_done_at: None,
            turn_done_at: now,
            tokens_emitted: tokens,
            draft_accepted: 0,
        });
        ag.report.tasks.push(TaskRun {
            agent: ag.id,
            slot: ag.slot,
            task_id: task.id.clone(),
            start: ag.task_start,
            tool_phase_end: ag.last_tool_done,
            end: now,
            tool_turns,
            engine_window,
        });
        ag.report.transcripts.push(std::mem::take(&mut ag.history));
        ag.report.finished_at = now;
        ag.epoch += 1;
        ag.slot += 1;
        ag.rid = None;
        if ag.slot < ag.tasks.len() {
            self.begin_task(a)?;
        }
        Ok(())
    }
}

/// Counts executions per `(agent, task, turn, key)` on the speculative path.
pub fn max_spec_executions(log: &[ExecRecord]) -> usize {
    let mut counts: BTreeMap<(u64, usize, usize, &str), usize> = BTreeMap::new();
    for r in log.iter().filter(|r| r.speculative) {
        *counts.entry((r.agent, r.slot, r.turn, r.key.as_str())).or_default() += 1;
    }
    counts.values().copied().max().unwrap_or(0)
}
