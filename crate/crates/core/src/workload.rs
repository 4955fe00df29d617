//! Workloads: many agents running sampled tasks, paired against a baseline.
//!
//! Runs for different modes share the seed, so they see the same tasks,
//! tool latencies, and speculation coins; the only difference is whether
//! and where speculation happens.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::analytic::{self, EngineScenario, TurnRealization};
use crate::client::AgentReport;
use crate::domain::{render_call_tokens, DomainError};
use crate::engine::{EngineConfig, VerifyCost};
use crate::library::Library;
use crate::metrics::{self, mean, PriceSheet, ResultRow, RunMetrics};
use crate::mock::{call_with_span, filler_text, mix_seed, rng_for, FinalTurn, Fixtures, LatencyDist, MainTiming, MissBehavior, MockError, ScriptTurn, SpecModelConfig, Stream, TaskScript, ToolRuntime};
use crate::par::{self, Execution};
use crate::world::{run_world, Mode, WorldConfig, WorldError, WorldReport};

#[derive(Debug, thiserror::Error)]
pub enum WorkloadError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Mock(#[from] MockError),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
    #[error(transparent)]
    Analytic(#[from] analytic::AnalyticError),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

type Result<T> = std::result::Result<T, WorkloadError>;

fn config_err(msg: impl Into<String>) -> WorkloadError {
    WorkloadError::Config(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineSettings {
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "yes")]
    pub prefix_cache: bool,
    #[serde(default)]
    pub verify: VerifyCost,
}

impl Default for EngineSettings {
    fn default() -> Self {
        Self { batch_size: default_batch(), prefix_cache: true, verify: VerifyCost::SingleStep }
    }
}

fn default_batch() -> usize {
    64
}
fn yes() -> bool {
    true
}
fn default_agents() -> usize {
    1
}
fn default_tasks() -> usize {
    32
}
fn default_reps() -> u32 {
    5
}
fn default_modes() -> Vec<Mode> {
    Mode::ALL.to_vec()
}

/// Task scripts and outputs, either shipped or from files.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LibrarySource {
    #[default]
    Builtin,
    Files { tasks: PathBuf, outputs: PathBuf },
}

impl LibrarySource {
    pub fn load(&self, base: Option<&Path>) -> Result<Library> {
        match self {
            LibrarySource::Builtin => Ok(Library::builtin()),
            LibrarySource::Files { tasks, outputs } => {
                let resolve = |p: &PathBuf| match base {
                    Some(b) if p.is_relative() => b.join(p),
                    _ => p.clone(),
                };
                Ok(Library::load(&resolve(tasks), &resolve(outputs))?)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxes {
    #[serde(default)]
    pub alpha: Vec<f64>,
    #[serde(default)]
    pub lambda: Vec<u32>,
    #[serde(default)]
    pub tool_mean: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadConfig {
    #[serde(default = "default_agents")]
    pub agents: usize,
    #[serde(default = "default_tasks")]
    pub tasks_per_agent: usize,
    pub tool_latency: LatencyDist,
    pub spec: SpecModelConfig,
    #[serde(default = "default_modes")]
    pub modes: Vec<Mode>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_reps")]
    pub repetitions: u32,
    pub main: MainTiming,
    #[serde(default)]
    pub overhead_o: f64,
    #[serde(default)]
    pub engine: EngineSettings,
    #[serde(default)]
    pub prices: Option<PriceSheet>,
    #[serde(default)]
    pub library: LibrarySource,
    /// Treat every tool as safe to speculate.
    #[serde(default)]
    pub speculate_all_tools: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepAxes>,
}

impl WorkloadConfig {
    pub fn check(&self) -> Result<()> {
        if self.agents < 1 {
            return Err(config_err("agents must be >= 1"));
        }
        if self.tasks_per_agent < 1 {
            return Err(config_err("tasks_per_agent must be >= 1"));
        }
        if self.repetitions < 1 {
            return Err(config_err("repetitions must be >= 1"));
        }
        if self.modes.is_empty() {
            return Err(config_err("no modes selected"));
        }
        if self.modes.contains(&Mode::EngineSpec) && matches!(self.main, MainTiming::Fixed { .. }) {
            return Err(config_err("engine_spec needs per-token main timing"));
        }
        self.tool_latency.check()?;
        self.spec.check()?;
        self.main.check()?;
        Ok(())
    }

    fn engine_config(&self, mode: Mode) -> Option<EngineConfig> {
        match self.main {
            MainTiming::Fixed { .. } => None,
            MainTiming::PerToken { phi, delta } => Some(EngineConfig {
                batch_size: self.engine.batch_size,
                phi,
                delta,
                overhead_o: self.overhead_o,
                prefix_cache: self.engine.prefix_cache,
                tool_cache: mode == Mode::EngineSpec,
                verify: self.engine.verify,
            }),
        }
    }
}

/// Seed for repetition `rep`.
pub fn rep_seed(seed: u64, rep: u32) -> u64 {
    mix_seed(Stream::TaskPick, &[seed, u64::from(rep), 0x5EED])
}

/// Tasks for each agent, sampled with replacement.
pub fn assign_tasks(lib: &Library, agents: usize, per_agent: usize, seed: u64) -> Result<Vec<(u64, Vec<Arc<TaskScript>>)>> {
    if lib.tasks.is_empty() {
        return Err(config_err("task library is empty"));
    }
    Ok((0..agents as u64)
        .map(|a| {
            let mut rng = rng_for(Stream::TaskPick, &[seed, a]);
            let tasks = (0..per_agent).map(|_| lib.tasks[rng.random_range(0..lib.tasks.len())].clone()).collect();
            (a, tasks)
        })
        .collect())
}

/// One mode of a workload at one repetition.
pub fn run_mode(cfg: &WorkloadConfig, lib: &Library, mode: Mode, rep: u32, trace: bool) -> Result<WorldReport> {
    cfg.check()?;
    let seed = rep_seed(cfg.seed, rep);
    let world = WorldConfig {
        mode,
        timing: cfg.main,
        overhead_o: cfg.overhead_o,
        spec: mode.speculates().then(|| cfg.spec.clone()),
        engine: cfg.engine_config(mode),
        runtime: ToolRuntime::new(cfg.tool_latency, lib.fixtures.clone()),
        toolset: (!cfg.speculate_all_tools).then(|| lib.toolset.clone()),
        seed,
        trace,
        keep_alive: None,
    };
    let agents = assign_tasks(lib, cfg.agents, cfg.tasks_per_agent, seed)?;
    Ok(run_world(&world, agents)?)
}

/// Metrics for `run`, with time saved against `baseline` when given.
pub fn compute_metrics(run: &[AgentReport], baseline: Option<&[AgentReport]>, prices: Option<&PriceSheet>) -> Result<RunMetrics> {
    let throughput_per_agent = run
        .iter()
        .map(|a| metrics::throughput(a.tokens_emitted, a.finished_at))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let time_saved_pct = match baseline {
        Some(base) => {
            if base.len() != run.len() {
                return Err(config_err("paired runs have different agent counts"));
            }
            let saved = base
                .iter()
                .zip(run)
                .map(|(b, r)| metrics::time_saved(b.finished_at, r.finished_at))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            Some(mean(&saved))
        }
        None => None,
    };
    let eligible: usize = run.iter().flat_map(|a| &a.outcomes).filter(|o| o.eligible).count();
    let hits: usize = run.iter().flat_map(|a| &a.outcomes).filter(|o| o.eligible && o.hit).count();
    let hit_rate = if eligible == 0 { 0.0 } else { hits as f64 / eligible as f64 };
    let extra_cost = match prices {
        Some(p) => {
            let mut u = crate::client::Usage::default();
            for a in run {
                u.add(&a.usage);
            }
            Some(metrics::extra_cost(&u, p)?)
        }
        None => None,
    };
    Ok(RunMetrics { throughput: mean(&throughput_per_agent), throughput_per_agent, time_saved_pct, hit_rate, extra_cost })
}

/// Runs `mode` and its paired baseline.
pub fn run_paired(cfg: &WorkloadConfig, lib: &Library, mode: Mode, rep: u32) -> Result<(RunMetrics, WorldReport, WorldReport)> {
    let base = run_mode(cfg, lib, Mode::Baseline, rep, false)?;
    let run = run_mode(cfg, lib, mode, rep, false)?;
    let m = compute_metrics(&run.agents, Some(&base.agents), cfg.prices.as_ref())?;
    Ok((m, run, base))
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Point {
    mode: Mode,
    alpha: f64,
    lambda: u32,
    tool_mean: f64,
    rep: u32,
}

fn axes(cfg: &WorkloadConfig) -> (Vec<f64>, Vec<u32>, Vec<f64>) {
    let s = cfg.sweep.clone().unwrap_or(SweepAxes { alpha: vec![], lambda: vec![], tool_mean: vec![] });
    let or = |v: Vec<f64>, d: f64| if v.is_empty() { vec![d] } else { v };
    let lambdas = if s.lambda.is_empty() { vec![cfg.spec.lambda] } else { s.lambda };
    (or(s.alpha, cfg.spec.alpha), lambdas, or(s.tool_mean, cfg.tool_latency.mean))
}

fn at_point(cfg: &WorkloadConfig, p: &Point) -> WorkloadConfig {
    let mut c = cfg.clone();
    c.spec.alpha = p.alpha;
    c.spec.lambda = p.lambda;
    c.tool_latency.mean = p.tool_mean;
    c.sweep = None;
    c
}

/// Runs every selected mode over the sweep axes and repetitions. Baseline
/// rows appear once per tool mean and repetition, with alpha and lambda 0.
pub fn run_sweep(cfg: &WorkloadConfig, lib: &Library, exec: Execution) -> Result<Vec<ResultRow>> {
    cfg.check()?;
    let (alphas, lambdas, means) = axes(cfg);
    for &a in &alphas {
        if !(0.0..=1.0).contains(&a) {
            return Err(config_err(format!("alpha {a} outside [0,1]")));
        }
    }
    // baselines depend only on the tool mean and the repetition
    let base_points: Vec<(f64, u32)> = means.iter().flat_map(|&m| (0..cfg.repetitions).map(move |r| (m, r))).collect();
    let bases = par::try_map(exec, &base_points, |&(m, rep)| {
        let p = Point { mode: Mode::Baseline, alpha: 0.0, lambda: 0, tool_mean: m, rep };
        run_mode(&at_point(cfg, &p), lib, Mode::Baseline, rep, false).map(|r| r.agents)
    })?;
    let base_for = |m: f64, rep: u32| {
        let i = base_points.iter().position(|&(bm, br)| bm == m && br == rep).expect("baseline computed");
        &bases[i]
    };

    let mut points = Vec::new();
    for &mode in &cfg.modes {
        if mode == Mode::Baseline {
            continue;
        }
        for &tool_mean in &means {
            for &alpha in &alphas {
                for &lambda in &lambdas {
                    for rep in 0..cfg.repetitions {
                        points.push(Point { mode, alpha, lambda, tool_mean, rep });
                    }
                }
            }
        }
    }
    let spec_rows = par::try_map(exec, &points, |p| {
        let c = at_point(cfg, p);
        let run = run_mode(&c, lib, p.mode, p.rep, false)?;
        let m = compute_metrics(&run.agents, Some(base_for(p.tool_mean, p.rep)), c.prices.as_ref())?;
        Ok::<_, WorkloadError>(row(p, cfg.agents, &m))
    })?;

    let mut rows = Vec::new();
    if cfg.modes.contains(&Mode::Baseline) {
        for (i, &(m, rep)) in base_points.iter().enumerate() {
            let p = Point { mode: Mode::Baseline, alpha: 0.0, lambda: 0, tool_mean: m, rep };
            let metrics = compute_metrics(&bases[i], Some(&bases[i]), cfg.prices.as_ref())?;
            rows.push(row(&p, cfg.agents, &metrics));
        }
    }
    rows.extend(spec_rows);
    Ok(rows)
}

fn row(p: &Point, agents: usize, m: &RunMetrics) -> ResultRow {
    ResultRow {
        mode: p.mode.as_str().to_string(),
        agents,
        alpha: p.alpha,
        lambda: p.lambda,
        tool_mean: p.tool_mean,
        rep: p.rep,
        throughput: m.throughput,
        time_saved_pct: m.time_saved_pct.unwrap_or(0.0),
        hit_rate: m.hit_rate,
        extra_cost: m.extra_cost,
    }
}

// ---------------------------------------------------------------------------
// engine scenarios

/// An engine scenario plus the speculative model that serves it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineScenarioSpec {
    pub o: f64,
    pub phi: f64,
    pub delta: f64,
    #[serde(rename = "X1")]
    pub x1: u64,
    pub turns: Vec<analytic::TurnProfile>,
    #[serde(default)]
    pub alpha: f64,
    #[serde(default = "default_g")]
    pub g: f64,
    #[serde(default = "one")]
    pub lambda: u32,
    #[serde(default)]
    pub seed: u64,
}

fn default_g() -> f64 {
    0.2
}
fn one() -> u32 {
    1
}

impl EngineScenarioSpec {
    pub fn scenario(&self) -> EngineScenario {
        EngineScenario { o: self.o, phi: self.phi, delta: self.delta, x1: self.x1, turns: self.turns.clone(), alpha: self.alpha }
    }
}

/// Builds a task whose token counts and tool times match `s` exactly.
pub fn engine_scenario_task(s: &EngineScenario) -> Result<(Arc<TaskScript>, Fixtures)> {
    s.validate()?;
    let mut fx = Fixtures::default();
    let mut turns = Vec::with_capacity(s.k());
    for (i, tp) in s.turns.iter().enumerate() {
        let call = call_with_span(&format!("tool_{i}"), tp.t)?;
        fx.insert(&call, filler_text(tp.t_o))?;
        turns.push(ScriptTurn { reasoning: filler_text(tp.r), call, tool_time: Some(tp.t_tool) });
    }
    let task = TaskScript {
        id: "engine-scenario".into(),
        prompt: filler_text(s.x1),
        turns,
        final_turn: FinalTurn { reasoning: String::new(), answer: "done".into() },
    };
    Ok((Arc::new(task), fx))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EngineTotal {
    pub config: String,
    pub alpha: f64,
    pub total: f64,
    /// Closed-form expectation for the configuration.
    pub expected: f64,
    /// Closed form evaluated on the realized hit and draft vector.
    pub realized: f64,
}

#[derive(Debug)]
pub struct EngineScenarioRun {
    pub totals: Vec<EngineTotal>,
    pub logs: Vec<(String, String)>,
}

pub const ENGINE_TOTALS_HEADER: &str = "config,alpha,total_s,expected_s,realized_s";

pub fn engine_totals_csv(t: &[EngineTotal]) -> String {
    let mut s = String::from(ENGINE_TOTALS_HEADER);
    s.push('\n');
    for r in t {
        s.push_str(&format!("{},{},{:.9},{:.9},{:.9}\n", r.config, analytic::fmt_num(r.alpha), r.total, r.expected, r.realized));
    }
    s
}

/// Runs the scenario without prefix reuse, with prefix reuse, and with the
/// tool cache at the scenario's acceptance rate. Wrong guesses carry no
/// call, so they leave no draft behind.
pub fn run_engine_scenario(spec: &EngineScenarioSpec, trace: bool) -> Result<EngineScenarioRun> {
    let s = spec.scenario();
    let (task, fixtures) = engine_scenario_task(&s)?;
    let runtime = ToolRuntime::new(LatencyDist::fixed(0.0), fixtures);
    let timing = MainTiming::PerToken { phi: s.phi, delta: s.delta };
    let engine = |prefix_cache: bool, tool_cache: bool| EngineConfig {
        batch_size: 1,
        phi: s.phi,
        delta: s.delta,
        overhead_o: s.o,
        prefix_cache,
        tool_cache,
        verify: VerifyCost::SingleStep,
    };
    let forced = if s.alpha == 1.0 {
        Some(vec![true])
    } else if s.alpha == 0.0 {
        Some(vec![false])
    } else {
        None
    };
    let spec_model = SpecModelConfig { latency_g: spec.g, alpha: s.alpha, lambda: spec.lambda, miss: MissBehavior::NoCall, forced };
    let configs = [
        ("vanilla", Mode::Baseline, engine(false, false), analytic::t_vanilla(&s)?),
        ("prefix_cached", Mode::Baseline, engine(true, false), analytic::t_cached(&s)?),
        ("tool_cache", Mode::EngineSpec, engine(true, true), analytic::t_spec_engine(&s)?),
    ];
    let mut totals = Vec::new();
    let mut logs = Vec::new();
    for (name, mode, eng, expected) in configs {
        let world = WorldConfig {
            mode,
            timing,
            overhead_o: s.o,
            spec: mode.speculates().then(|| spec_model.clone()),
            engine: Some(eng),
            runtime: runtime.clone(),
            toolset: None,
            seed: spec.seed,
            trace,
            keep_alive: None,
        };
        let report = run_world(&world, vec![(0, vec![task.clone()])])?;
        let agent = &report.agents[0];
        let total = agent.tasks[0].engine_window.ok_or_else(|| config_err("engine window not recorded"))?;
        let realized_vec: Vec<TurnRealization> = agent
            .outcomes
            .iter()
            .filter(|o| !o.is_final)
            .map(|o| TurnRealization { hit: o.ingested, accepted: o.draft_accepted as u64 })
            .collect();
        let realized = match name {
            "vanilla" => expected,
            _ => analytic::t_engine_realized(&s, &realized_vec)?,
        };
        totals.push(EngineTotal { config: name.to_string(), alpha: if mode.speculates() { s.alpha } else { 0.0 }, total, expected, realized });
        if let Some(l) = report.engine_log {
            logs.push((format!("{name}.engine.log"), l));
        }
        if let Some(t) = report.trace {
            logs.push((format!("{name}.events.log"), t));
        }
    }
    Ok(EngineScenarioRun { totals, logs })
}

/// Scenario file: a workload, an engine scenario, or both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default)]
    pub workload: Option<WorkloadConfig>,
    #[serde(default)]
    pub engine_scenario: Option<EngineScenarioSpec>,
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self> {
        let f: ScenarioFile = serde_json::from_str(text).map_err(|e| config_err(format!("scenario: {e}")))?;
        if f.workload.is_none() && f.engine_scenario.is_none() {
            return Err(config_err("scenario has neither `workload` nor `engine_scenario`"));
        }
        Ok(f)
    }
}

/// Span length of every scripted call in a task, for tests and reports.
pub fn span_lengths(task: &TaskScript) -> Vec<usize> {
    task.turns.iter().map(|t| render_call_tokens(&t.call).len()).collect()
}
