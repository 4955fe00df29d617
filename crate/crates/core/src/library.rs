//! Synthetic task library: scripted agent tasks over a small toolset, with
//! precomputed tool outputs.
//!
//! The shipped fixture files are the output of [`Library::generate`]; a
//! test keeps them in sync.

use std::path::Path;
use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{CostClass, ParamSpec, ScalarKind, ToolCall, ToolSpec, Toolset};
use crate::mock::{filler_text, rng_for, FinalTurn, Fixtures, MockError, ScriptTurn, Stream, TaskScript};

pub const TASK_COUNT: usize = 64;
const LIBRARY_SEED: u64 = 20_250_811;

pub const TASKS_JSON: &str = include_str!("../fixtures/tasks.json");
pub const OUTPUTS_JSON: &str = include_str!("../fixtures/tool_outputs.json");

#[derive(Debug, Clone, PartialEq)]
pub struct Library {
    pub toolset: Toolset,
    pub tasks: Vec<Arc<TaskScript>>,
    pub fixtures: Fixtures,
}

#[derive(Serialize, Deserialize)]
struct TasksFile {
    toolset: Toolset,
    tasks: Vec<TaskScript>,
}

impl Library {
    /// The library shipped with the crate.
    pub fn builtin() -> Self {
        Self::from_json(TASKS_JSON, OUTPUTS_JSON).expect("shipped fixtures parse")
    }

    pub fn from_json(tasks: &str, outputs: &str) -> Result<Self, MockError> {
        let f: TasksFile = serde_json::from_str(tasks).map_err(|e| MockError::Fixture(format!("tasks: {e}")))?;
        let lib = Self {
            toolset: f.toolset,
            tasks: f.tasks.into_iter().map(Arc::new).collect(),
            fixtures: Fixtures::from_json(outputs)?,
        };
        lib.check()?;
        Ok(lib)
    }

    pub fn load(tasks: &Path, outputs: &Path) -> Result<Self, MockError> {
        let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| MockError::Fixture(format!("{}: {e}", p.display())));
        Self::from_json(&read(tasks)?, &read(outputs)?)
    }

    /// Every scripted call names a known tool and has a fixture output.
    pub fn check(&self) -> Result<(), MockError> {
        if self.tasks.is_empty() {
            return Err(MockError::Fixture("library has no tasks".into()));
        }
        for t in &self.tasks {
            t.check()?;
            for st in &t.turns {
                self.toolset.validate(&st.call)?;
                let key = crate::domain::canonical_key(&st.call)?;
                if self.fixtures.get(&key).is_none() {
                    return Err(MockError::Fixture(format!("task {}: no output for `{key}`", t.id)));
                }
            }
        }
        Ok(())
    }

    pub fn tasks_json(&self) -> String {
        let f = TasksFile { toolset: self.toolset.clone(), tasks: self.tasks.iter().map(|t| (**t).clone()).collect() };
        let mut s = serde_json::to_string_pretty(&f).expect("plain data");
        s.push('\n');
        s
    }

    pub fn generate() -> Self {
        let mut rng = rng_for(Stream::Library, &[LIBRARY_SEED]);
        let toolset = toolset();
        let mut fixtures = Fixtures::default();
        let mut tasks = Vec::with_capacity(TASK_COUNT);
        let system = system_prompt(&toolset);
        for i in 0..TASK_COUNT {
            let n_turns = rng.random_range(1..=5usize);
            let mut names: Vec<&str> = TOOLS.iter().map(|t| t.0).filter(|n| *n != "send_email").collect();
            let mut turns = Vec::with_capacity(n_turns);
            for turn in 0..n_turns {
                let last = turn + 1 == n_turns;
                let name = if last && rng.random_bool(0.08) {
                    "send_email"
                } else {
                    let idx = rng.random_range(0..names.len());
                    names.swap_remove(idx)
                };
                let call = sample_call(&mut rng, name);
                let out_tokens = rng.random_range(20..=300u64);
                let output = tool_output(&call, out_tokens);
                fixtures.insert(&call, output).expect("generated calls are valid");
                turns.push(ScriptTurn {
                    reasoning: reasoning_text(&mut rng, 40, 160),
                    call,
                    tool_time: None,
                });
            }
            let question = format!("Task {i}: {}", pick(&mut rng, QUESTIONS));
            let pad = rng.random_range(100..=700u64);
            let prompt = format!("{system}\nUser: {question}\n{}", filler_text(pad));
            let answer_tokens = rng.random_range(10..=40u64);
            tasks.push(Arc::new(TaskScript {
                id: format!("task-{i:03}"),
                prompt,
                turns,
                final_turn: FinalTurn {
                    reasoning: reasoning_text(&mut rng, 20, 80),
                    answer: format!("Answer: {}", filler_text(answer_tokens)),
                },
            }));
        }
        Self { toolset, tasks, fixtures }
    }
}

// name, params, stateless, cost class
type ToolDef = (&'static str, &'static [(&'static str, ScalarKind)], bool, CostClass);

const TOOLS: &[ToolDef] = &[
    ("search", &[("q", ScalarKind::String), ("k", ScalarKind::Number)], true, CostClass::Cheap),
    ("fetch_page", &[("url", ScalarKind::String)], true, CostClass::Cheap),
    ("get_weather", &[("city", ScalarKind::String), ("units", ScalarKind::String)], true, CostClass::Cheap),
    ("stock_quote", &[("symbol", ScalarKind::String)], true, CostClass::Cheap),
    ("convert_currency", &[("amount", ScalarKind::Number), ("from", ScalarKind::String), ("to", ScalarKind::String)], true, CostClass::Cheap),
    ("lookup_user", &[("user_id", ScalarKind::Number)], true, CostClass::Cheap),
    ("list_files", &[("path", ScalarKind::String), ("recursive", ScalarKind::Bool)], true, CostClass::Cheap),
    ("read_file", &[("path", ScalarKind::String)], true, CostClass::Cheap),
    ("calendar_events", &[("date", ScalarKind::String)], true, CostClass::Cheap),
    ("translate", &[("text", ScalarKind::String), ("target", ScalarKind::String)], true, CostClass::Expensive),
    ("send_email", &[("to", ScalarKind::String), ("subject", ScalarKind::String)], false, CostClass::Cheap),
];

pub fn toolset() -> Toolset {
    Toolset::new(
        TOOLS
            .iter()
            .map(|(name, params, stateless, cost)| ToolSpec {
                name: name.to_string(),
                params: params.iter().map(|(p, k)| ParamSpec { name: p.to_string(), kind: *k }).collect(),
                stateless: *stateless,
                cost_class: *cost,
            })
            .collect(),
    )
    .expect("tool names are unique")
}

fn system_prompt(ts: &Toolset) -> String {
    let tools = serde_json::to_string(ts.specs()).expect("plain data");
    format!("System: you are an assistant that may call tools. Tools: {tools}")
}

const WORDS: &[&str] = &[
    "latency", "cache", "agent", "tool", "engine", "kernel", "batch", "prefill", "decode", "token", "weather", "market", "report",
    "summary", "invoice", "schedule", "meeting", "budget", "paper", "dataset",
];
const CITIES: &[&str] = &["Berkeley", "Lisbon", "Osaka", "Nairobi", "Toronto", "Zurich", "Lima", "Seoul"];
const SYMBOLS: &[&str] = &["ACME", "GLOBX", "INIT", "HOOLI", "UMBR", "WAYNE"];
const CURRENCIES: &[&str] = &["USD", "EUR", "JPY", "GBP", "CHF", "BRL"];
const LANGS: &[&str] = &["fr", "de", "es", "ja", "pt"];
const QUESTIONS: &[&str] = &[
    "find recent work on the topic and summarize it",
    "plan a trip and check the conditions",
    "prepare a short market brief",
    "collect the files needed for the report",
    "answer the customer's billing question",
    "draft a meeting agenda from the calendar",
];

fn pick<'a>(rng: &mut ChaCha8Rng, xs: &[&'a str]) -> &'a str {
    xs.choose(rng).expect("non-empty")
}

fn phrase(rng: &mut ChaCha8Rng, n: usize) -> String {
    (0..n).map(|_| pick(rng, WORDS)).collect::<Vec<_>>().join(" ")
}

fn sample_call(rng: &mut ChaCha8Rng, name: &str) -> ToolCall {
    let c = ToolCall::new(name);
    match name {
        "search" => c.arg("q", phrase(rng, 3)).arg("k", rng.random_range(3..=10i64)),
        "fetch_page" => c.arg("url", format!("https://example.org/{}/{}", pick(rng, WORDS), rng.random_range(1..500u32))),
        "get_weather" => c.arg("city", pick(rng, CITIES)).arg("units", if rng.random_bool(0.5) { "metric" } else { "imperial" }),
        "stock_quote" => c.arg("symbol", pick(rng, SYMBOLS)),
        "convert_currency" => c
            .arg("amount", f64::from(rng.random_range(1..2000u32)) / 4.0)
            .arg("from", pick(rng, CURRENCIES))
            .arg("to", pick(rng, CURRENCIES)),
        "lookup_user" => c.arg("user_id", rng.random_range(1000..9999i64)),
        "list_files" => c.arg("path", format!("/data/{}", pick(rng, WORDS))).arg("recursive", rng.random_bool(0.3)),
        "read_file" => c.arg("path", format!("/data/{}/{}.txt", pick(rng, WORDS), pick(rng, WORDS))),
        "calendar_events" => c.arg("date", format!("2025-{:02}-{:02}", rng.random_range(1..=12u32), rng.random_range(1..=28u32))),
        "translate" => c.arg("text", phrase(rng, 4)).arg("target", pick(rng, LANGS)),
        "send_email" => c.arg("to", format!("{}@example.org", pick(rng, WORDS))).arg("subject", phrase(rng, 2)),
        other => unreachable!("no generator for {other}"),
    }
}

fn tool_output(call: &ToolCall, tokens: u64) -> String {
    let head = format!("{} result: ", call.name);
    let body = filler_text(tokens);
    let n = tokens as usize * crate::domain::CHARS_PER_TOKEN;
    format!("{head}{body}").chars().take(n).collect()
}

fn reasoning_text(rng: &mut ChaCha8Rng, lo: u64, hi: u64) -> String {
    let tokens = rng.random_range(lo..=hi);
    let n = tokens as usize * crate::domain::CHARS_PER_TOKEN;
    let mut s = String::with_capacity(n + 16);
    while s.len() < n {
        s.push_str(pick(rng, WORDS));
        s.push(' ');
    }
    s.truncate(n);
    s
}
