//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

use std::io::{Read, Write};
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use spectool_core::analytic::{self, speedup_bound, speedup_client, t_spec_client, ClientScenario, TurnProfile};
use spectool_core::client::{speculative_loop, AgentConfig};
use spectool_core::library::Library;
use spectool_core::metrics::mean;
use spectool_core::mock::{filler_text, mix_seed, FinalTurn, Fixtures, LatencyDist, MainTiming, MissBehavior, ScriptTurn, SpecModelConfig, Stream, TaskScript, ToolRuntime};
use spectool_core::par::Execution;
use spectool_core::sim::ManualClock;
use spectool_core::workload::{run_engine_scenario, run_mode, run_sweep, EngineScenarioSpec, EngineSettings, LibrarySource, WorkloadConfig};
use spectool_core::world::Mode;
use spectool_core::{canonical_key, ToolCall};
use spectool_service::{serve_on, AppState, DEFAULT_BODY_LIMIT};

// pinned tolerances
const C1_REL: f64 = 1e-12;
const C1_BUDGET: Duration = Duration::from_secs(5);
const C2_ABS: f64 = 1e-9;
const C2_BUDGET: Duration = Duration::from_secs(30);
const C3_ABS: f64 = 1e-9;
const C4_ABS: f64 = 0.02;
const C8_VANISH: f64 = 0.05;

type Verdict = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn unit(i: u64, j: u64) -> f64 {
    // uniform in (0, 1]
    ((mix_seed(Stream::Library, &[0xACCE, i, j]) >> 11) as f64 + 1.0) / (1u64 << 53) as f64
}

fn criterion_1() -> Verdict {
    let start = Instant::now();
    let n = 10_000u64;
    let alphas: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    for i in 0..n {
        let big_g = 10.0 * unit(i, 0);
        let g = big_g * unit(i, 1) * 0.999_999;
        let t = 10.0 * unit(i, 2);
        let at = |alpha: f64| speedup_client(&ClientScenario::new(big_g, g, t, alpha, 1)).map_err(|e| e.to_string());
        let sp: Vec<f64> = alphas.iter().map(|&a| at(a)).collect::<Result<_, _>>()?;
        let s = ClientScenario::new(big_g, g, t, 1.0, 1);
        let (s_max, cap) = speedup_bound(&s).map_err(|e| e.to_string())?;
        let closed = (big_g + t) / big_g.max(g + t);
        check((sp[0] - 1.0).abs() <= C1_REL, format!("case {i}: speedup at alpha=0 is {}", sp[0]))?;
        check(((sp[10] - closed) / closed).abs() <= C1_REL, format!("case {i}: speedup at alpha=1 is {} vs {closed}", sp[10]))?;
        check(((s_max - closed) / closed).abs() <= C1_REL, format!("case {i}: bound {s_max} vs {closed}"))?;
        check(sp.windows(2).all(|w| w[1] > w[0]), format!("case {i}: not strictly increasing in alpha: {sp:?}"))?;
        check(sp.iter().all(|&v| v <= cap * (1.0 + C1_REL)), format!("case {i}: exceeds cap {cap}"))?;
    }
    let took = start.elapsed();
    check(took < C1_BUDGET, format!("took {took:?}"))?;
    Ok(format!("{n} scenarios x 11 alphas in {:.2?}", took))
}

fn scripted_task(k: usize, tool_time: f64) -> (Arc<TaskScript>, Fixtures) {
    let mut fx = Fixtures::default();
    let turns = (0..k)
        .map(|i| {
            let call = ToolCall::new(format!("tool_{i}")).arg("q", format!("v{i}"));
            fx.insert(&call, filler_text(6)).expect("valid call");
            ScriptTurn { reasoning: filler_text(3), call, tool_time: Some(tool_time) }
        })
        .collect();
    let task = TaskScript { id: "grid".into(), prompt: filler_text(10), turns, final_turn: FinalTurn { reasoning: String::new(), answer: "ok".into() } };
    (Arc::new(task), fx)
}

fn criterion_2() -> Verdict {
    let start = Instant::now();
    let forced = vec![true, false, true, true, false];
    let n = 10usize;
    let realized_alpha = (0..n).filter(|&i| forced[i % forced.len()]).count() as f64 / n as f64;
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for big_g in [1.0, 1.5, 2.0, 2.5, 3.0] {
        for ratio in [0.05, 0.2, 0.4, 0.6, 0.8] {
            for t in [0.1, 0.5, 1.0, 2.0, 4.0] {
                let g = ratio * big_g;
                let (task, fx) = scripted_task(n, t);
                let cfg = AgentConfig {
                    agent: 0,
                    tasks: vec![task],
                    timing: MainTiming::Fixed { latency: big_g },
                    overhead_o: 0.0,
                    runtime: ToolRuntime::new(LatencyDist::fixed(0.0), fx),
                    toolset: None,
                    seed: 1,
                };
                let spec = SpecModelConfig { latency_g: g, alpha: 0.5, lambda: 1, miss: MissBehavior::Perturb, forced: Some(forced.clone()) };
                let rep = speculative_loop(&cfg, &spec).map_err(|e| e.to_string())?;
                // per turn: hit turns cost max(G, g+T), misses G+T
                for o in rep.outcomes.iter().filter(|o| !o.is_final) {
                    let want = if forced[o.turn_index % forced.len()] { big_g.max(g + t) } else { big_g + t };
                    let got = o.turn_done_at - o.turn_start;
                    worst = worst.max((got - want).abs());
                    check((got - want).abs() <= C2_ABS, format!("G={big_g} g={g} T={t} turn {}: {got} vs {want}", o.turn_index))?;
                }
                let oracle = t_spec_client(&ClientScenario::new(big_g, g, t, realized_alpha, n as u32)).map_err(|e| e.to_string())?;
                let tool_phase = rep.tasks[0].tool_phase();
                worst = worst.max((tool_phase - oracle).abs());
                check((tool_phase - oracle).abs() <= C2_ABS, format!("G={big_g} g={g} T={t}: total {tool_phase} vs {oracle}"))?;
                cases += 1;
            }
        }
    }
    let took = start.elapsed();
    check(took < C2_BUDGET, format!("took {took:?}"))?;
    Ok(format!("{cases} grid points, max abs error {worst:.1e}, {took:.2?}"))
}

fn two_turn(alpha: f64) -> EngineScenarioSpec {
    let tp = TurnProfile { r: 100, t: 20, t_o: 200, t_tool: 1.0 };
    EngineScenarioSpec { o: 0.05, phi: 0.001, delta: 0.02, x1: 1000, turns: vec![tp, tp], alpha, g: 0.2, lambda: 1, seed: 0 }
}

fn criterion_3() -> Verdict {
    let total = |alpha: f64, cfg: &str| -> Result<f64, String> {
        let run = run_engine_scenario(&two_turn(alpha), false).map_err(|e| e.to_string())?;
        Ok(run.totals.iter().find(|t| t.config == cfg).ok_or("missing config")?.total)
    };
    let vanilla = total(1.0, "vanilla")?;
    let cached = total(1.0, "prefix_cached")?;
    let hit = total(1.0, "tool_cache")?;
    let miss = total(0.0, "tool_cache")?;
    for (name, got, want) in [("baseline", vanilla, 9.22), ("prefix-cached", cached, 8.44), ("tool-cache alpha=1", hit, 5.48), ("tool-cache alpha=0", miss, 8.44)] {
        check((got - want).abs() <= C3_ABS, format!("{name}: {got} vs {want}"))?;
    }
    let s = two_turn(1.0).scenario();
    let k = s.k() as f64;
    let sum_t: f64 = s.turns.iter().map(|t| t.t as f64).sum();
    let sum_tool: f64 = s.turns.iter().map(|t| t.t_tool).sum();
    let decomposed = 2.0 * k * s.o + s.delta * (sum_t - k) + sum_tool;
    let closed = analytic::t_cached(&s).map_err(|e| e.to_string())? - analytic::t_spec_engine(&s).map_err(|e| e.to_string())?;
    check((cached - hit - decomposed).abs() <= C3_ABS, format!("saving {} vs {decomposed}", cached - hit))?;
    check((closed - decomposed).abs() <= C3_ABS, format!("closed-form saving {closed} vs {decomposed}"))?;
    Ok(format!("9.22 / 8.44 / 5.48 / 8.44, saving {:.2} = {:.2} + {:.2} + {:.2}", cached - hit, 2.0 * k * s.o, s.delta * (sum_t - k), sum_tool))
}

fn base_workload() -> WorkloadConfig {
    WorkloadConfig {
        agents: 8,
        tasks_per_agent: 16,
        tool_latency: LatencyDist { mean: 1.0, stddev: 0.3 },
        spec: SpecModelConfig::new(0.4, 0.8, 3),
        modes: vec![Mode::Baseline, Mode::ClientSpec],
        seed: 7,
        repetitions: 3,
        main: MainTiming::Fixed { latency: 2.0 },
        overhead_o: 0.05,
        engine: EngineSettings::default(),
        prices: None,
        library: LibrarySource::Builtin,
        speculate_all_tools: false,
        sweep: None,
    }
}

fn criterion_4(lib: &Library) -> Verdict {
    let mut cfg = base_workload();
    cfg.agents = 32;
    cfg.tasks_per_agent = 200;
    cfg.tool_latency = LatencyDist::fixed(0.1);
    cfg.speculate_all_tools = true;
    let mut worst: f64 = 0.0;
    let mut min_turns = usize::MAX;
    for alpha in [0.3, 0.5, 0.8] {
        for lambda in [1u32, 3, 9] {
            cfg.spec.alpha = alpha;
            cfg.spec.lambda = lambda;
            let run = run_mode(&cfg, lib, Mode::ClientSpec, 0, false).map_err(|e| e.to_string())?;
            let eligible: Vec<bool> = run.agents.iter().flat_map(|a| &a.outcomes).filter(|o| o.eligible).map(|o| o.hit).collect();
            let got = eligible.iter().filter(|&&h| h).count() as f64 / eligible.len() as f64;
            let want = 1.0 - (1.0 - alpha).powi(lambda as i32);
            min_turns = min_turns.min(eligible.len());
            worst = worst.max((got - want).abs());
            check(eligible.len() >= 1000, format!("only {} turns", eligible.len()))?;
            check((got - want).abs() <= C4_ABS, format!("alpha={alpha} lambda={lambda}: {got:.4} vs {want:.4}"))?;
        }
    }
    Ok(format!("9 settings, >= {min_turns} turns each, max abs deviation {worst:.4}"))
}

fn criterion_5(lib: &Library) -> Verdict {
    let mut cfg = base_workload();
    let means = [0.5, 1.0, 1.5, 2.0, 2.5, 3.0];
    cfg.sweep = Some(spectool_core::workload::SweepAxes { alpha: vec![], lambda: vec![], tool_mean: means.to_vec() });
    let rows = run_sweep(&cfg, lib, Execution::Parallel).map_err(|e| e.to_string())?;
    let saved: Vec<f64> = means
        .iter()
        .map(|&m| mean(&rows.iter().filter(|r| r.mode == "client_spec" && r.tool_mean == m).map(|r| r.time_saved_pct).collect::<Vec<_>>()))
        .collect();
    let peak = (0..saved.len()).max_by(|&a, &b| saved[a].total_cmp(&saved[b])).expect("non-empty");
    let shown: Vec<String> = means.iter().zip(&saved).map(|(m, s)| format!("{m}:{s:.2}")).collect();
    let detail = shown.join(" ");
    check((1.5..=2.5).contains(&means[peak]), format!("peak at {} ({detail})", means[peak]))?;
    check(saved[0] < saved[peak] && saved[saved.len() - 1] < saved[peak], format!("endpoints not lower ({detail})"))?;
    check(saved[peak..].windows(2).all(|w| w[1] < w[0]), format!("not decreasing after the peak ({detail})"))?;
    Ok(format!("peak at {} s; {detail}", means[peak]))
}

fn criterion_6(lib: &Library) -> Verdict {
    let mut cfg = base_workload();
    cfg.agents = 2;
    cfg.tasks_per_agent = 3;
    cfg.repetitions = 1;
    cfg.main = MainTiming::PerToken { phi: 0.0005, delta: 0.02 };
    cfg.spec = SpecModelConfig::new(0.2, 0.6, 2);
    let mut compared = 0;
    for seed in 0..100u64 {
        cfg.seed = seed;
        let base = run_mode(&cfg, lib, Mode::Baseline, 0, false).map_err(|e| e.to_string())?;
        for mode in [Mode::ClientSpec, Mode::EngineSpec] {
            let run = run_mode(&cfg, lib, mode, 0, false).map_err(|e| e.to_string())?;
            for (a, b) in base.agents.iter().zip(&run.agents) {
                check(a.transcript_json() == b.transcript_json(), format!("seed {seed} {mode} agent {}", a.agent))?;
                compared += 1;
            }
        }
    }
    Ok(format!("{compared} agent transcripts identical across 100 seeds"))
}

fn http(port: u16, request: &str) -> Result<(u16, String), String> {
    let mut s = std::net::TcpStream::connect(("127.0.0.1", port)).map_err(|e| e.to_string())?;
    s.set_read_timeout(Some(Duration::from_secs(5))).map_err(|e| e.to_string())?;
    s.write_all(request.as_bytes()).map_err(|e| e.to_string())?;
    let mut buf = String::new();
    s.read_to_string(&mut buf).map_err(|e| e.to_string())?;
    let status = buf.split_whitespace().nth(1).and_then(|c| c.parse().ok()).ok_or("bad status line")?;
    let body = buf.split_once("\r\n\r\n").map(|(_, b)| b.to_string()).unwrap_or_default();
    Ok((status, body))
}

fn post(port: u16, rid: &str, body: &str) -> Result<(u16, String), String> {
    http(
        port,
        &format!("POST /cache-tool-output/{rid} HTTP/1.1\r\nHost: localhost\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}", body.len()),
    )
}

fn criterion_7() -> Verdict {
    let clock = ManualClock::new();
    let state = AppState::new(Arc::new(clock.clone()));
    let store = state.store.clone();
    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).map_err(|e| e.to_string())?;
    let port = listener.local_addr().map_err(|e| e.to_string())?.port();
    rt.spawn(serve_on(listener, state, DEFAULT_BODY_LIMIT));

    let body = r#"[{"name":"search","params":{"q":"rust"},"output":"results","keep_alive":0.1}]"#;
    let first = post(port, "resp-1", body)?;
    check(first == (200, r#"{"cached": 1}"#.to_string()), format!("single entry: {first:?}"))?;
    let key = canonical_key(&ToolCall::new("search").arg("q", "rust")).map_err(|e| e.to_string())?;
    let lookup = |t: f64| store.lock().expect("lock").lookup_key("resp-1", &key, t).map(|e| e.output.clone());
    check(lookup(0.05).as_deref() == Some("results"), "entry not visible within keep_alive")?;
    check(lookup(0.2).is_none(), "entry still visible after keep_alive")?;
    let before = store.lock().expect("lock").len();
    let second = post(port, "resp-1", body)?;
    check(second == first, format!("resubmission: {second:?}"))?;
    check(store.lock().expect("lock").len() == before, "resubmission changed the store size")?;
    clock.advance(0.0);
    let (code, _) = http(port, "GET /healthz HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n")?;
    check(code == 200, format!("healthz {code}"))?;
    let (bad, _) = post(port, "resp-1", "{oops")?;
    check(bad == 400, format!("malformed body gave {bad}"))?;
    Ok("200 {\"cached\": 1}, expiry at 0.1 s, idempotent resubmission, 400 on malformed".into())
}

fn criterion_8(lib: &Library) -> Verdict {
    let mut cfg = base_workload();
    cfg.main = MainTiming::PerToken { phi: 0.0005, delta: 0.02 };
    cfg.spec = SpecModelConfig::new(0.2, 0.8, 1);
    cfg.modes = vec![Mode::ClientSpec, Mode::EngineSpec];
    cfg.tool_latency = LatencyDist { mean: 0.3, stddev: 0.05 };
    let short = [0.1, 0.2, 0.3, 0.4, 0.5];
    let long = 10.0;
    let mut axes = short.to_vec();
    axes.push(long);
    cfg.sweep = Some(spectool_core::workload::SweepAxes { alpha: vec![], lambda: vec![], tool_mean: axes.clone() });
    let rows = run_sweep(&cfg, lib, Execution::Parallel).map_err(|e| e.to_string())?;
    let avg = |mode: &str, m: f64| mean(&rows.iter().filter(|r| r.mode == mode && r.tool_mean == m).map(|r| r.time_saved_pct).collect::<Vec<_>>());
    let margins: Vec<(f64, f64)> = axes.iter().map(|&m| (m, avg("engine_spec", m) - avg("client_spec", m))).collect();
    let detail: Vec<String> = margins.iter().map(|(m, d)| format!("{m}:{d:+.2}")).collect();
    let detail = detail.join(" ");
    check(margins[..short.len()].iter().all(|&(_, d)| d > 0.0), format!("non-positive margin ({detail})"))?;
    let (_, tail) = margins[short.len()];
    check(tail.abs() <= C8_VANISH, format!("margin at {long} s is {tail:.4} ({detail})"))?;
    Ok(format!("margin pts {detail}"))
}

fn run_cli(args: &[&str], dir: &Path) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_spectool")).args(args).current_dir(dir).env_remove("SPECTOOL_SEED").output().map_err(|e| e.to_string())?;
    check(out.status.success(), format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
}

fn snapshot(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut files: Vec<(String, Vec<u8>)> = Vec::new();
    for e in std::fs::read_dir(dir).map_err(|e| e.to_string())? {
        let p = e.map_err(|e| e.to_string())?.path();
        if p.is_file() && p.extension().is_some_and(|x| x != "json") {
            files.push((p.file_name().unwrap_or_default().to_string_lossy().into_owned(), std::fs::read(&p).map_err(|e| e.to_string())?));
        }
    }
    files.sort();
    Ok(files)
}

fn criterion_9() -> Verdict {
    let scenario = serde_json::json!({
        "workload": {
            "agents": 3, "tasks_per_agent": 4,
            "tool_latency": {"mean": 1.0, "stddev": 0.3},
            "spec": {"latency_g": 0.3, "alpha": 0.7, "lambda": 2},
            "main": {"kind": "per_token", "phi": 0.0005, "delta": 0.02},
            "overhead_o": 0.05, "seed": 3, "repetitions": 2,
            "sweep": {"tool_mean": [0.5, 1.5]}
        },
        "engine_scenario": serde_json::to_value(two_turn(1.0)).map_err(|e| e.to_string())?
    });
    let mut snaps = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let d = dir.path();
        std::fs::write(d.join("s.json"), scenario.to_string()).map_err(|e| e.to_string())?;
        run_cli(&["model-sweep", "--alpha", "0:1:0.25", "--g-ratio", "0.2:0.6:0.2", "--tool-time", "1:2:0.5", "--out", "sweep.csv"], d)?;
        run_cli(&["simulate", "--scenario", "s.json", "--out-dir", ".", "--trace"], d)?;
        run_cli(&["plot", "--input", "sweep.csv", "--out-dir", "."], d)?;
        run_cli(&["plot", "--input", "results.csv", "--out-dir", "."], d)?;
        snaps.push(snapshot(d)?);
    }
    check(snaps[0].len() >= 10, format!("only {} outputs", snaps[0].len()))?;
    let names: Vec<&str> = snaps[0].iter().map(|(n, _)| n.as_str()).collect();
    check(snaps[0] == snaps[1], format!("outputs differ between runs among {names:?}"))?;
    Ok(format!("{} files byte-identical across two runs", names.len()))
}

type Criterion<'a> = (u32, &'static str, Box<dyn Fn() -> Verdict + 'a>);

fn main() {
    // `cargo test` passes libtest flags; a name filter selects criteria by number
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let lib = Library::builtin();
    let criteria: Vec<Criterion<'_>> = vec![
        (1, "closed-form speedup properties", Box::new(criterion_1)),
        (2, "client simulation matches closed form", Box::new(criterion_2)),
        (3, "engine simulation matches closed forms", Box::new(criterion_3)),
        (4, "hit-rate law", Box::new(|| criterion_4(&lib))),
        (5, "time-saved peak location", Box::new(|| criterion_5(&lib))),
        (6, "transcript equivalence", Box::new(|| criterion_6(&lib))),
        (7, "wire conformance", Box::new(criterion_7)),
        (8, "engine-over-client margin", Box::new(|| criterion_8(&lib))),
        (9, "determinism", Box::new(criterion_9)),
    ];
    let mut failed = 0;
    for (n, name, f) in &criteria {
        if !filter.is_empty() && !filter.iter().any(|x| x == &n.to_string()) {
            continue;
        }
        let start = Instant::now();
        match f() {
            Ok(detail) => println!("criterion {n}: PASS {name} ({detail}) [{:.2?}]", start.elapsed()),
            Err(why) => {
                failed += 1;
                println!("criterion {n}: FAIL {name} ({why}) [{:.2?}]", start.elapsed());
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
