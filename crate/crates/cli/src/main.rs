use std::fmt::Write as _;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use spectool_core::analytic::{sweep_client, sweep_csv, AnalyticError, Range, SweepGrid};
use spectool_core::metrics::{results_csv, spread, ResultRow};
use spectool_core::par::Execution;
use spectool_core::plot::{render_csv, PlotError};
use spectool_core::sim::WallClock;
use spectool_core::workload::{engine_totals_csv, run_engine_scenario, run_mode, run_sweep, ScenarioFile, WorkloadError};
use spectool_core::world::Mode;
use spectool_service::{AppState, DEFAULT_BODY_LIMIT};

#[derive(Parser)]
#[command(name = "spectool", version, about = "Speculative tool calling: closed forms, simulation, and the tool-cache service")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form client speedup over an (alpha, g/G, T) grid.
    ModelSweep(SweepArgs),
    /// Run the scenario's workload and/or engine scenario.
    Simulate(SimArgs),
    /// Serve the tool-cache endpoint.
    Serve(ServeArgs),
    /// Paired baseline/speculative runs with a time-saved table.
    Compare(CompareArgs),
    /// Render SVG charts from a sweep or results CSV.
    Plot(PlotArgs),
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, value_name = "START:STOP:STEP")]
    alpha: Range,
    #[arg(long = "g-ratio", value_name = "START:STOP:STEP")]
    g_ratio: Range,
    #[arg(long = "tool-time", value_name = "START:STOP:STEP")]
    tool_time: Range,
    #[arg(long = "G", default_value_t = 2.0)]
    big_g: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Subset of modes, comma separated.
    #[arg(long, value_delimiter = ',')]
    mode: Vec<Mode>,
    /// Run sweep points one after another.
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct SimArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long = "out-dir", default_value = ".")]
    out_dir: PathBuf,
    /// Also write event logs for repetition 0.
    #[arg(long)]
    trace: bool,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long = "body-limit", default_value_t = DEFAULT_BODY_LIMIT)]
    body_limit: usize,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long = "out-dir", default_value = ".")]
    out_dir: PathBuf,
}

/// Usage errors exit with 2, everything else with 1.
enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

fn workload_failure(e: WorkloadError) -> Failure {
    match e {
        WorkloadError::Config(_) | WorkloadError::Analytic(_) => usage(e),
        WorkloadError::Mock(ref m) if matches!(m, spectool_core::mock::MockError::Config(_) | spectool_core::mock::MockError::Fixture(_)) => usage(e),
        other => Failure::Runtime(other.into()),
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::ModelSweep(a) => model_sweep(a),
        Command::Simulate(a) => simulate(a),
        Command::Serve(a) => serve(a),
        Command::Compare(a) => compare(a),
        Command::Plot(a) => plot(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn write_out(path: &Path, text: &str) -> Outcome {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn model_sweep(a: SweepArgs) -> Outcome {
    let grid = SweepGrid { alpha: a.alpha, g_over_big_g: a.g_ratio, tool_time: a.tool_time, big_g: a.big_g };
    let rows = sweep_client(&grid).map_err(|e| match e {
        AnalyticError::EmptyGrid | AnalyticError::InvalidScenario(_) | AnalyticError::DraftNotFaster { .. } => usage(e),
    })?;
    let csv = sweep_csv(&rows);
    match a.out {
        Some(p) => write_out(&p, &csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn seed_override() -> Result<Option<u64>, Failure> {
    match std::env::var("SPECTOOL_SEED") {
        Ok(s) => s.trim().parse().map(Some).map_err(|e| usage(anyhow!("SPECTOOL_SEED `{s}`: {e}"))),
        Err(_) => Ok(None),
    }
}

fn load_scenario(run: &RunArgs) -> Result<ScenarioFile, Failure> {
    let text = fs::read_to_string(&run.scenario).map_err(|e| usage(anyhow!("reading {}: {e}", run.scenario.display())))?;
    let mut s = ScenarioFile::parse(&text).map_err(workload_failure)?;
    let seed = seed_override()?;
    if let Some(w) = s.workload.as_mut() {
        if !run.mode.is_empty() {
            w.modes = run.mode.clone();
        }
        if let Some(seed) = seed {
            w.seed = seed;
        }
    }
    if let (Some(e), Some(seed)) = (s.engine_scenario.as_mut(), seed) {
        e.seed = seed;
    }
    Ok(s)
}

fn execution(run: &RunArgs) -> Execution {
    if run.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

fn simulate(a: SimArgs) -> Outcome {
    let scenario = load_scenario(&a.run)?;
    let base = a.run.scenario.parent();
    if let Some(w) = &scenario.workload {
        let lib = w.library.load(base).map_err(workload_failure)?;
        let rows = run_sweep(w, &lib, execution(&a.run)).map_err(workload_failure)?;
        write_out(&a.out_dir.join("results.csv"), &results_csv(&rows))?;
        if a.trace {
            for &mode in &w.modes {
                let report = run_mode(w, &lib, mode, 0, true).map_err(workload_failure)?;
                if let Some(t) = report.trace {
                    write_out(&a.out_dir.join(format!("events_{mode}.log")), &t)?;
                }
                if let Some(l) = report.engine_log {
                    write_out(&a.out_dir.join(format!("engine_{mode}.log")), &l)?;
                }
                let outcomes: String = report.agents.iter().map(|ag| ag.outcomes_jsonl()).collect();
                write_out(&a.out_dir.join(format!("turns_{mode}.jsonl")), &outcomes)?;
            }
        }
        print!("{}", summary(&rows));
    }
    if let Some(e) = &scenario.engine_scenario {
        let run = run_engine_scenario(e, a.trace).map_err(workload_failure)?;
        let csv = engine_totals_csv(&run.totals);
        write_out(&a.out_dir.join("engine_totals.csv"), &csv)?;
        for (name, text) in &run.logs {
            write_out(&a.out_dir.join(name), text)?;
        }
        print!("{csv}");
    }
    Ok(())
}

fn compare(a: CompareArgs) -> Outcome {
    let scenario = load_scenario(&a.run)?;
    let Some(w) = &scenario.workload else {
        return Err(usage(anyhow!("compare needs a `workload` section")));
    };
    let mut w = w.clone();
    if !w.modes.contains(&Mode::Baseline) {
        w.modes.insert(0, Mode::Baseline);
    }
    let lib = w.library.load(a.run.scenario.parent()).map_err(workload_failure)?;
    let rows = run_sweep(&w, &lib, execution(&a.run)).map_err(workload_failure)?;
    print!("{}", summary(&rows));
    Ok(())
}

/// One line per (mode, alpha, lambda, tool_mean), averaged over repetitions.
fn summary(rows: &[ResultRow]) -> String {
    let mut groups: Vec<(String, Vec<&ResultRow>)> = Vec::new();
    for r in rows {
        let key = format!("{:<12} alpha={:<5} lambda={:<3} tool_mean={:<6}", r.mode, r.alpha, r.lambda, r.tool_mean);
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(r),
            None => groups.push((key, vec![r])),
        }
    }
    let mut out = String::new();
    for (k, v) in groups {
        let saved: Vec<f64> = v.iter().map(|r| r.time_saved_pct).collect();
        let (lo, m, hi) = spread(&saved);
        let hit = v.iter().map(|r| r.hit_rate).sum::<f64>() / v.len() as f64;
        let tput = v.iter().map(|r| r.throughput).sum::<f64>() / v.len() as f64;
        let _ = writeln!(out, "{k} time_saved={m:>7.3}% [{lo:.3}, {hi:.3}] hit_rate={hit:.3} throughput={tput:.2}");
    }
    out
}

fn serve(a: ServeArgs) -> Outcome {
    let addr: SocketAddr = format!("{}:{}", a.host, a.port).parse().map_err(|e| usage(anyhow!("address: {e}")))?;
    let rt = tokio::runtime::Runtime::new().context("starting runtime")?;
    let state = AppState::new(Arc::new(WallClock::new()));
    rt.block_on(async move {
        eprintln!("listening on http://{addr}");
        spectool_service::serve(addr, state, a.body_limit).await
    })
    .with_context(|| format!("serving on {addr}"))?;
    Ok(())
}

fn plot(a: PlotArgs) -> Outcome {
    let text = fs::read_to_string(&a.input).map_err(|e| usage(anyhow!("reading {}: {e}", a.input.display())))?;
    let figs = render_csv(&text).map_err(|e| match e {
        PlotError::UnknownHeader(_) | PlotError::Parse { .. } | PlotError::Empty => usage(e),
    })?;
    for (name, svg) in figs {
        let path = a.out_dir.join(&name);
        write_out(&path, &svg)?;
        println!("{}", path.display());
    }
    Ok(())
}
