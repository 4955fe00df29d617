//! Closed-form latency model for client-side and engine-side speculation.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalyticError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("bound requires g < G (got g={g}, G={big_g})")]
    DraftNotFaster { g: f64, big_g: f64 },
    #[error("sweep grid is empty")]
    EmptyGrid,
}

type Result<T> = std::result::Result<T, AnalyticError>;

fn invalid(msg: impl Into<String>) -> AnalyticError {
    AnalyticError::InvalidScenario(msg.into())
}

/// Parameters of the client-side model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClientScenario {
    #[serde(rename = "G")]
    pub big_g: f64,
    pub g: f64,
    #[serde(rename = "T")]
    pub t: f64,
    pub alpha: f64,
    #[serde(rename = "N")]
    pub n: u32,
}

impl ClientScenario {
    pub fn new(big_g: f64, g: f64, t: f64, alpha: f64, n: u32) -> Self {
        Self { big_g, g, t, alpha, n }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64, name: &str| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(invalid(format!("{name} must be finite and > 0, got {v}")))
            }
        };
        pos(self.big_g, "G")?;
        pos(self.g, "g")?;
        pos(self.t, "T")?;
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(invalid(format!("alpha must lie in [0,1], got {}", self.alpha)));
        }
        if self.n < 1 {
            return Err(invalid("N must be >= 1"));
        }
        Ok(())
    }

    /// Turn time when speculation hits: generation and the early tool overlap.
    pub fn hit_turn(&self) -> f64 {
        self.big_g.max(self.g + self.t)
    }

    pub fn miss_turn(&self) -> f64 {
        self.big_g + self.t
    }
}

pub fn t_standard(s: &ClientScenario) -> Result<f64> {
    s.validate()?;
    Ok(f64::from(s.n) * s.miss_turn())
}

pub fn t_spec_client(s: &ClientScenario) -> Result<f64> {
    s.validate()?;
    let n = f64::from(s.n);
    Ok(s.alpha * n * s.hit_turn() + (1.0 - s.alpha) * n * s.miss_turn())
}

pub fn speedup_client(s: &ClientScenario) -> Result<f64> {
    Ok(t_standard(s)? / t_spec_client(s)?)
}

/// Returns `(s_max, cap)`: the speedup at full acceptance and the upper
/// bound that depends only on the three latencies.
pub fn speedup_bound(s: &ClientScenario) -> Result<(f64, f64)> {
    s.validate()?;
    if s.g >= s.big_g {
        return Err(AnalyticError::DraftNotFaster { g: s.g, big_g: s.big_g });
    }
    let s_max = s.miss_turn() / s.hit_turn();
    let cap = 2.0 - 2.0 * s.g / (s.big_g + s.g + s.t);
    Ok((s_max, cap))
}

/// One agent turn as seen by the engine.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TurnProfile {
    #[serde(rename = "R")]
    pub r: u64,
    pub t: u64,
    pub t_o: u64,
    #[serde(rename = "T_tool")]
    pub t_tool: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineScenario {
    pub o: f64,
    pub phi: f64,
    pub delta: f64,
    #[serde(rename = "X1")]
    pub x1: u64,
    pub turns: Vec<TurnProfile>,
    #[serde(default)]
    pub alpha: f64,
}

impl EngineScenario {
    pub fn k(&self) -> usize {
        self.turns.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.turns.is_empty() {
            return Err(invalid("K must be >= 1"));
        }
        if !(self.o.is_finite() && self.o >= 0.0) {
            return Err(invalid(format!("o must be >= 0, got {}", self.o)));
        }
        if !(self.phi.is_finite() && self.phi >= 0.0 && self.delta.is_finite() && self.delta >= 0.0) {
            return Err(invalid("phi and delta must be finite and >= 0"));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(invalid(format!("alpha must lie in [0,1], got {}", self.alpha)));
        }
        for (i, tp) in self.turns.iter().enumerate() {
            if tp.t < 1 {
                return Err(invalid(format!("turn {i}: t must be >= 1")));
            }
            if !(tp.t_tool.is_finite() && tp.t_tool >= 0.0) {
                return Err(invalid(format!("turn {i}: T_tool must be >= 0")));
            }
        }
        Ok(())
    }

    /// Prompt length at each turn: `X_1`, then each turn adds its call and output.
    pub fn prompt_lengths(&self) -> Vec<u64> {
        let mut x = self.x1;
        self.turns
            .iter()
            .map(|tp| {
                let cur = x;
                x += tp.t + tp.t_o;
                cur
            })
            .collect()
    }

    fn sums(&self) -> Sums {
        let mut s = Sums::default();
        for tp in &self.turns {
            s.r += tp.r as f64;
            s.t += tp.t as f64;
            s.t_o += tp.t_o as f64;
            s.tool += tp.t_tool;
        }
        s
    }

    fn hops(&self) -> f64 {
        2.0 * self.k() as f64 * self.o
    }
}

#[derive(Default)]
struct Sums {
    r: f64,
    t: f64,
    t_o: f64,
    tool: f64,
}

/// No prefix reuse: every turn re-prefills its whole prompt.
pub fn t_vanilla(s: &EngineScenario) -> Result<f64> {
    s.validate()?;
    let sum = s.sums();
    let prefill: f64 = s.prompt_lengths().iter().map(|&x| x as f64).sum();
    Ok(s.hops() + s.phi * prefill + s.delta * (sum.r + sum.t) + sum.tool)
}

/// Prefix reuse: only new tokens are prefilled.
pub fn t_cached(s: &EngineScenario) -> Result<f64> {
    s.validate()?;
    let sum = s.sums();
    Ok(s.hops() + s.phi * (s.x1 as f64 + sum.t + sum.t_o) + s.delta * (sum.r + sum.t) + sum.tool)
}

/// Expected time with the engine tool cache at acceptance rate `alpha`.
pub fn t_spec_engine(s: &EngineScenario) -> Result<f64> {
    s.validate()?;
    let sum = s.sums();
    let a = s.alpha;
    let k = s.k() as f64;
    Ok((1.0 - a) * s.hops()
        + s.phi * (s.x1 as f64 + sum.t + sum.t_o)
        + s.delta * (a * k + sum.r + (1.0 - a) * sum.t)
        + (1.0 - a) * sum.tool)
}

/// Realized per-turn outcome of draft validation and ingestion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnRealization {
    /// Tool output was ingested without leaving the engine.
    pub hit: bool,
    /// Draft tokens accepted by validation (0 when no draft was found).
    pub accepted: u64,
}

impl TurnRealization {
    pub const MISS: Self = Self { hit: false, accepted: 0 };

    pub fn full_hit(t: u64) -> Self {
        Self { hit: true, accepted: t }
    }
}

/// Engine time for a realized hit/miss vector with prefix reuse.
///
/// A tool span of `t` tokens with `a` accepted draft tokens costs
/// `delta * max(1, t - a)` when a draft was validated and `delta * t` otherwise.
/// Hit turns add no hop overhead and no tool wait.
pub fn t_engine_realized(s: &EngineScenario, turns: &[TurnRealization]) -> Result<f64> {
    s.validate()?;
    if turns.len() != s.k() {
        return Err(invalid(format!("expected {} realizations, got {}", s.k(), turns.len())));
    }
    let sum = s.sums();
    let mut total = s.phi * (s.x1 as f64 + sum.t + sum.t_o) + s.delta * sum.r;
    for (tp, re) in s.turns.iter().zip(turns) {
        let accepted = re.accepted.min(tp.t);
        let span = if accepted > 0 || re.hit { (tp.t - accepted).max(1) } else { tp.t };
        total += s.delta * span as f64;
        if !re.hit {
            total += 2.0 * s.o + tp.t_tool;
        }
    }
    Ok(total)
}

/// An inclusive arithmetic range `start:stop:step`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Range {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl Range {
    pub fn single(v: f64) -> Self {
        Self { start: v, stop: v, step: 1.0 }
    }

    /// Grid points, robust to accumulated rounding at the upper end.
    pub fn values(&self) -> Vec<f64> {
        if !(self.start.is_finite() && self.stop.is_finite() && self.step.is_finite()) || self.step <= 0.0 {
            return Vec::new();
        }
        if self.stop < self.start {
            return Vec::new();
        }
        let n = ((self.stop - self.start) / self.step + 1e-9).floor() as usize;
        (0..=n).map(|i| self.start + i as f64 * self.step).collect()
    }
}

impl std::str::FromStr for Range {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |p: &str| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}"));
        match parts.as_slice() {
            [v] => Ok(Range::single(num(v)?)),
            [a, b, c] => {
                let r = Range { start: num(a)?, stop: num(b)?, step: num(c)? };
                if r.step <= 0.0 {
                    return Err(format!("step must be > 0 in `{s}`"));
                }
                Ok(r)
            }
            _ => Err(format!("expected start:stop:step, got `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub alpha: Range,
    pub g_over_big_g: Range,
    pub tool_time: Range,
    pub big_g: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub g_over_big_g: f64,
    pub t: f64,
    pub speedup: f64,
}

/// Evaluates the client speedup over the Cartesian grid, ordered by T, then
/// g/G, then alpha.
pub fn sweep_client(grid: &SweepGrid) -> Result<Vec<SweepRow>> {
    let alphas = grid.alpha.values();
    let ratios = grid.g_over_big_g.values();
    let tools = grid.tool_time.values();
    if alphas.is_empty() || ratios.is_empty() || tools.is_empty() {
        return Err(AnalyticError::EmptyGrid);
    }
    let mut rows = Vec::with_capacity(alphas.len() * ratios.len() * tools.len());
    for &t in &tools {
        for &ratio in &ratios {
            for &alpha in &alphas {
                let s = ClientScenario::new(grid.big_g, ratio * grid.big_g, t, alpha, 1);
                rows.push(SweepRow {
                    alpha,
                    g_over_big_g: ratio,
                    t,
                    speedup: speedup_client(&s)?,
                });
            }
        }
    }
    Ok(rows)
}

pub const SWEEP_HEADER: &str = "alpha,g_over_G,T,speedup";

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{},{},{},{:.9}", fmt_num(r.alpha), fmt_num(r.g_over_big_g), fmt_num(r.t), r.speedup);
    }
    out
}

/// Short decimal form for grid coordinates, cleaning float noise like `0.30000000000000004`.
pub fn fmt_num(v: f64) -> String {
    let rounded = (v * 1e9).round() / 1e9;
    if rounded == 0.0 {
        "0".into()
    } else {
        format!("{rounded}")
    }
}
