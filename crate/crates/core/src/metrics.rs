//! Throughput, time saved, and speculative spend.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::client::Usage;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("baseline time must be > 0, got {0}")]
    InvalidBaseline(f64),
    #[error("elapsed time must be > 0, got {0}")]
    InvalidWindow(f64),
    #[error("config error: {0}")]
    Config(String),
}

pub fn time_saved(t_base: f64, t_spec: f64) -> Result<f64, MetricsError> {
    if t_base.is_nan() || t_base <= 0.0 {
        return Err(MetricsError::InvalidBaseline(t_base));
    }
    Ok(100.0 * (t_base - t_spec) / t_base)
}

pub fn throughput(tokens: u64, elapsed: f64) -> Result<f64, MetricsError> {
    if elapsed.is_nan() || elapsed <= 0.0 {
        return Err(MetricsError::InvalidWindow(elapsed));
    }
    Ok(tokens as f64 / elapsed)
}

/// Prices in currency per million tokens.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PriceSheet {
    pub main_input: Option<f64>,
    pub main_output: Option<f64>,
    pub spec_input: Option<f64>,
    pub spec_output: Option<f64>,
    /// Fraction of speculative input billed at zero, e.g. a provider prefix discount.
    #[serde(default)]
    pub spec_input_discount: f64,
}

impl PriceSheet {
    fn price(v: Option<f64>, name: &str) -> Result<f64, MetricsError> {
        match v {
            Some(p) if p.is_finite() && p >= 0.0 => Ok(p),
            Some(p) => Err(MetricsError::Config(format!("price `{name}` must be >= 0, got {p}"))),
            None => Err(MetricsError::Config(format!("missing price `{name}`"))),
        }
    }

    pub fn spec_spend(&self, u: &Usage) -> Result<f64, MetricsError> {
        if u.spec_calls == 0 {
            return Ok(0.0);
        }
        if !(0.0..=1.0).contains(&self.spec_input_discount) {
            return Err(MetricsError::Config("spec_input_discount must lie in [0,1]".into()));
        }
        let pi = Self::price(self.spec_input, "spec_input")?;
        let po = Self::price(self.spec_output, "spec_output")?;
        Ok((u.spec_input as f64 * (1.0 - self.spec_input_discount) * pi + u.spec_output as f64 * po) / 1e6)
    }

    pub fn main_spend(&self, u: &Usage) -> Result<f64, MetricsError> {
        let pi = Self::price(self.main_input, "main_input")?;
        let po = Self::price(self.main_output, "main_output")?;
        Ok((u.main_input as f64 * pi + u.main_output as f64 * po) / 1e6)
    }
}

/// Speculative spend per 100 agent turns.
pub fn extra_cost(u: &Usage, prices: &PriceSheet) -> Result<f64, MetricsError> {
    if u.turns == 0 {
        return Ok(0.0);
    }
    Ok(prices.spec_spend(u)? * 100.0 / u.turns as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetrics {
    pub throughput_per_agent: Vec<f64>,
    pub throughput: f64,
    pub time_saved_pct: Option<f64>,
    pub hit_rate: f64,
    pub extra_cost: Option<f64>,
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

pub const RESULTS_HEADER: &str = "mode,agents,alpha,lambda,tool_mean,rep,throughput,time_saved_pct,hit_rate,extra_cost";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub mode: String,
    pub agents: usize,
    pub alpha: f64,
    pub lambda: u32,
    pub tool_mean: f64,
    pub rep: u32,
    pub throughput: f64,
    pub time_saved_pct: f64,
    pub hit_rate: f64,
    pub extra_cost: Option<f64>,
}

impl ResultRow {
    fn to_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{:.6},{:.6},{:.6},{}",
            self.mode,
            self.agents,
            crate::analytic::fmt_num(self.alpha),
            self.lambda,
            crate::analytic::fmt_num(self.tool_mean),
            self.rep,
            self.throughput,
            self.time_saved_pct,
            self.hit_rate,
            self.extra_cost.map(|c| format!("{c:.6}")).unwrap_or_default()
        )
    }
}

pub fn results_csv(rows: &[ResultRow]) -> String {
    let mut out = String::from(RESULTS_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{}", r.to_line());
    }
    out
}

pub fn parse_results_csv(text: &str) -> Result<Vec<ResultRow>, String> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == RESULTS_HEADER => {}
        Some(h) => return Err(format!("unexpected header `{h}`")),
        None => return Err("empty file".into()),
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 10 {
            return Err(format!("line {}: expected 10 fields, got {}", i + 2, f.len()));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| format!("line {}: `{s}`: {e}", i + 2));
        rows.push(ResultRow {
            mode: f[0].to_string(),
            agents: f[1].parse().map_err(|e| format!("line {}: {e}", i + 2))?,
            alpha: num(f[2])?,
            lambda: f[3].parse().map_err(|e| format!("line {}: {e}", i + 2))?,
            tool_mean: num(f[4])?,
            rep: f[5].parse().map_err(|e| format!("line {}: {e}", i + 2))?,
            throughput: num(f[6])?,
            time_saved_pct: num(f[7])?,
            hit_rate: num(f[8])?,
            extra_cost: if f[9].is_empty() { None } else { Some(num(f[9])?) },
        });
    }
    Ok(rows)
}

/// Min, mean and max of a sample.
pub fn spread(xs: &[f64]) -> (f64, f64, f64) {
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo, mean(xs), hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn time_saved_examples() {
        assert_eq!(time_saved(10.0, 8.0).unwrap(), 20.0);
        assert_eq!(time_saved(10.0, 10.0).unwrap(), 0.0);
        assert!((time_saved(4.0, 2.8).unwrap() - 30.0).abs() < 1e-12);
        assert!(matches!(time_saved(0.0, 1.0), Err(MetricsError::InvalidBaseline(_))));
    }

    #[test]
    fn throughput_examples() {
        assert_eq!(throughput(300, 1.5).unwrap(), 200.0);
        assert_eq!(throughput(0, 1.0).unwrap(), 0.0);
        assert!(matches!(throughput(1, 0.0), Err(MetricsError::InvalidWindow(_))));
    }

    fn prices() -> PriceSheet {
        PriceSheet { main_input: Some(1.0), main_output: Some(10.0), spec_input: Some(0.1), spec_output: Some(1.0), spec_input_discount: 0.0 }
    }

    fn usage(lambda: u64) -> Usage {
        Usage { main_calls: 100, main_input: 100_000, main_output: 10_000, spec_calls: 100 * lambda, spec_input: 100_000 * lambda, spec_output: 10_000 * lambda, turns: 100 }
    }

    #[test]
    fn extra_cost_scales() {
        assert_eq!(extra_cost(&usage(0), &prices()).unwrap(), 0.0);
        let one = extra_cost(&usage(1), &prices()).unwrap();
        let main = prices().main_spend(&usage(1)).unwrap();
        assert!((one / main - 0.1).abs() < 1e-12);
        let nine = extra_cost(&usage(9), &prices()).unwrap();
        assert!((nine / one - 9.0).abs() < 1e-12);
        let discounted = PriceSheet { spec_input_discount: 0.5, ..prices() };
        assert!(extra_cost(&usage(1), &discounted).unwrap() < one);
        let missing = PriceSheet { spec_output: None, ..prices() };
        assert!(matches!(extra_cost(&usage(1), &missing), Err(MetricsError::Config(_))));
    }

    #[test]
    fn csv_round_trip() {
        let row = ResultRow {
            mode: "client_spec".into(),
            agents: 8,
            alpha: 0.5,
            lambda: 3,
            tool_mean: 1.5,
            rep: 0,
            throughput: 12.5,
            time_saved_pct: 7.25,
            hit_rate: 0.875,
            extra_cost: None,
        };
        let csv = results_csv(std::slice::from_ref(&row));
        assert!(csv.starts_with(RESULTS_HEADER));
        assert_eq!(parse_results_csv(&csv).unwrap(), vec![row]);
        assert!(parse_results_csv("").is_err());
        assert!(parse_results_csv("a,b\n").is_err());
    }
}
