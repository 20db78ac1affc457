//! Structured numeric output: sampled profiles, named checks, and the
//! report envelope every diagnostic returns.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

/// A real sequence sampled on an increasing index grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceProfile {
    pub label: String,
    pub grid: Vec<u64>,
    pub values: Vec<f64>,
}

impl ConvergenceProfile {
    pub fn new(label: impl Into<String>, grid: Vec<u64>, values: Vec<f64>) -> Result<Self> {
        let label = label.into();
        if grid.len() != values.len() {
            return Err(Error::Config("profile grid and values differ in length".into()));
        }
        if grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("profile grid must be strictly increasing".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::DegenerateWeight(format!(
                "profile '{label}' has a non-finite value at n = {}",
                grid[i]
            )));
        }
        Ok(Self { label, grid, values })
    }

    pub fn last(&self) -> Option<(u64, f64)> {
        Some((*self.grid.last()?, *self.values.last()?))
    }

    /// True when the last sampled value is at most `tol`.
    pub fn below_at_horizon(&self, tol: f64) -> bool {
        self.last().is_some_and(|(_, v)| v <= tol)
    }

    /// True when the values are non-increasing over the last `points` samples.
    pub fn decreasing_tail(&self, points: usize) -> bool {
        let k = points.min(self.values.len());
        self.values[self.values.len() - k..].windows(2).all(|w| w[1] <= w[0])
    }

    /// Least-squares slope of `ln |value|` against `ln n` over grid points in
    /// `[last_n / 10, last_n]`. `None` when fewer than two usable points exist.
    pub fn last_decade_slope(&self) -> Option<f64> {
        let (last, _) = self.last()?;
        let (xs, ys): (Vec<f64>, Vec<f64>) = self
            .grid
            .iter()
            .zip(&self.values)
            .filter(|(n, v)| **n > 0 && **n * 10 >= last && v.abs() > 0.0)
            .map(|(n, v)| ((*n as f64).ln(), v.abs().ln()))
            .unzip();
        if xs.len() < 2 {
            return None;
        }
        Some(crate::numeric::least_squares(&xs, &ys).0)
    }

    /// CSV block with header `n,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,value\n");
        for (n, v) in self.grid.iter().zip(&self.values) {
            out.push_str(&format!("{n},{v:e}\n"));
        }
        out
    }
}

/// Pass/fail entry recorded in a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Envelope returned by every diagnostic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub kind: String,
    pub label: String,
    pub horizon: u64,
    /// Upper bound on probability mass discarded by truncation.
    pub truncation_bound: f64,
    pub verdict: String,
    pub checks: Vec<Check>,
    pub profiles: Vec<ConvergenceProfile>,
    pub values: serde_json::Map<String, Value>,
    pub notes: Vec<String>,
}

impl Report {
    pub fn new(kind: impl Into<String>, label: impl Into<String>, horizon: u64) -> Self {
        Self {
            kind: kind.into(),
            label: label.into(),
            horizon,
            truncation_bound: 0.0,
            verdict: String::new(),
            checks: Vec::new(),
            profiles: Vec::new(),
            values: serde_json::Map::new(),
            notes: Vec::new(),
        }
    }

    pub fn check(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check { name: name.into(), passed, detail: detail.into() });
    }

    pub fn set(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).unwrap_or(Value::Null);
        self.values.insert(key.to_string(), v);
    }

    pub fn get_f64(&self, key: &str) -> Option<f64> {
        self.values.get(key)?.as_f64()
    }

    pub fn note(&mut self, text: impl Into<String>) {
        self.notes.push(text.into());
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn profile(&self, label: &str) -> Option<&ConvergenceProfile> {
        self.profiles.iter().find(|p| p.label == label)
    }

    /// JSON form with every profile rendered as an embedded CSV block.
    pub fn to_json(&self) -> Value {
        let mut v = serde_json::to_value(self).unwrap_or(Value::Null);
        if let Some(list) = v.get_mut("profiles").and_then(Value::as_array_mut) {
            for (entry, p) in list.iter_mut().zip(&self.profiles) {
                if let Some(obj) = entry.as_object_mut() {
                    obj.insert("csv".into(), Value::String(p.to_csv()));
                }
            }
        }
        v
    }
}

/// Evaluation grid rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GridRule {
    /// 1, 2, 4, ... up to the horizon, with the horizon itself appended.
    Dyadic,
    /// step, 2·step, ... up to the horizon, with the horizon itself appended.
    Linear(u64),
}

impl GridRule {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "dyadic" => Ok(Self::Dyadic),
            _ => {
                let step = s
                    .strip_prefix("linear:")
                    .and_then(|t| t.parse::<u64>().ok())
                    .filter(|&t| t > 0)
                    .ok_or_else(|| Error::Config(format!("unknown grid rule '{s}'")))?;
                Ok(Self::Linear(step))
            }
        }
    }

    pub fn build(&self, from: u64, horizon: u64) -> Vec<u64> {
        let mut grid = Vec::new();
        match *self {
            Self::Dyadic => {
                let mut n = 1u64;
                while n < from {
                    n *= 2;
                }
                while n < horizon {
                    grid.push(n);
                    n *= 2;
                }
            }
            Self::Linear(step) => {
                let mut n = step.max(from);
                while n < horizon {
                    grid.push(n);
                    n += step;
                }
            }
        }
        if horizon >= from {
            grid.push(horizon);
        }
        grid
    }
}

/// `count` points spaced evenly in `ln n` over `[from, to]`, deduplicated.
pub fn log_grid(from: u64, to: u64, count: usize) -> Vec<u64> {
    let (a, b) = ((from.max(1) as f64).ln(), (to as f64).ln());
    let mut grid: Vec<u64> = (0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1).max(1) as f64).exp().round() as u64)
        .collect();
    grid.dedup();
    grid
}
