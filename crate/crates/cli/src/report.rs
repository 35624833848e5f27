//! Report structure and its JSON / CSV renderings.

use std::fmt::Write as _;

use serde::Serialize;

use ivlate::montecarlo::study::StudyTruth;

use crate::config::{Command, Format, RunConfig};
use crate::ingest::DataSummary;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub estimator: String,
    /// Point estimate, or the Monte Carlo mean for simulations.
    pub point: f64,
    pub sd: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ci: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b_effective: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bias: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mc_se: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub successes: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failures: Option<usize>,
}

impl ResultRow {
    pub fn new(estimator: String, point: f64, sd: f64) -> Self {
        Self {
            estimator,
            point,
            sd,
            ci: None,
            b_effective: None,
            truth: None,
            bias: None,
            mc_se: None,
            successes: None,
            failures: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StratumRow {
    pub label: String,
    pub interval_low: f64,
    pub interval_high: f64,
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Failure {
    pub estimator: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub command: Command,
    pub config: RunConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<DataSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth: Option<StudyTruth>,
    pub results: Vec<ResultRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub strata: Option<Vec<StratumRow>>,
    pub warnings: Vec<String>,
    pub failures: Vec<Failure>,
    /// Long-format per-replicate estimates of a simulation.
    #[serde(skip)]
    pub replicate_csv: Option<String>,
}

/// Shortest round-trip decimal, empty for non-finite values.
fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:?}")
    } else {
        String::new()
    }
}

/// Formats one statistic of a simulate result row.
type Cell = fn(&ResultRow) -> String;

impl Report {
    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Json => {
                let mut s = serde_json::to_string_pretty(self).expect("report serializes");
                s.push('\n');
                s
            }
            Format::Csv => match self.command {
                Command::Estimate => self.estimate_csv(),
                Command::Simulate => self.simulate_csv(),
                Command::Stratify => self.stratify_csv(),
            },
        }
    }

    fn estimate_csv(&self) -> String {
        let mut out = String::from("estimator,point,sd,ci_low,ci_high\n");
        for r in &self.results {
            let [lo, hi] = r.ci.unwrap_or([f64::NAN; 2]);
            let _ = writeln!(out, "{},{},{},{},{}", r.estimator, num(r.point), num(r.sd), num(lo), num(hi));
        }
        out
    }

    /// One column per estimator, one row per statistic.
    fn simulate_csv(&self) -> String {
        let mut out = String::from("statistic");
        for r in &self.results {
            let _ = write!(out, ",{}", r.estimator);
        }
        out.push('\n');
        let rows: [(&str, Cell); 6] = [
            ("truth", |r| num(r.truth.unwrap_or(f64::NAN))),
            ("mean", |r| num(r.point)),
            ("bias", |r| num(r.bias.unwrap_or(f64::NAN))),
            ("sd", |r| num(r.sd)),
            ("mc_se", |r| num(r.mc_se.unwrap_or(f64::NAN))),
            ("failures", |r| r.failures.unwrap_or(0).to_string()),
        ];
        for (name, f) in rows {
            out.push_str(name);
            for r in &self.results {
                let _ = write!(out, ",{}", f(r));
            }
            out.push('\n');
        }
        out
    }

    fn stratify_csv(&self) -> String {
        let mut out = String::from("label,interval_low,interval_high,estimate,ci_low,ci_high\n");
        for s in self.strata.iter().flatten() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                s.label,
                num(s.interval_low),
                num(s.interval_high),
                num(s.estimate),
                num(s.ci_low),
                num(s.ci_high)
            );
        }
        out
    }
}
