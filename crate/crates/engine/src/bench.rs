//! Golden-suite runs and latency reports.
//!
//! `bench run` scores a suite and stores the report plus per-turn latencies in
//! `<state_dir>/bench/last_run.json`. `bench report` combines the last run with
//! the reference timings in `fixtures/sequential_timings.json`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use huddle_core::eval::{
    latency_histogram, run_golden, EngineReply, EvalError, GoldenCase, GoldenEngine, GoldenReport, Histogram,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::Config;
use crate::engine::{Engine, GoldenDriver};
use crate::fixtures::{read_json, FixtureError};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Fixture(#[from] FixtureError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("timings are in {0}; only seconds are supported")]
    Unit(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingFixture {
    pub unit: String,
    #[serde(default)]
    pub description: String,
    pub samples: Vec<f64>,
}

/// One scored run of a golden suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRun {
    pub report: GoldenReport,
    /// Wall time per turn, seconds.
    pub latencies: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub golden: Option<GoldenReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measured_latency: Option<Histogram>,
    /// Recorded sequential-pipeline timings shipped with the fixtures.
    pub reference_latency: Histogram,
}

/// Reads a case file, a file holding an array of cases, or every `*.json` in a directory.
pub fn load_suite(path: &Path) -> Result<Vec<GoldenCase>, BenchError> {
    if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|source| FixtureError::Io { path: path.into(), source })?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        files.sort();
        let mut cases = Vec::new();
        for f in files {
            cases.extend(load_suite(&f)?);
        }
        return Ok(cases);
    }
    let value: serde_json::Value = read_json(path)?;
    let parsed = if value.is_array() {
        serde_json::from_value::<Vec<GoldenCase>>(value)
    } else {
        serde_json::from_value::<GoldenCase>(value).map(|c| vec![c])
    };
    parsed.map_err(|e| FixtureError::Parse { path: path.into(), line: 0, message: e.to_string() }.into())
}

pub fn load_timings(path: &Path) -> Result<Vec<f64>, BenchError> {
    let t: TimingFixture = read_json(path)?;
    if t.unit != "seconds" {
        return Err(BenchError::Unit(t.unit));
    }
    Ok(t.samples)
}

struct Timed<'a> {
    inner: GoldenDriver<'a>,
    latencies: Vec<f64>,
}

impl GoldenEngine for Timed<'_> {
    type Conversation = huddle_core::ConversationState;

    fn new_conversation(&mut self) -> Result<Self::Conversation, String> {
        self.inner.new_conversation()
    }

    fn ask(&mut self, conversation: &mut Self::Conversation, prompt: &str) -> Result<EngineReply, String> {
        let t = Instant::now();
        let out = self.inner.ask(conversation, prompt);
        self.latencies.push(t.elapsed().as_secs_f64());
        out
    }
}

pub fn run_suite(engine: &Engine, suite: &[GoldenCase]) -> Result<BenchRun, BenchError> {
    let mut driver = Timed { inner: GoldenDriver::new(engine), latencies: Vec::new() };
    let report = run_golden(suite, &mut driver)?;
    Ok(BenchRun { report, latencies: driver.latencies })
}

fn last_run_path(config: &Config) -> PathBuf {
    config.state_dir.join("bench").join("last_run.json")
}

pub fn save_run(config: &Config, run: &BenchRun) -> Result<(), BenchError> {
    let path = last_run_path(config);
    let io = |source| BenchError::Io { path: path.clone(), source };
    fs::create_dir_all(path.parent().expect("bench dir")).map_err(io)?;
    fs::write(&path, serde_json::to_string_pretty(run).expect("run serializes")).map_err(io)
}

pub fn report(config: &Config) -> Result<BenchReport, BenchError> {
    let reference = load_timings(&config.fixtures_dir.join("sequential_timings.json"))?;
    let reference_latency = latency_histogram(&reference, config.bucket_width, config.latency_cap)?;
    let path = last_run_path(config);
    let last: Option<BenchRun> = if path.exists() { Some(read_json(&path)?) } else { None };
    let (golden, measured_latency) = match last {
        Some(run) => {
            let h = latency_histogram(&run.latencies, config.bucket_width, config.latency_cap)?;
            (Some(run.report), Some(h))
        }
        None => (None, None),
    };
    Ok(BenchReport { golden, measured_latency, reference_latency })
}

fn histogram_lines(out: &mut String, title: &str, h: &Histogram) {
    let mean = h.mean.map_or_else(|| "n/a".to_string(), |m| format!("{m:.1} s"));
    let _ = writeln!(out, "{title}: {} samples, mean {mean}", h.samples);
    for (i, count) in h.counts.iter().enumerate() {
        let label = if i + 1 == h.counts.len() {
            format!("{:>6.1}+     ", h.cap)
        } else {
            format!("{:>6.1}-{:<6.1}", h.lower_edge(i), h.lower_edge(i) + h.bucket_width)
        };
        let _ = writeln!(out, "  {label} {count:>4} {}", "#".repeat(*count));
    }
}

/// Plain-text rendering of a report.
pub fn summary(report: &BenchReport) -> String {
    let mut out = String::new();
    match &report.golden {
        Some(g) => {
            let _ = writeln!(out, "golden suite: {}/{} cases passed (accuracy {:.2})", g.passed, g.total, g.accuracy);
            for case in &g.cases {
                let _ = writeln!(out, "  {} {}", if case.passed { "PASS" } else { "FAIL" }, case.case_id);
                for t in case.turns.iter().filter(|t| !t.passed()) {
                    let why = t.error.clone().unwrap_or_else(|| {
                        if t.actual_intent != Some(t.expected_intent) {
                            format!("intent {:?}, expected {:?}", t.actual_intent, t.expected_intent)
                        } else {
                            format!("missing {}", t.missing_facts.join(", "))
                        }
                    });
                    let _ = writeln!(out, "    {:?}: {why}", t.prompt);
                }
            }
        }
        None => out.push_str("golden suite: no run recorded\n"),
    }
    if let Some(h) = &report.measured_latency {
        histogram_lines(&mut out, "measured latency", h);
    }
    histogram_lines(&mut out, "reference latency (sequential pipeline)", &report.reference_latency);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixtures() -> PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
    }

    #[test]
    fn reference_timings_mean() {
        let samples = load_timings(&fixtures().join("sequential_timings.json")).unwrap();
        // independent mean
        let mut sum = 0.0;
        for s in &samples {
            sum += s;
        }
        let h = latency_histogram(&samples, 2.5, 20.0).unwrap();
        assert!((h.mean.unwrap() - sum / samples.len() as f64).abs() < 1e-12);
        assert!((h.mean.unwrap() - 17.5).abs() < 0.05);
        assert_eq!(h.counts.iter().sum::<usize>(), samples.len());
        assert_eq!(h.overflow(), samples.iter().filter(|s| **s >= 20.0).count());
    }

    #[test]
    fn suite_loads_from_directory() {
        let cases = load_suite(&fixtures().join("golden")).unwrap();
        assert_eq!(cases.len(), 5);
        let ids: Vec<&str> = cases.iter().map(|c| c.case_id.as_str()).collect();
        let mut sorted = ids.clone();
        sorted.sort();
        assert_eq!(ids, sorted);
    }

    #[test]
    fn summary_without_run() {
        let state = tempfile::tempdir().unwrap();
        let config = Config { fixtures_dir: fixtures(), state_dir: state.path().into(), ..Config::default() };
        let r = report(&config).unwrap();
        assert!(r.golden.is_none());
        let text = summary(&r);
        assert!(text.contains("no run recorded"));
        assert!(text.contains("mean 17.5 s"));
    }
}
