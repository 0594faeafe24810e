//! Rate, jitter and latency measurement over full sessions, with JSON/CSV
//! reports and threshold checks.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Duration;

use beavr_core::timing::{achieved_hz, jitter_ms, summarize_ms, LatencySummary};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{monotonic_ns, sleep_while};
use crate::config::{SessionConfig, SourceKind};
use crate::pipeline::{PipelineError, RobotRun, Session};

pub const MIN_DURATION: Duration = Duration::from_secs(10);

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("duration {0:?} is shorter than the 10 s minimum")]
    Duration(Duration),
    #[error(transparent)]
    Session(#[from] PipelineError),
    #[error("report has no robots")]
    EmptyReport,
    #[error("robot `{0}` recorded fewer than two ticks")]
    NoTicks(String),
    #[error("thresholds: {0}")]
    Thresholds(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("csv report: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSamples {
    pub send_ts: Vec<u64>,
    pub apply_ts: Vec<u64>,
    /// `None` on ticks that applied no new command.
    pub capture_ts: Vec<Option<u64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotReport {
    pub robot: String,
    pub ticks: u64,
    pub achieved_hz: f64,
    pub jitter_ms: f64,
    /// Capture → apply, over ticks that applied a command.
    pub latency_ms: Option<LatencySummary>,
    /// Commands superseded before they could be applied.
    pub drops: u64,
    pub skipped_ticks: u64,
    pub blocked_ticks: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw: Option<RawSamples>,
}

impl RobotReport {
    pub fn from_run(run: &RobotRun, raw: bool) -> Result<Self, BenchError> {
        let send = run.send_ts();
        let (Some(hz), Some(jitter)) = (achieved_hz(&send), jitter_ms(&send)) else {
            return Err(BenchError::NoTicks(run.name.clone()));
        };
        let samples = run.samples();
        let latency: Vec<f64> = samples.iter().filter_map(|s| s.latency_ns()).map(|ns| ns as f64 / 1e6).collect();
        Ok(Self {
            robot: run.name.clone(),
            ticks: run.ticks.len() as u64,
            achieved_hz: hz,
            jitter_ms: jitter,
            latency_ms: summarize_ms(&latency),
            drops: run.stale(),
            skipped_ticks: run.skipped_ticks(),
            blocked_ticks: run.blocked_ticks(),
            raw: raw.then(|| RawSamples {
                send_ts: send,
                apply_ts: samples.iter().map(|s| s.apply_ts).collect(),
                capture_ts: samples.iter().map(|s| s.capture_ts).collect(),
            }),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config: String,
    pub rate_hz: f64,
    pub duration_s: f64,
    pub robots: Vec<RobotReport>,
}

impl MetricsReport {
    pub fn from_runs(config: &str, rate_hz: f64, duration_s: f64, runs: &[RobotRun], raw: bool) -> Result<Self, BenchError> {
        if runs.is_empty() {
            return Err(BenchError::EmptyReport);
        }
        Ok(Self {
            config: config.to_owned(),
            rate_hz,
            duration_s,
            robots: runs.iter().map(|r| RobotReport::from_run(r, raw)).collect::<Result<_, _>>()?,
        })
    }

    pub fn robot(&self, name: &str) -> Option<&RobotReport> {
        self.robots.iter().find(|r| r.robot == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchOptions {
    pub duration: Duration,
    /// Discarded lead-in while the pipeline fills.
    pub warmup: Duration,
    pub raw: bool,
}

impl BenchOptions {
    pub fn new(duration: Duration) -> Self {
        Self { duration, warmup: Duration::from_secs(1), raw: false }
    }
}

/// Runs a full session on the scripted detector and measures every control
/// tick sent inside the window that follows the warmup.
pub fn measure_run(config: &SessionConfig, options: &BenchOptions) -> Result<MetricsReport, BenchError> {
    if options.duration < MIN_DURATION {
        return Err(BenchError::Duration(options.duration));
    }
    let mut config = config.clone();
    config.detector.source = SourceKind::Scripted;
    config.record = None;
    let session = Session::start(config)?;
    let interrupted = || session.stop_requested();
    sleep_while(options.warmup, interrupted);
    let start = monotonic_ns();
    sleep_while(options.duration, interrupted);
    let end = monotonic_ns();
    let report = session.stop()?;
    let runs: Vec<RobotRun> = report.robots.iter().map(|r| r.window(start, end)).collect();
    MetricsReport::from_runs(&report.name, report.rate_hz, (end - start) as f64 * 1e-9, &runs, options.raw)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
}

pub const CSV_HEADER: [&str; 14] = [
    "config",
    "rate_hz",
    "duration_s",
    "robot",
    "ticks",
    "achieved_hz",
    "jitter_ms",
    "latency_mean_ms",
    "latency_p50_ms",
    "latency_p95_ms",
    "latency_p99_ms",
    "drops",
    "skipped_ticks",
    "blocked_ticks",
];

pub fn emit_report(report: &MetricsReport, format: ReportFormat) -> Result<String, BenchError> {
    if report.robots.is_empty() {
        return Err(BenchError::EmptyReport);
    }
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report).expect("reports serialize");
            s.push('\n');
            Ok(s)
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(CSV_HEADER)?;
            for r in &report.robots {
                let l = |f: fn(&LatencySummary) -> f64| r.latency_ms.as_ref().map_or(String::new(), |s| f(s).to_string());
                w.write_record([
                    report.config.clone(),
                    report.rate_hz.to_string(),
                    report.duration_s.to_string(),
                    r.robot.clone(),
                    r.ticks.to_string(),
                    r.achieved_hz.to_string(),
                    r.jitter_ms.to_string(),
                    l(|s| s.mean),
                    l(|s| s.p50),
                    l(|s| s.p95),
                    l(|s| s.p99),
                    r.drops.to_string(),
                    r.skipped_ticks.to_string(),
                    r.blocked_ticks.to_string(),
                ])?;
            }
            let bytes = w.into_inner().map_err(|e| BenchError::Csv(e.into_error().into()))?;
            Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
        }
    }
}

/// Reads a CSV report back; raw samples are not part of the CSV form.
pub fn parse_csv_report(text: &str) -> Result<MetricsReport, BenchError> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let mut report: Option<MetricsReport> = None;
    for row in reader.records() {
        let row = row?;
        let field = |i: usize| row.get(i).unwrap_or_default();
        let num = |i: usize| field(i).parse::<f64>().map_err(|e| BenchError::Parse(format!("column {}: {e}", CSV_HEADER[i])));
        let int = |i: usize| field(i).parse::<u64>().map_err(|e| BenchError::Parse(format!("column {}: {e}", CSV_HEADER[i])));
        let latency = if field(7).is_empty() {
            None
        } else {
            Some(LatencySummary { mean: num(7)?, p50: num(8)?, p95: num(9)?, p99: num(10)? })
        };
        let report = report.get_or_insert(MetricsReport {
            config: field(0).to_owned(),
            rate_hz: num(1)?,
            duration_s: num(2)?,
            robots: Vec::new(),
        });
        report.robots.push(RobotReport {
            robot: field(3).to_owned(),
            ticks: int(4)?,
            achieved_hz: num(5)?,
            jitter_ms: num(6)?,
            latency_ms: latency,
            drops: int(11)?,
            skipped_ticks: int(12)?,
            blocked_ticks: int(13)?,
            raw: None,
        });
    }
    report.ok_or(BenchError::EmptyReport)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Op {
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = "<")]
    Lt,
}

impl Op {
    pub fn holds(self, observed: f64, bound: f64) -> bool {
        match self {
            Op::Ge => observed >= bound,
            Op::Gt => observed > bound,
            Op::Le => observed <= bound,
            Op::Lt => observed < bound,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Op::Ge => ">=",
            Op::Gt => ">",
            Op::Le => "<=",
            Op::Lt => "<",
        }
    }
}

/// A bound is either absolute or a fraction of the configured rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Threshold {
    pub op: Op,
    #[serde(default)]
    pub value: Option<f64>,
    #[serde(default)]
    pub fraction_of_target: Option<f64>,
}

impl Threshold {
    fn bound(&self, rate_hz: f64) -> f64 {
        self.value.unwrap_or_else(|| self.fraction_of_target.unwrap_or(1.0) * rate_hz)
    }
}

pub const METRICS: [&str; 8] = [
    "achieved_hz",
    "jitter_ms",
    "latency_mean_ms",
    "latency_p50_ms",
    "latency_p95_ms",
    "latency_p99_ms",
    "drops",
    "skipped_ticks",
];

fn metric(r: &RobotReport, name: &str) -> Option<f64> {
    let l = r.latency_ms.as_ref();
    match name {
        "achieved_hz" => Some(r.achieved_hz),
        "jitter_ms" => Some(r.jitter_ms),
        "latency_mean_ms" => l.map(|s| s.mean),
        "latency_p50_ms" => l.map(|s| s.p50),
        "latency_p95_ms" => l.map(|s| s.p95),
        "latency_p99_ms" => l.map(|s| s.p99),
        "drops" => Some(r.drops as f64),
        "skipped_ticks" => Some(r.skipped_ticks as f64),
        _ => None,
    }
}

/// Parses a thresholds document: a JSON object of metric → `{op, value}` or
/// `{op, fraction_of_target}`.
pub fn parse_thresholds(text: &str) -> Result<BTreeMap<String, Threshold>, BenchError> {
    let map: BTreeMap<String, Threshold> = serde_json::from_str(text).map_err(|e| BenchError::Thresholds(e.to_string()))?;
    for (name, t) in &map {
        if !METRICS.contains(&name.as_str()) {
            return Err(BenchError::Thresholds(format!("unknown metric `{name}`; expected one of {}", METRICS.join(", "))));
        }
        match (t.value, t.fraction_of_target) {
            (Some(v), None) | (None, Some(v)) if v.is_finite() => {}
            _ => {
                return Err(BenchError::Thresholds(format!("`{name}` needs exactly one finite `value` or `fraction_of_target`")))
            }
        }
    }
    Ok(map)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub robot: String,
    pub metric: String,
    /// `NaN` when the report has no value, which fails.
    pub observed: f64,
    pub op: Op,
    pub bound: f64,
    pub pass: bool,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {}/{}: {:.3} {} {:.3}",
            if self.pass { "PASS" } else { "FAIL" },
            self.robot,
            self.metric,
            self.observed,
            self.op.symbol(),
            self.bound
        )
    }
}

/// One verdict per (robot, metric), in report then metric-name order.
pub fn compare_thresholds(report: &MetricsReport, thresholds: &BTreeMap<String, Threshold>) -> Vec<Verdict> {
    let mut out = Vec::new();
    for r in &report.robots {
        for (name, t) in thresholds {
            let observed = metric(r, name).unwrap_or(f64::NAN);
            let bound = t.bound(report.rate_hz);
            out.push(Verdict {
                robot: r.robot.clone(),
                metric: name.clone(),
                observed,
                op: t.op,
                bound,
                pass: t.op.holds(observed, bound),
            });
        }
    }
    out
}

/// Human-readable table of a report.
pub fn summary_table(report: &MetricsReport) -> String {
    let mut s = format!("{} @ {} Hz over {:.1} s\n", report.config, report.rate_hz, report.duration_s);
    let _ = writeln!(
        s,
        "{:<14} {:>7} {:>10} {:>10} {:>10} {:>10} {:>6}",
        "robot", "ticks", "hz", "jitter_ms", "lat_mean", "lat_p99", "drops"
    );
    for r in &report.robots {
        let (mean, p99) = r.latency_ms.map_or((f64::NAN, f64::NAN), |l| (l.mean, l.p99));
        let _ = writeln!(
            s,
            "{:<14} {:>7} {:>10.3} {:>10.3} {:>10.3} {:>10.3} {:>6}",
            r.robot, r.ticks, r.achieved_hz, r.jitter_ms, mean, p99, r.drops
        );
    }
    s
}
