use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Duration;

use beavr::bench::{self, BenchOptions, MetricsReport, ReportFormat};
use beavr::config::{PortConfig, RobotConfig, Role, SessionConfig, SourceKind};
use beavr::core::keypoints::Hand;
use beavr::pipeline::detector::{infer_rate, read_log};
use beavr::pipeline::gateway::{Gateway, GatewayConfig};
use beavr::pipeline::{Session, SessionReport};
use clap::{Parser, Subcommand};

static INTERRUPTED: AtomicBool = AtomicBool::new(false);

extern "C" fn on_sigint(_: libc::c_int) {
    INTERRUPTED.store(true, Ordering::SeqCst);
}

fn install_sigint() {
    let handler = on_sigint as extern "C" fn(libc::c_int);
    // SAFETY: the handler only stores to an atomic, which is async-signal-safe.
    unsafe {
        libc::signal(libc::SIGINT, handler as libc::sighandler_t);
        libc::signal(libc::SIGTERM, handler as libc::sighandler_t);
    }
}

fn interrupted() -> bool {
    INTERRUPTED.load(Ordering::SeqCst)
}

#[derive(Parser)]
#[command(name = "beavr", version, about = "Desk-scale VR teleoperation pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a session until Ctrl-C, a stop command or the end of a replay.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Replay a recorded keypoint log through the pipeline.
    Replay {
        log: PathBuf,
        /// Session to replay into; defaults to an arm and a hand per recorded hand at 30 Hz.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Measure control rate, jitter and latency over a scripted session.
    Bench {
        #[arg(long)]
        config: PathBuf,
        /// Measurement window in seconds (at least 10).
        #[arg(long, default_value_t = 60.0)]
        duration: f64,
        #[arg(long, value_enum, default_value_t = ReportFormat::Json)]
        format: ReportFormat,
        /// JSON thresholds; any failed check makes the exit status 1.
        #[arg(long)]
        thresholds: Option<PathBuf>,
        /// Include every sample in the JSON report.
        #[arg(long)]
        raw: bool,
        /// Write the report here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Serve the cockpit WebSocket.
    Gateway {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Session config whose ports the gateway should bridge.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    install_sigint();
    match run(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

type AnyError = Box<dyn std::error::Error>;

fn run(command: Command) -> Result<ExitCode, AnyError> {
    match command {
        Command::Run { config } => {
            let config = SessionConfig::load(&config)?;
            run_session(config)
        }
        Command::Replay { log, config } => {
            let config = replay_config(&log, config.as_deref())?;
            run_session(config)
        }
        Command::Bench { config, duration, format, thresholds, raw, output } => {
            let config = SessionConfig::load(&config)?;
            let thresholds =
                thresholds.map(|p| std::fs::read_to_string(&p).map_err(|e| format!("{}: {e}", p.display()))).transpose()?;
            let thresholds = thresholds.as_deref().map(bench::parse_thresholds).transpose()?;
            let mut options = BenchOptions::new(Duration::from_secs_f64(duration.max(0.0)));
            options.raw = raw;
            let report = bench::measure_run(&config, &options)?;
            let text = bench::emit_report(&report, format)?;
            match output {
                Some(p) => std::fs::write(&p, text).map_err(|e| format!("{}: {e}", p.display()))?,
                None => print!("{text}"),
            }
            eprint!("{}", bench::summary_table(&report));
            Ok(check(&report, thresholds.as_ref()))
        }
        Command::Gateway { port, config } => {
            let ports = match config {
                Some(p) => SessionConfig::load(&p)?.ports,
                None => PortConfig::default(),
            };
            let gateway = GatewayConfig::new(port, ports.gateway_bus()?, ports.interface()?);
            Gateway::serve(&gateway, &INTERRUPTED)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn check(report: &MetricsReport, thresholds: Option<&std::collections::BTreeMap<String, bench::Threshold>>) -> ExitCode {
    let Some(thresholds) = thresholds else { return ExitCode::SUCCESS };
    let verdicts = bench::compare_thresholds(report, thresholds);
    for v in &verdicts {
        eprintln!("{v}");
    }
    if verdicts.iter().all(|v| v.pass) {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn run_session(config: SessionConfig) -> Result<ExitCode, AnyError> {
    let session = Session::start(config)?;
    log::info!("running {}; Ctrl-C to stop", session.components().join(", "));
    let report = session.wait(interrupted)?;
    print_report(&report);
    Ok(ExitCode::SUCCESS)
}

fn print_report(report: &SessionReport) {
    match MetricsReport::from_runs(&report.name, report.rate_hz, report.duration_s(), &report.robots, false) {
        Ok(m) => eprint!("{}", bench::summary_table(&m)),
        Err(e) => eprintln!("no timing summary: {e}"),
    }
    for (component, n) in report.restarts.iter().filter(|(_, n)| **n > 0) {
        eprintln!("{component} restarted {n} time(s)");
    }
    if let Some(ep) = &report.episode {
        eprintln!("recorded episode {} with {} frames", ep.episode_index, ep.length);
    }
}

/// Replays at the recorded frame rate.
fn replay_config(log: &Path, config: Option<&Path>) -> Result<SessionConfig, AnyError> {
    let frames = read_log(log)?;
    let mut config = match config {
        Some(p) => SessionConfig::load(p)?,
        None => {
            let mut hands: Vec<Hand> = frames.iter().filter_map(|f| Hand::parse(&f.topic)).collect();
            hands.sort();
            hands.dedup();
            let robots = hands
                .iter()
                .flat_map(|&hand| {
                    [(Role::Arm, "sim-xarm7", "xarm"), (Role::Hand, "sim-hand16", "leap")].map(|(role, model, name)| {
                        RobotConfig { name: format!("{name}_{hand}"), model: model.into(), role, hand, end_effector: None }
                    })
                })
                .collect();
            SessionConfig::new("replay", 30.0, robots)
        }
    };
    config.detector.source = SourceKind::Replay;
    config.detector.replay_path = Some(log.to_path_buf());
    if let Some(rate) = infer_rate(&frames) {
        config.detector.rate = rate;
    }
    config.validate()?;
    Ok(config)
}
