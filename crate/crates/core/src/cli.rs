//! Command-line front end.
//!
//! Exit codes: 0 success, 1 configuration or input error, 2 some runs
//! failed.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::campaign::{self, Campaign, CampaignError, FigureKind, TraceEntry};
use crate::trace::{self, TraceError, TraceSpec};

#[derive(Debug, Parser)]
#[command(name = "ccsim", version, about = "Trace-driven congestion-control simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a campaign file, or a single scenario given by flags.
    Run(RunArgs),
    /// Sweep the buffer size in BDP multiples for one scenario.
    Sweep(SweepArgs),
    /// Emit plot-ready CSV from a results directory.
    Plotdata {
        /// Results directory written by `run` or `sweep`.
        results: PathBuf,
        /// scatter, harm-bars, sweep or timeseries.
        kind: String,
        /// Write here instead of stdout.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Trace utilities.
    #[command(subcommand)]
    Trace(TraceCommand),
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    /// Trace file or synthetic spec (const:<mbps>:<ms>, step:<mbps>x<ms>,..., onoff:<mbps>:<on>:<off>:<ms>).
    #[arg(long)]
    pub trace: Option<String>,
    /// Protocol; repeat for competing flows.
    #[arg(long = "cc")]
    pub cc: Vec<String>,
    #[arg(long = "delay-ms", default_value_t = 10)]
    pub delay_ms: u64,
    #[arg(long = "duration-s", default_value_t = 180.0)]
    pub duration_s: f64,
    #[arg(long, default_value_t = 20)]
    pub runs: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Log controller decisions to decisions.csv.
    #[arg(long = "decision-log")]
    pub decision_log: bool,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Campaign file (TOML). Other scenario flags are ignored when given,
    /// except --out and --jobs, which override the file.
    #[arg(long)]
    pub campaign: Option<PathBuf>,
    /// inf, bdp:X or pkts:N; repeatable.
    #[arg(long, default_value = "inf")]
    pub buffer: Vec<String>,
    #[command(flatten)]
    pub scenario: ScenarioArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Comma-separated BDP multiples, at least two.
    #[arg(long, value_delimiter = ',', default_values_t = [1.0, 2.0, 5.0, 10.0, 15.0])]
    pub multiples: Vec<f64>,
    #[command(flatten)]
    pub scenario: ScenarioArgs,
}

#[derive(Debug, Subcommand)]
pub enum TraceCommand {
    /// Check a trace file; prints the offending line on error.
    Validate { path: PathBuf },
    /// Average capacity and opportunity count of a trace file or spec.
    Stats { trace: String },
    /// Convert a probe log (one arrival time in microseconds per line) to a trace.
    Convert {
        input: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long = "bin-ms", default_value_t = 1)]
        bin_ms: u64,
        #[arg(long = "packet-bytes", default_value_t = trace::DEFAULT_PACKET_BYTES)]
        packet_bytes: u32,
    },
    /// Write a synthetic trace spec out as a trace file.
    Synth {
        spec: String,
        #[arg(short, long)]
        out: PathBuf,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Campaign(#[from] CampaignError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Io { path: dir.display().to_string(), msg: e.to_string() })?;
    }
    fs::write(path, text).map_err(|e| CliError::Io { path: path.display().to_string(), msg: e.to_string() })
}

fn scenario_campaign(s: &ScenarioArgs, buffers: Vec<String>) -> Result<(Campaign, PathBuf), CliError> {
    let trace = s.trace.clone().ok_or_else(|| CliError::Usage("--trace is required without --campaign".into()))?;
    if s.cc.is_empty() {
        return Err(CliError::Usage("at least one --cc is required without --campaign".into()));
    }
    let out = s.out.clone().ok_or_else(|| CliError::Usage("--out is required".into()))?;
    let c = Campaign {
        seed: s.seed,
        runs: s.runs,
        jobs: s.jobs,
        duration_s: s.duration_s,
        delay_ms: s.delay_ms,
        start_jitter_ms: 10.0,
        decision_log: s.decision_log,
        record_delays: true,
        traces: vec![TraceEntry { name: "trace".into(), spec: trace }],
        scenarios: vec![s.cc.join("+")],
        buffers,
        params: Default::default(),
    };
    Ok((c, out))
}

fn report(outcome: &campaign::CampaignOutcome, out: &Path, err: &mut dyn Write) -> i32 {
    for row in outcome.manifest.iter().filter(|r| !r.ok()) {
        let _ = writeln!(err, "failed: {} ({})", row.dir, row.error);
    }
    let _ = writeln!(
        err,
        "{} runs, {} failed, results in {}",
        outcome.manifest.len(),
        outcome.failed,
        out.display()
    );
    outcome.exit_code()
}

fn cmd_run(args: RunArgs, err: &mut dyn Write) -> Result<i32, CliError> {
    let (mut c, out) = match &args.campaign {
        Some(path) => {
            let mut c = Campaign::load(path)?;
            if args.scenario.jobs != 1 {
                c.jobs = args.scenario.jobs;
            }
            let out = args.scenario.out.clone().ok_or_else(|| CliError::Usage("--out is required".into()))?;
            (c, out)
        }
        None => scenario_campaign(&args.scenario, args.buffer.clone())?,
    };
    c = Campaign::from_toml(&toml::to_string(&c).map_err(|e| CliError::Usage(e.to_string()))?)?;
    let outcome = campaign::run_campaign(&c, &out)?;
    Ok(report(&outcome, &out, err))
}

fn cmd_sweep(args: SweepArgs, err: &mut dyn Write) -> Result<i32, CliError> {
    if args.multiples.len() < 2 {
        return Err(CliError::Usage("a sweep needs at least two multiples".into()));
    }
    if args.scenario.cc.len() != 2 {
        return Err(CliError::Usage("a sweep needs exactly two --cc flows".into()));
    }
    let buffers = args.multiples.iter().map(|m| format!("bdp:{m}")).collect();
    let (c, out) = scenario_campaign(&args.scenario, buffers)?;
    let c = Campaign::from_toml(&toml::to_string(&c).map_err(|e| CliError::Usage(e.to_string()))?)?;
    let outcome = campaign::run_campaign(&c, &out)?;
    let records = campaign::read_records(&out)?;
    let rows = campaign::sweep_rows(&records, &c.scenarios[0]);
    campaign::write_sweep(&out.join("sweep.csv"), &rows)?;
    Ok(report(&outcome, &out, err))
}

fn cmd_trace(cmd: TraceCommand, out: &mut dyn Write) -> Result<i32, CliError> {
    let w = |out: &mut dyn Write, s: String| {
        let _ = writeln!(out, "{s}");
    };
    match cmd {
        TraceCommand::Validate { path } => {
            let t = trace::load_trace(&path)?;
            w(out, format!("ok: {} ms, {}", t.duration_ms(), trace::trace_stats_line(&t)));
        }
        TraceCommand::Stats { trace: spec } => {
            let t = TraceSpec::parse(&spec)?.load()?;
            w(out, trace::trace_stats_line(&t));
        }
        TraceCommand::Convert { input, out: dest, bin_ms, packet_bytes } => {
            let text = fs::read_to_string(&input)
                .map_err(|e| CliError::Io { path: input.display().to_string(), msg: e.to_string() })?;
            let mut log = trace::parse_probe_log(&text)?;
            log.packet_bytes = packet_bytes;
            let t = trace::probe_log_to_trace(&log, bin_ms)?;
            write_file(&dest, &trace::serialize_trace(&t)?)?;
            w(out, trace::trace_stats_line(&t));
        }
        TraceCommand::Synth { spec, out: dest } => {
            let t = TraceSpec::parse(&spec)?.load()?;
            write_file(&dest, &trace::serialize_trace(&t)?)?;
            w(out, trace::trace_stats_line(&t));
        }
    }
    Ok(0)
}

/// Run a parsed command line, writing results to `out` and diagnostics to
/// `err`. Returns the process exit code.
pub fn execute(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let result = match cli.command {
        Command::Run(a) => cmd_run(a, err),
        Command::Sweep(a) => cmd_sweep(a, err),
        Command::Plotdata { results, kind, out: dest } => (|| {
            let kind: FigureKind = kind.parse()?;
            let csv = campaign::plotdata(&results, kind)?;
            match dest {
                Some(p) => write_file(&p, &csv)?,
                None => {
                    let _ = out.write_all(csv.as_bytes());
                }
            }
            Ok(0)
        })(),
        Command::Trace(t) => cmd_trace(t, out),
    };
    result.unwrap_or_else(|e| {
        let _ = writeln!(err, "error: {e}");
        1
    })
}
