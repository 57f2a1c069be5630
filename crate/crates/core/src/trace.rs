//! Channel traces: per-millisecond packet delivery opportunities.
//!
//! The on-disk format is the one used by `mm-link`: one decimal millisecond
//! timestamp per line, nondecreasing, where every line is one opportunity to
//! deliver a packet of `packet_bytes` bytes at that millisecond.
//!
//! Internally a trace is stored as a dense per-millisecond count vector, which
//! keeps multi-Gbps traces compact (a 1 Gbps, 180 s trace is 15 M lines but
//! only 180 k counters).

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

/// Default packet size of one delivery opportunity (an MTU-sized packet).
pub const DEFAULT_PACKET_BYTES: u32 = 1500;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TraceError {
    #[error("line {0}: not a non-negative decimal integer")]
    NonNumericLine(usize),
    #[error("line {0}: timestamp decreases")]
    DecreasingTimestamp(usize),
    #[error("trace has no delivery opportunities")]
    EmptyTrace,
    #[error("probe log has no arrivals")]
    EmptyLog,
    #[error("invalid trace parameter: {0}")]
    InvalidParameter(String),
    #[error("rate too high for packet size: {0} opportunities in one millisecond")]
    RateTooHighForPacketSize(u128),
    #[error("bad trace spec `{0}`")]
    BadSpec(String),
    #[error("reading {path}: {msg}")]
    Io { path: String, msg: String },
}

/// A per-millisecond schedule of packet delivery opportunities.
///
/// `counts[m]` is the number of opportunities at millisecond `m`; the trace
/// covers `[0, duration_ms)` so `counts.len() == duration_ms`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelTrace {
    counts: Vec<u32>,
    packet_bytes: u32,
}

impl ChannelTrace {
    /// Build a trace from sorted opportunity timestamps. The duration is the
    /// last timestamp plus one millisecond.
    pub fn from_opportunities(opportunities: &[u64], packet_bytes: u32) -> Result<Self, TraceError> {
        let last = *opportunities.last().ok_or(TraceError::EmptyTrace)?;
        let mut counts = vec![0u32; last as usize + 1];
        let mut prev = 0;
        for (i, &ts) in opportunities.iter().enumerate() {
            if ts < prev {
                return Err(TraceError::DecreasingTimestamp(i + 1));
            }
            prev = ts;
            counts[ts as usize] += 1;
        }
        Self::from_counts(counts, packet_bytes)
    }

    /// Build a trace from per-millisecond counts. Zero-opportunity traces
    /// (outages) are allowed here; the duration must be at least 1 ms.
    pub fn from_counts(counts: Vec<u32>, packet_bytes: u32) -> Result<Self, TraceError> {
        if counts.is_empty() {
            return Err(TraceError::InvalidParameter("duration must be at least 1 ms".into()));
        }
        if packet_bytes == 0 {
            return Err(TraceError::InvalidParameter("packet_bytes must be positive".into()));
        }
        Ok(Self { counts, packet_bytes })
    }

    pub fn packet_bytes(&self) -> u32 {
        self.packet_bytes
    }

    pub fn duration_ms(&self) -> u64 {
        self.counts.len() as u64
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    /// Opportunities at millisecond `ms` of the trace, wrapping modulo the
    /// trace duration.
    #[inline]
    pub fn opportunities_at(&self, ms: u64) -> u32 {
        self.counts[(ms % self.counts.len() as u64) as usize]
    }

    pub fn total_opportunities(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    /// Iterate over opportunity timestamps in order, one item per opportunity.
    pub fn opportunities(&self) -> impl Iterator<Item = u64> + '_ {
        self.counts
            .iter()
            .enumerate()
            .flat_map(|(ms, &c)| std::iter::repeat_n(ms as u64, c as usize))
    }

    /// Opportunities over `[0, horizon_ms)` with the trace looped.
    pub fn opportunities_until(&self, horizon_ms: u64) -> u64 {
        let dur = self.duration_ms();
        let full = horizon_ms / dur;
        let rem = (horizon_ms % dur) as usize;
        full * self.total_opportunities() + self.counts[..rem].iter().map(|&c| c as u64).sum::<u64>()
    }

    /// Average capacity in bits per second over the trace duration.
    pub fn average_capacity(&self) -> f64 {
        average_capacity(self)
    }
}

/// Parse `mm-link` trace text. Blank lines are ignored.
pub fn parse_trace(text: &str) -> Result<ChannelTrace, TraceError> {
    parse_trace_with_packet_size(text, DEFAULT_PACKET_BYTES)
}

pub fn parse_trace_with_packet_size(text: &str, packet_bytes: u32) -> Result<ChannelTrace, TraceError> {
    let mut counts: Vec<u32> = Vec::new();
    let mut prev: Option<u64> = None;
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let line_no = idx + 1;
        if !line.bytes().all(|b| b.is_ascii_digit()) {
            return Err(TraceError::NonNumericLine(line_no));
        }
        let ts: u64 = line.parse().map_err(|_| TraceError::NonNumericLine(line_no))?;
        if prev.is_some_and(|p| ts < p) {
            return Err(TraceError::DecreasingTimestamp(line_no));
        }
        prev = Some(ts);
        let idx = usize::try_from(ts).map_err(|_| TraceError::NonNumericLine(line_no))?;
        if idx >= counts.len() {
            counts.resize(idx + 1, 0);
        }
        counts[idx] += 1;
    }
    if prev.is_none() {
        return Err(TraceError::EmptyTrace);
    }
    ChannelTrace::from_counts(counts, packet_bytes)
}

/// Serialize to `mm-link` trace text, one LF-terminated timestamp per line.
///
/// Trailing opportunity-free milliseconds are not representable in the
/// format, so only traces whose last millisecond carries an opportunity
/// round-trip exactly.
pub fn serialize_trace(trace: &ChannelTrace) -> Result<String, TraceError> {
    if trace.total_opportunities() == 0 {
        return Err(TraceError::EmptyTrace);
    }
    let mut out = String::with_capacity(trace.total_opportunities() as usize * 6);
    for (ms, &c) in trace.counts.iter().enumerate() {
        for _ in 0..c {
            let _ = writeln!(out, "{ms}");
        }
    }
    Ok(out)
}

pub fn load_trace(path: &Path) -> Result<ChannelTrace, TraceError> {
    let text = std::fs::read_to_string(path).map_err(|e| TraceError::Io {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    parse_trace(&text)
}

/// Receiver-side arrival log of fixed-size probe packets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProbeLog {
    pub arrivals_us: Vec<u64>,
    pub packet_bytes: u32,
}

impl ProbeLog {
    pub fn new(arrivals_us: Vec<u64>) -> Self {
        Self { arrivals_us, packet_bytes: DEFAULT_PACKET_BYTES }
    }
}

/// Parse a probe log: one integer microsecond arrival timestamp per line.
pub fn parse_probe_log(text: &str) -> Result<ProbeLog, TraceError> {
    let mut arrivals = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if !line.bytes().all(|b| b.is_ascii_digit()) {
            return Err(TraceError::NonNumericLine(idx + 1));
        }
        let ts: u64 = line.parse().map_err(|_| TraceError::NonNumericLine(idx + 1))?;
        if arrivals.last().is_some_and(|&p| ts < p) {
            return Err(TraceError::DecreasingTimestamp(idx + 1));
        }
        arrivals.push(ts);
    }
    if arrivals.is_empty() {
        return Err(TraceError::EmptyLog);
    }
    Ok(ProbeLog::new(arrivals))
}

/// Bin probe arrivals into a channel trace, one opportunity per arrival.
///
/// The bin containing the first arrival becomes millisecond 0.
pub fn probe_log_to_trace(log: &ProbeLog, bin_ms: u64) -> Result<ChannelTrace, TraceError> {
    if bin_ms == 0 {
        return Err(TraceError::InvalidParameter("bin_ms must be at least 1".into()));
    }
    let first = *log.arrivals_us.first().ok_or(TraceError::EmptyLog)?;
    let bin_of = |t_us: u64| (t_us / 1000 / bin_ms) * bin_ms;
    let origin = bin_of(first);
    let mut opportunities = Vec::with_capacity(log.arrivals_us.len());
    let mut prev = first;
    for (i, &t) in log.arrivals_us.iter().enumerate() {
        if t < prev {
            return Err(TraceError::DecreasingTimestamp(i + 1));
        }
        prev = t;
        opportunities.push(bin_of(t) - origin);
    }
    ChannelTrace::from_opportunities(&opportunities, log.packet_bytes)
}

/// Average capacity in bits per second.
pub fn average_capacity(trace: &ChannelTrace) -> f64 {
    let bits = trace.total_opportunities() as f64 * trace.packet_bytes as f64 * 8.0;
    bits / (trace.duration_ms() as f64 / 1000.0)
}

/// Error-accumulating packetizer: credit accrues in units of
/// bit-milliseconds-per-second and one opportunity is emitted per full packet.
struct Packetizer {
    packet_units: u128,
    credit: u128,
}

impl Packetizer {
    fn new(packet_bytes: u32) -> Self {
        Self { packet_units: packet_bytes as u128 * 8 * 1000, credit: 0 }
    }

    fn step(&mut self, rate_bps: u128) -> Result<u32, TraceError> {
        self.credit += rate_bps;
        let n = self.credit / self.packet_units;
        self.credit -= n * self.packet_units;
        u32::try_from(n).map_err(|_| TraceError::RateTooHighForPacketSize(n))
    }
}

fn rate_to_bps(rate_mbps: f64) -> Result<u128, TraceError> {
    if !(rate_mbps.is_finite() && rate_mbps >= 0.0) {
        return Err(TraceError::InvalidParameter(format!("rate {rate_mbps} Mbps")));
    }
    Ok((rate_mbps * 1e6).round() as u128)
}

fn check_duration(duration_ms: u64) -> Result<(), TraceError> {
    if duration_ms == 0 {
        return Err(TraceError::InvalidParameter("duration must be positive".into()));
    }
    Ok(())
}

pub fn constant_trace(rate_mbps: f64, duration_ms: u64) -> Result<ChannelTrace, TraceError> {
    step_trace(&[(rate_mbps, duration_ms)])
}

/// Piecewise-constant trace; fractional packet credit carries across segments.
pub fn step_trace(segments: &[(f64, u64)]) -> Result<ChannelTrace, TraceError> {
    if segments.is_empty() {
        return Err(TraceError::InvalidParameter("no segments".into()));
    }
    let total: u64 = segments.iter().map(|s| s.1).sum();
    let mut counts = Vec::with_capacity(total as usize);
    let mut pk = Packetizer::new(DEFAULT_PACKET_BYTES);
    for &(rate, dur) in segments {
        check_duration(dur)?;
        let bps = rate_to_bps(rate)?;
        for _ in 0..dur {
            counts.push(pk.step(bps)?);
        }
    }
    ChannelTrace::from_counts(counts, DEFAULT_PACKET_BYTES)
}

/// On-off outage trace: `on_ms` at `on_rate_mbps`, then `off_ms` with no
/// opportunities, repeating until `duration_ms`.
pub fn onoff_trace(on_rate_mbps: f64, on_ms: u64, off_ms: u64, duration_ms: u64) -> Result<ChannelTrace, TraceError> {
    check_duration(on_ms)?;
    check_duration(off_ms)?;
    check_duration(duration_ms)?;
    let bps = rate_to_bps(on_rate_mbps)?;
    let period = on_ms + off_ms;
    let mut pk = Packetizer::new(DEFAULT_PACKET_BYTES);
    let mut counts = Vec::with_capacity(duration_ms as usize);
    for ms in 0..duration_ms {
        if ms % period < on_ms {
            counts.push(pk.step(bps)?);
        } else {
            pk.credit = 0;
            counts.push(0);
        }
    }
    ChannelTrace::from_counts(counts, DEFAULT_PACKET_BYTES)
}

/// Where a trace comes from: a file on disk or a synthetic generator.
///
/// Textual form (used by the CLI and campaign files):
/// `const:<mbps>:<ms>`, `step:<mbps>x<ms>,<mbps>x<ms>,...`,
/// `onoff:<mbps>:<on_ms>:<off_ms>:<ms>`, anything else is a file path.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceSpec {
    File { path: String },
    Constant { rate_mbps: f64, duration_ms: u64 },
    Step { segments: Vec<(f64, u64)> },
    OnOff { rate_mbps: f64, on_ms: u64, off_ms: u64, duration_ms: u64 },
}

impl TraceSpec {
    pub fn parse(s: &str) -> Result<Self, TraceError> {
        let bad = || TraceError::BadSpec(s.to_string());
        let num = |v: &str| v.trim().parse::<f64>().map_err(|_| bad());
        let int = |v: &str| v.trim().parse::<u64>().map_err(|_| bad());
        if let Some(rest) = s.strip_prefix("const:") {
            let parts: Vec<&str> = rest.split(':').collect();
            if parts.len() != 2 {
                return Err(bad());
            }
            return Ok(Self::Constant { rate_mbps: num(parts[0])?, duration_ms: int(parts[1])? });
        }
        if let Some(rest) = s.strip_prefix("step:") {
            let segments = rest
                .split(',')
                .map(|seg| {
                    let (r, d) = seg.split_once('x').ok_or_else(bad)?;
                    Ok((num(r)?, int(d)?))
                })
                .collect::<Result<Vec<_>, TraceError>>()?;
            return Ok(Self::Step { segments });
        }
        if let Some(rest) = s.strip_prefix("onoff:") {
            let parts: Vec<&str> = rest.split(':').collect();
            if parts.len() != 4 {
                return Err(bad());
            }
            return Ok(Self::OnOff {
                rate_mbps: num(parts[0])?,
                on_ms: int(parts[1])?,
                off_ms: int(parts[2])?,
                duration_ms: int(parts[3])?,
            });
        }
        if s.is_empty() {
            return Err(bad());
        }
        Ok(Self::File { path: s.to_string() })
    }

    pub fn load(&self) -> Result<ChannelTrace, TraceError> {
        match self {
            Self::File { path } => load_trace(Path::new(path)),
            Self::Constant { rate_mbps, duration_ms } => constant_trace(*rate_mbps, *duration_ms),
            Self::Step { segments } => step_trace(segments),
            Self::OnOff { rate_mbps, on_ms, off_ms, duration_ms } => {
                onoff_trace(*rate_mbps, *on_ms, *off_ms, *duration_ms)
            }
        }
    }
}

impl std::fmt::Display for TraceSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::File { path } => write!(f, "{path}"),
            Self::Constant { rate_mbps, duration_ms } => write!(f, "const:{rate_mbps}:{duration_ms}"),
            Self::Step { segments } => {
                let segs: Vec<String> = segments.iter().map(|(r, d)| format!("{r}x{d}")).collect();
                write!(f, "step:{}", segs.join(","))
            }
            Self::OnOff { rate_mbps, on_ms, off_ms, duration_ms } => {
                write!(f, "onoff:{rate_mbps}:{on_ms}:{off_ms}:{duration_ms}")
            }
        }
    }
}

/// One-line human summary, e.g. `48.000 Mbps avg, 240000 opportunities`.
pub fn trace_stats_line(trace: &ChannelTrace) -> String {
    format!(
        "{:.3} Mbps avg, {} opportunities",
        trace.average_capacity() / 1e6,
        trace.total_opportunities()
    )
}
