//! Discrete-event experiment runner.
//!
//! One run wires a set of bulk-transfer flows, each driven by its own
//! congestion controller, through a single [`BottleneckLink`]. Time is kept
//! in microseconds; the link drains on millisecond boundaries. Packets
//! reach the receiver `prop_delay` after leaving the queue and the ACK
//! returns after another `prop_delay` over an uncontended reverse path.
//!
//! Events at the same microsecond are processed in a fixed order: ACK
//! arrivals (in link egress order), timers (by time, then flow id), the
//! millisecond tick (controller ticks, timeouts), then newly sent packets
//! enter the queue sorted by flow id and sequence number, and finally the
//! link releases the millisecond's opportunities.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cc::{make_controller, CcError, CongestionController, ControllerContext, Params};
use crate::link::{buffer_from_bdp, BottleneckLink, BufferCapacity, EnqueueOutcome, Packet};
use crate::result::{Counters, Decision, DelaySample, FlowResult, QueueSample, RunResult};
use crate::trace::{ChannelTrace, TraceError, TraceSpec};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("loading trace: {0}")]
    TraceLoad(#[from] TraceError),
    #[error("invalid config: {0}")]
    ConfigInvalid(String),
    #[error(transparent)]
    Controller(#[from] CcError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum BufferSpec {
    Infinite,
    BdpMultiple(f64),
    Packets(u64),
}

impl BufferSpec {
    /// `inf`, `bdp:<multiple>` or `pkts:<n>`.
    pub fn parse(s: &str) -> Result<Self, String> {
        let bad = || format!("bad buffer spec `{s}` (expected inf, bdp:X or pkts:N)");
        if s == "inf" || s == "infinite" {
            return Ok(Self::Infinite);
        }
        if let Some(x) = s.strip_prefix("bdp:") {
            let m: f64 = x.parse().map_err(|_| bad())?;
            if !(m.is_finite() && m > 0.0) {
                return Err(bad());
            }
            return Ok(Self::BdpMultiple(m));
        }
        if let Some(x) = s.strip_prefix("pkts:") {
            let n: u64 = x.parse().map_err(|_| bad())?;
            if n == 0 {
                return Err(bad());
            }
            return Ok(Self::Packets(n));
        }
        Err(bad())
    }

    pub fn resolve(&self, trace: &ChannelTrace, min_rtt_ms: f64) -> BufferCapacity {
        match *self {
            Self::Infinite => BufferCapacity::Infinite,
            Self::Packets(n) => BufferCapacity::Packets(n),
            Self::BdpMultiple(m) => BufferCapacity::Packets(buffer_from_bdp(trace, min_rtt_ms, m)),
        }
    }
}

impl std::fmt::Display for BufferSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Infinite => write!(f, "inf"),
            Self::BdpMultiple(m) => write!(f, "bdp:{m}"),
            Self::Packets(n) => write!(f, "pkts:{n}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSpec {
    pub protocol: String,
    #[serde(default)]
    pub params: Params,
    #[serde(default)]
    pub start_time_s: f64,
}

impl FlowSpec {
    pub fn new(protocol: &str) -> Self {
        Self { protocol: protocol.to_string(), params: Params::new(), start_time_s: 0.0 }
    }
}

fn default_prop_delay_ms() -> u64 {
    10
}
fn default_duration_s() -> f64 {
    180.0
}
fn default_window_s() -> f64 {
    1.0
}
fn default_jitter_ms() -> f64 {
    10.0
}
pub(crate) fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub trace: TraceSpec,
    pub flows: Vec<FlowSpec>,
    pub buffer: BufferSpec,
    #[serde(default = "default_prop_delay_ms")]
    pub prop_delay_ms: u64,
    #[serde(default = "default_duration_s")]
    pub duration_s: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_window_s")]
    pub throughput_window_s: f64,
    /// Each flow starts up to this much after its configured start time,
    /// drawn from the run seed.
    #[serde(default = "default_jitter_ms")]
    pub start_jitter_ms: f64,
    #[serde(default = "default_true")]
    pub record_delays: bool,
    #[serde(default)]
    pub decision_log: bool,
}

impl ExperimentConfig {
    pub fn new(trace: TraceSpec, protocols: &[&str], buffer: BufferSpec) -> Self {
        Self {
            trace,
            flows: protocols.iter().map(|p| FlowSpec::new(p)).collect(),
            buffer,
            prop_delay_ms: default_prop_delay_ms(),
            duration_s: default_duration_s(),
            seed: 0,
            throughput_window_s: default_window_s(),
            start_jitter_ms: default_jitter_ms(),
            record_delays: true,
            decision_log: false,
        }
    }

    pub fn with_duration(mut self, s: f64) -> Self {
        self.duration_s = s;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |m: String| Err(EngineError::ConfigInvalid(m));
        if self.flows.is_empty() {
            return bad("at least one flow is required".into());
        }
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return bad(format!("duration_s must be positive, got {}", self.duration_s));
        }
        if !(self.throughput_window_s.is_finite() && self.throughput_window_s > 0.0) {
            return bad("throughput_window_s must be positive".into());
        }
        if !(self.start_jitter_ms.is_finite() && self.start_jitter_ms >= 0.0) {
            return bad("start_jitter_ms must be non-negative".into());
        }
        for (i, f) in self.flows.iter().enumerate() {
            if !(f.start_time_s.is_finite() && f.start_time_s >= 0.0 && f.start_time_s < self.duration_s) {
                return bad(format!("flow {i}: start_time_s must lie in [0, duration_s)"));
            }
        }
        match self.buffer {
            BufferSpec::BdpMultiple(m) if !(m.is_finite() && m > 0.0) => bad("BDP multiple must be positive".into()),
            BufferSpec::Packets(0) => bad("buffer must hold at least one packet".into()),
            _ => Ok(()),
        }
    }

    pub fn min_rtt_ms(&self) -> f64 {
        2.0 * self.prop_delay_ms as f64
    }
}

/// SplitMix64 finalizer, used to derive independent seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const INITIAL_RTO_US: u64 = 1_000_000;
const MIN_RTO_US: u64 = 200_000;
const MAX_RTO_BACKOFF: u32 = 6;
const DUPACK_THRESHOLD: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum TimerKind {
    Start,
    Pacing,
}

struct Sender {
    id: u32,
    cc: Box<dyn CongestionController>,
    started: bool,
    next_seq: u64,
    /// Sender's view of unacknowledged packets: (seq, sent_us), in send order.
    outstanding: VecDeque<(u64, u64)>,
    dupacks: u32,
    srtt_us: Option<f64>,
    rto_backoff: u32,
    rto_deadline: Option<u64>,
    pacing_next_us: f64,
    timer_at: Option<u64>,
    last_logged: Option<(u64, u64, &'static str, Option<u64>)>,
    out: FlowResult,
}

impl Sender {
    fn rto_us(&self) -> u64 {
        let base = match self.srtt_us {
            Some(s) => ((2.0 * s) as u64).max(MIN_RTO_US),
            None => INITIAL_RTO_US,
        };
        base << self.rto_backoff
    }

    fn log_decision(&mut self, now_us: u64) {
        let cwnd = self.cc.cwnd_packets();
        let pacing = self.cc.pacing_rate_pps();
        let mode = self.cc.mode();
        let target = self.cc.target_rate_pps();
        let key = (cwnd, pacing.to_bits(), mode, target.map(f64::to_bits));
        if self.last_logged != Some(key) {
            self.last_logged = Some(key);
            self.out.decisions.push(Decision {
                time_us: now_us,
                cwnd,
                pacing_pps: pacing,
                target_pps: target,
                bdp_estimate: self.cc.bdp_estimate(),
                mode: mode.to_string(),
            });
        }
    }
}

struct Sim<'a> {
    cfg: &'a ExperimentConfig,
    link: BottleneckLink,
    senders: Vec<Sender>,
    /// Released packets in egress order, awaiting their ACK.
    acks: VecDeque<(Packet, u64)>,
    timers: BinaryHeap<Reverse<(u64, u32, TimerKind)>>,
    pending: Vec<Packet>,
    released: Vec<(Packet, u64)>,
    end_us: u64,
    prop_us: u64,
    packet_bytes: u32,
    on_wire: u64,
    queue_series: Vec<QueueSample>,
    events: u64,
}

impl Sim<'_> {
    fn schedule(&mut self, flow: usize, at_us: u64) {
        let s = &mut self.senders[flow];
        if s.timer_at.is_some_and(|t| t <= at_us) {
            return;
        }
        s.timer_at = Some(at_us);
        self.timers.push(Reverse((at_us, flow as u32, TimerKind::Pacing)));
    }

    fn try_send(&mut self, flow: usize, now_us: u64) {
        let mut wake_at = None;
        {
            let s = &mut self.senders[flow];
            if !s.started {
                return;
            }
            loop {
                if s.outstanding.len() as u64 >= s.cc.cwnd_packets() {
                    break;
                }
                let rate = s.cc.pacing_rate_pps();
                if rate > 0.0 {
                    if s.pacing_next_us > now_us as f64 {
                        wake_at = Some(s.pacing_next_us.ceil() as u64);
                        break;
                    }
                    s.pacing_next_us = s.pacing_next_us.max(now_us as f64 - 1e6 / rate) + 1e6 / rate;
                }
                let seq = s.next_seq;
                s.next_seq += 1;
                if s.outstanding.is_empty() {
                    s.rto_deadline = Some(now_us + s.rto_us());
                }
                s.outstanding.push_back((seq, now_us));
                s.out.sent += 1;
                s.cc.on_send(seq, now_us);
                self.pending.push(Packet { flow_id: s.id, seq, size_bytes: self.packet_bytes, sent_at: now_us });
            }
        }
        if let Some(t) = wake_at {
            self.schedule(flow, t);
        }
    }

    fn after_callbacks(&mut self, flow: usize, now_us: u64) {
        self.try_send(flow, now_us);
        if self.cfg.decision_log {
            self.senders[flow].log_decision(now_us);
        }
    }

    fn on_ack(&mut self, packet: Packet, now_us: u64) {
        let flow = packet.flow_id as usize;
        let record = self.cfg.record_delays;
        let s = &mut self.senders[flow];
        let rtt = now_us - packet.sent_at;
        s.out.acked += 1;
        s.out.delay_sum_us += rtt as u128;
        s.out.delay_min_us = s.out.delay_min_us.min(rtt);
        if record {
            s.out.samples.push(DelaySample { seq: packet.seq, sent_us: packet.sent_at, acked_us: now_us });
        }
        // FIFO path: ACKs arrive in sequence order, so everything the sender
        // still holds below `seq` was dropped.
        let Some(pos) = s.outstanding.iter().position(|&(q, _)| q >= packet.seq) else {
            return;
        };
        if s.outstanding[pos].0 != packet.seq {
            return;
        }
        s.outstanding.remove(pos);
        s.srtt_us = Some(match s.srtt_us {
            None => rtt as f64,
            Some(v) => 0.875 * v + 0.125 * rtt as f64,
        });
        s.rto_backoff = 0;
        s.cc.on_ack(packet.seq, rtt, now_us);
        if pos > 0 {
            s.dupacks += 1;
            if s.dupacks >= DUPACK_THRESHOLD {
                s.dupacks = 0;
                for _ in 0..pos {
                    let (lost, _) = s.outstanding.pop_front().expect("hole present");
                    s.cc.on_loss(lost, now_us);
                }
            }
        } else {
            s.dupacks = 0;
        }
        s.rto_deadline = (!s.outstanding.is_empty()).then(|| now_us + s.rto_us());
        self.after_callbacks(flow, now_us);
    }

    fn on_timer(&mut self, flow: usize, kind: TimerKind, now_us: u64) {
        match kind {
            TimerKind::Start => {
                let s = &mut self.senders[flow];
                s.started = true;
                s.pacing_next_us = now_us as f64;
                s.cc.on_tick(now_us);
            }
            TimerKind::Pacing => {
                let s = &mut self.senders[flow];
                if s.timer_at == Some(now_us) {
                    s.timer_at = None;
                }
            }
        }
        self.after_callbacks(flow, now_us);
    }

    fn tick(&mut self, ms: u64, now_us: u64) {
        for flow in 0..self.senders.len() {
            let s = &mut self.senders[flow];
            if !s.started {
                continue;
            }
            s.cc.on_tick(now_us);
            if s.rto_deadline.is_some_and(|d| now_us >= d) {
                let lost = s.outstanding.len() as u64;
                s.outstanding.clear();
                s.dupacks = 0;
                s.out.timeouts += 1;
                s.out.declared_lost += lost;
                s.cc.on_timeout(now_us);
                s.rto_backoff = (s.rto_backoff + 1).min(MAX_RTO_BACKOFF);
                s.rto_deadline = None;
                s.pacing_next_us = now_us as f64;
            }
            self.after_callbacks(flow, now_us);
        }
        self.flush(now_us);

        self.released.clear();
        let mut released = std::mem::take(&mut self.released);
        self.link.release_ms(ms, &mut released);
        for &(p, egress) in &released {
            let rx = egress + self.prop_us;
            if rx < self.end_us {
                let out = &mut self.senders[p.flow_id as usize].out;
                out.delivered += 1;
                out.delivered_per_ms[(rx / 1000) as usize] += 1;
            } else {
                self.on_wire += 1;
            }
            self.acks.push_back((p, egress));
        }
        self.released = released;

        let q = self.link.queue_len() as u64;
        if self.queue_series.last().is_none_or(|s| s.packets != q) {
            self.queue_series.push(QueueSample { time_us: now_us, packets: q });
        }
    }

    fn flush(&mut self, now_us: u64) {
        if self.pending.is_empty() {
            return;
        }
        self.pending.sort_unstable_by_key(|p| (p.flow_id, p.seq));
        for p in self.pending.drain(..) {
            if self.link.enqueue(p, now_us) == EnqueueOutcome::Dropped {
                self.senders[p.flow_id as usize].out.dropped += 1;
            }
        }
    }

    fn run(&mut self) {
        let mut next_tick_ms = 0u64;
        let ack_delay = 2 * self.prop_us;
        loop {
            let t_ack = self.acks.front().map(|&(_, e)| e + ack_delay);
            let t_timer = self.timers.peek().map(|Reverse((t, _, _))| *t);
            let t_tick = next_tick_ms * 1000;
            let now = [t_ack, t_timer].into_iter().flatten().fold(t_tick, u64::min);
            if now >= self.end_us {
                break;
            }
            while let Some(&(p, e)) = self.acks.front() {
                if e + ack_delay != now {
                    break;
                }
                self.acks.pop_front();
                self.events += 1;
                self.on_ack(p, now);
            }
            while let Some(&Reverse((t, flow, kind))) = self.timers.peek() {
                if t != now {
                    break;
                }
                self.timers.pop();
                self.events += 1;
                self.on_timer(flow as usize, kind, now);
            }
            if now == t_tick {
                self.tick(next_tick_ms, now);
                next_tick_ms += 1;
            } else {
                self.flush(now);
            }
        }
    }
}

/// Run one experiment with an already loaded trace.
pub fn run_with_trace(config: &ExperimentConfig, trace: Arc<ChannelTrace>) -> Result<RunResult, EngineError> {
    config.validate()?;
    let started = Instant::now();
    let end_us = (config.duration_s * 1e6).round() as u64;
    let duration_ms = end_us.div_ceil(1000);
    let capacity = config.buffer.resolve(&trace, config.min_rtt_ms());
    let packet_bytes = trace.packet_bytes();
    let prop_us = config.prop_delay_ms * 1000;

    let mut senders = Vec::with_capacity(config.flows.len());
    let mut timers = BinaryHeap::new();
    for (i, f) in config.flows.iter().enumerate() {
        let flow_seed = mix_seed(config.seed, i as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(flow_seed);
        let jitter_us = if config.start_jitter_ms > 0.0 {
            rng.random_range(0.0..config.start_jitter_ms * 1000.0) as u64
        } else {
            0
        };
        let ctx = ControllerContext { initial_rtt_us: (2 * prop_us).max(1), seed: mix_seed(flow_seed, 1) };
        let cc = make_controller(&f.protocol, &f.params, ctx)?;
        let start_us = (f.start_time_s * 1e6).round() as u64 + jitter_us;
        timers.push(Reverse((start_us, i as u32, TimerKind::Start)));
        senders.push(Sender {
            id: i as u32,
            cc,
            started: false,
            next_seq: 0,
            outstanding: VecDeque::new(),
            dupacks: 0,
            srtt_us: None,
            rto_backoff: 0,
            rto_deadline: None,
            pacing_next_us: 0.0,
            timer_at: None,
            last_logged: None,
            out: FlowResult::new(i as u32, &f.protocol, start_us, duration_ms as usize),
        });
    }

    let mut sim = Sim {
        cfg: config,
        link: BottleneckLink::new(trace.clone(), capacity, config.prop_delay_ms),
        senders,
        acks: VecDeque::new(),
        timers,
        pending: Vec::new(),
        released: Vec::new(),
        end_us,
        prop_us,
        packet_bytes,
        on_wire: 0,
        queue_series: Vec::new(),
        events: 0,
    };
    sim.run();

    let link = &sim.link;
    let flows: Vec<FlowResult> = sim.senders.into_iter().map(|s| s.out).collect();
    let counters = Counters {
        sent: flows.iter().map(|f| f.sent).sum(),
        delivered: flows.iter().map(|f| f.delivered).sum(),
        dropped: link.dropped(),
        queued: link.queue_len() as u64,
        on_wire: sim.on_wire,
        acked: flows.iter().map(|f| f.acked).sum(),
        events: sim.events + sim.queue_series.len() as u64,
    };
    let capacity_bps = trace.opportunities_until(duration_ms) as f64 * packet_bytes as f64 * 8.0 / config.duration_s;
    Ok(RunResult {
        config: config.clone(),
        buffer_packets: match capacity {
            BufferCapacity::Infinite => None,
            BufferCapacity::Packets(n) => Some(n),
        },
        capacity_bps,
        packet_bytes,
        flows,
        queue_series: sim.queue_series,
        counters,
        wall_clock_s: started.elapsed().as_secs_f64(),
    })
}

pub fn run(config: &ExperimentConfig) -> Result<RunResult, EngineError> {
    let trace = config.trace.load()?;
    run_with_trace(config, Arc::new(trace))
}

/// Run the same configuration once per seed. Results come back in seed
/// order regardless of `jobs`.
pub fn run_batch(config: &ExperimentConfig, seeds: &[u64], jobs: usize) -> Result<Vec<Result<RunResult, EngineError>>, EngineError> {
    if seeds.is_empty() {
        return Err(EngineError::ConfigInvalid("run_batch needs at least one seed".into()));
    }
    config.validate()?;
    let trace = Arc::new(config.trace.load()?);
    let one = |seed: &u64| run_with_trace(&config.clone().with_seed(*seed), trace.clone());
    if jobs <= 1 {
        return Ok(seeds.iter().map(one).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| EngineError::ConfigInvalid(format!("thread pool: {e}")))?;
    Ok(pool.install(|| seeds.par_iter().map(one).collect()))
}
