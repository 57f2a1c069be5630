//! Run outputs and their on-disk form.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::ExperimentConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DelaySample {
    pub seq: u64,
    pub sent_us: u64,
    pub acked_us: u64,
}

impl DelaySample {
    pub fn rtt_us(&self) -> u64 {
        self.acked_us - self.sent_us
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueSample {
    pub time_us: u64,
    pub packets: u64,
}

/// One controller decision, logged whenever cwnd, pacing rate, target
/// rate or mode changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub time_us: u64,
    pub cwnd: u64,
    pub pacing_pps: f64,
    pub target_pps: Option<f64>,
    pub bdp_estimate: Option<f64>,
    pub mode: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowResult {
    pub flow_id: u32,
    pub protocol: String,
    pub start_us: u64,
    pub sent: u64,
    /// Packets that reached the receiver before the end of the run.
    pub delivered: u64,
    pub acked: u64,
    pub dropped: u64,
    pub timeouts: u64,
    pub declared_lost: u64,
    pub delay_sum_us: u128,
    pub delay_min_us: u64,
    #[serde(skip)]
    pub delivered_per_ms: Vec<u32>,
    #[serde(skip)]
    pub samples: Vec<DelaySample>,
    #[serde(skip)]
    pub decisions: Vec<Decision>,
}

impl FlowResult {
    pub(crate) fn new(flow_id: u32, protocol: &str, start_us: u64, duration_ms: usize) -> Self {
        Self {
            flow_id,
            protocol: protocol.to_string(),
            start_us,
            sent: 0,
            delivered: 0,
            acked: 0,
            dropped: 0,
            timeouts: 0,
            declared_lost: 0,
            delay_sum_us: 0,
            delay_min_us: u64::MAX,
            delivered_per_ms: vec![0; duration_ms],
            samples: Vec::new(),
            decisions: Vec::new(),
        }
    }

    pub fn mean_delay_us(&self) -> Option<f64> {
        (self.acked > 0).then(|| self.delay_sum_us as f64 / self.acked as f64)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub queued: u64,
    /// Released by the link but not yet at the receiver when the run ended.
    pub on_wire: u64,
    pub acked: u64,
    pub events: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub config: ExperimentConfig,
    pub buffer_packets: Option<u64>,
    /// Average trace capacity over the run window, looping included.
    pub capacity_bps: f64,
    pub packet_bytes: u32,
    pub flows: Vec<FlowResult>,
    pub queue_series: Vec<QueueSample>,
    pub counters: Counters,
    pub wall_clock_s: f64,
}

/// Contents of `meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub buffer_packets: Option<u64>,
    pub capacity_bps: f64,
    pub packet_bytes: u32,
    pub counters: Counters,
    pub flows: Vec<FlowResult>,
    pub wall_clock_s: f64,
}

impl RunResult {
    pub fn meta(&self) -> RunMeta {
        RunMeta {
            config: self.config.clone(),
            seed: self.config.seed,
            buffer_packets: self.buffer_packets,
            capacity_bps: self.capacity_bps,
            packet_bytes: self.packet_bytes,
            counters: self.counters,
            flows: self.flows.clone(),
            wall_clock_s: self.wall_clock_s,
        }
    }

    pub fn write_delays<W: Write>(&self, w: &mut W) -> io::Result<()> {
        writeln!(w, "flow,seq,sent_us,acked_us")?;
        for f in &self.flows {
            for s in &f.samples {
                writeln!(w, "{},{},{},{}", f.flow_id, s.seq, s.sent_us, s.acked_us)?;
            }
        }
        Ok(())
    }

    pub fn write_throughput<W: Write>(&self, w: &mut W) -> io::Result<()> {
        writeln!(w, "flow,second,bits")?;
        let window = self.config.throughput_window_s;
        for f in &self.flows {
            let series = crate::metrics::throughput_series(self, f.flow_id, window).expect("flow exists");
            for (k, bits) in series.iter().enumerate() {
                writeln!(w, "{},{},{}", f.flow_id, k as f64 * window, bits)?;
            }
        }
        Ok(())
    }

    pub fn write_queue<W: Write>(&self, w: &mut W) -> io::Result<()> {
        writeln!(w, "time_us,packets")?;
        for q in &self.queue_series {
            writeln!(w, "{},{}", q.time_us, q.packets)?;
        }
        Ok(())
    }

    pub fn write_decisions<W: Write>(&self, w: &mut W) -> io::Result<()> {
        writeln!(w, "flow,time_us,cwnd,pacing_pps,target_pps,bdp_estimate,mode")?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for f in &self.flows {
            for d in &f.decisions {
                writeln!(
                    w,
                    "{},{},{},{},{},{},{}",
                    f.flow_id,
                    d.time_us,
                    d.cwnd,
                    d.pacing_pps,
                    opt(d.target_pps),
                    opt(d.bdp_estimate),
                    d.mode
                )?;
            }
        }
        Ok(())
    }

    /// Write `delays.csv`, `throughput.csv`, `queue.csv`, `meta.json` and,
    /// when the decision log is enabled, `decisions.csv` into `dir`.
    /// `meta.json` is the only file carrying wall-clock time.
    pub fn write_dir(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        let file = |name: &str| fs::File::create(dir.join(name)).map(BufWriter::new);
        let mut w = file("delays.csv")?;
        self.write_delays(&mut w)?;
        w.flush()?;
        let mut w = file("throughput.csv")?;
        self.write_throughput(&mut w)?;
        w.flush()?;
        let mut w = file("queue.csv")?;
        self.write_queue(&mut w)?;
        w.flush()?;
        if self.config.decision_log {
            let mut w = file("decisions.csv")?;
            self.write_decisions(&mut w)?;
            w.flush()?;
        }
        let meta = serde_json::to_string_pretty(&self.meta()).map_err(io::Error::other)?;
        fs::write(dir.join("meta.json"), meta + "\n")
    }
}
