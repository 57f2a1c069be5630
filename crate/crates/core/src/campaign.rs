//! Campaigns: batches of experiments expanded from a TOML file, their
//! on-disk result tree and the aggregate reports computed from it.
//!
//! ```toml
//! seed = 7
//! runs = 20
//! jobs = 4
//! duration_s = 180
//! delay_ms = 10
//! scenarios = ["cubic", "bbr", "bbr+cubic"]
//! buffers = ["inf", "bdp:2"]
//!
//! [[traces]]
//! name = "const48"
//! spec = "const:48:60000"
//!
//! [params.cubic]
//! beta = 0.7
//! ```
//!
//! Each (trace, scenario, buffer) tuple runs `runs` times into
//! `<out>/<trace>/<scenario>/<buffer>/run-<k>/`. The aggregate files
//! `summary.csv`, `harm.csv` and `significance.csv` are recomputed from
//! `manifest.csv` and those run directories alone.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cc::{make_controller, ControllerContext, Params};
use crate::engine::{mix_seed, run_with_trace, BufferSpec, ExperimentConfig, FlowSpec};
use crate::metrics::{self, harm, mean, percentile, self_harm_baseline, significance, zone, MetricKind};
use crate::result::RunMeta;
use crate::trace::{ChannelTrace, TraceSpec};

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("bad campaign file: {0}")]
    BadCampaignFile(String),
    #[error("unknown figure kind `{0}` (expected scatter, harm-bars, sweep or timeseries)")]
    UnknownFigureKind(String),
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
    #[error("bad results in {path}: {msg}")]
    BadResults { path: String, msg: String },
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CampaignError + '_ {
    move |e| CampaignError::Io { path: path.display().to_string(), msg: e.to_string() }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> CampaignError + '_ {
    move |e| CampaignError::BadResults { path: path.display().to_string(), msg: e.to_string() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceEntry {
    pub name: String,
    pub spec: String,
}

fn default_seed() -> u64 {
    1
}
fn default_runs() -> usize {
    20
}
fn default_jobs() -> usize {
    1
}
fn default_duration() -> f64 {
    180.0
}
fn default_delay() -> u64 {
    10
}
fn default_jitter() -> f64 {
    10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Campaign {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default = "default_jobs")]
    pub jobs: usize,
    #[serde(default = "default_duration")]
    pub duration_s: f64,
    #[serde(default = "default_delay")]
    pub delay_ms: u64,
    #[serde(default = "default_jitter")]
    pub start_jitter_ms: f64,
    #[serde(default)]
    pub decision_log: bool,
    #[serde(default = "crate::engine::default_true")]
    pub record_delays: bool,
    pub traces: Vec<TraceEntry>,
    /// Flows joined by `+`, e.g. `bbr+cubic`.
    pub scenarios: Vec<String>,
    pub buffers: Vec<String>,
    /// Per-protocol parameter overrides.
    #[serde(default)]
    pub params: BTreeMap<String, Params>,
}

/// One expanded experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Tuple {
    pub index: usize,
    pub trace: String,
    pub scenario: String,
    pub buffer: String,
    pub config: ExperimentConfig,
}

impl Tuple {
    pub fn rel_dir(&self) -> PathBuf {
        PathBuf::from(&self.trace).join(&self.scenario).join(buffer_dir_name(&self.buffer))
    }
}

/// `bdp:2` becomes `bdp-2` so it is safe as a path component.
pub fn buffer_dir_name(buffer: &str) -> String {
    buffer.replace(':', "-")
}

pub fn run_seed(campaign_seed: u64, tuple: usize, run: usize) -> u64 {
    mix_seed(mix_seed(campaign_seed, tuple as u64), run as u64)
}

fn valid_name(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) && s != "." && s != ".."
}

impl Campaign {
    pub fn from_toml(text: &str) -> Result<Self, CampaignError> {
        let c: Campaign = toml::from_str(text).map_err(|e| CampaignError::BadCampaignFile(e.to_string()))?;
        c.check()?;
        Ok(c)
    }

    /// Parse a campaign file; relative trace paths resolve against its
    /// directory.
    pub fn load(path: &Path) -> Result<Self, CampaignError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let mut c = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for t in &mut c.traces {
            if let Ok(TraceSpec::File { path: p }) = TraceSpec::parse(&t.spec) {
                if Path::new(&p).is_relative() {
                    t.spec = base.join(p).display().to_string();
                }
            }
        }
        Ok(c)
    }

    fn check(&self) -> Result<(), CampaignError> {
        let bad = |m: String| Err(CampaignError::BadCampaignFile(m));
        if self.traces.is_empty() {
            return bad("no traces".into());
        }
        if self.scenarios.is_empty() {
            return bad("empty protocol list".into());
        }
        if self.buffers.is_empty() {
            return bad("no buffer settings".into());
        }
        if self.runs == 0 {
            return bad("runs must be at least 1".into());
        }
        if self.jobs == 0 {
            return bad("jobs must be at least 1".into());
        }
        let mut names = BTreeSet::new();
        for t in &self.traces {
            if !valid_name(&t.name) {
                return bad(format!("trace name `{}` must be a plain path component", t.name));
            }
            if !names.insert(&t.name) {
                return bad(format!("duplicate trace name `{}`", t.name));
            }
            TraceSpec::parse(&t.spec).map_err(|e| CampaignError::BadCampaignFile(e.to_string()))?;
        }
        let mut seen = BTreeSet::new();
        for s in &self.scenarios {
            if !seen.insert(s) {
                return bad(format!("duplicate scenario `{s}`"));
            }
            for p in s.split('+') {
                let params = self.params.get(p).cloned().unwrap_or_default();
                make_controller(p, &params, ControllerContext::default())
                    .map_err(|e| CampaignError::BadCampaignFile(format!("scenario `{s}`: {e}")))?;
            }
        }
        for p in self.params.keys() {
            if !self.scenarios.iter().any(|s| s.split('+').any(|q| q == p)) {
                return bad(format!("params given for `{p}`, which no scenario uses"));
            }
        }
        let mut seen = BTreeSet::new();
        for b in &self.buffers {
            BufferSpec::parse(b).map_err(CampaignError::BadCampaignFile)?;
            if !seen.insert(buffer_dir_name(b)) {
                return bad(format!("duplicate buffer `{b}`"));
            }
        }
        Ok(())
    }

    /// All tuples in trace-major, then scenario, then buffer order.
    pub fn expand(&self) -> Vec<Tuple> {
        let mut out = Vec::new();
        for t in &self.traces {
            for s in &self.scenarios {
                for b in &self.buffers {
                    let flows = s
                        .split('+')
                        .map(|p| FlowSpec {
                            protocol: p.to_string(),
                            params: self.params.get(p).cloned().unwrap_or_default(),
                            start_time_s: 0.0,
                        })
                        .collect();
                    let config = ExperimentConfig {
                        trace: TraceSpec::parse(&t.spec).expect("checked"),
                        flows,
                        buffer: BufferSpec::parse(b).expect("checked"),
                        prop_delay_ms: self.delay_ms,
                        duration_s: self.duration_s,
                        seed: 0,
                        throughput_window_s: 1.0,
                        start_jitter_ms: self.start_jitter_ms,
                        record_delays: self.record_delays,
                        decision_log: self.decision_log,
                    };
                    out.push(Tuple { index: out.len(), trace: t.name.clone(), scenario: s.clone(), buffer: b.clone(), config });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub trace: String,
    pub scenario: String,
    pub buffer: String,
    pub run: usize,
    pub seed: u64,
    pub dir: String,
    pub status: String,
    pub error: String,
}

impl ManifestRow {
    pub fn ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignOutcome {
    pub manifest: Vec<ManifestRow>,
    pub failed: usize,
}

impl CampaignOutcome {
    /// 0 when every run succeeded, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.failed == 0 {
            0
        } else {
            2
        }
    }
}

/// Execute every run of the campaign, write the run directories, the
/// manifest and the aggregate reports. Failed runs are recorded and do not
/// stop the others.
pub fn run_campaign(campaign: &Campaign, out: &Path) -> Result<CampaignOutcome, CampaignError> {
    campaign.check()?;
    fs::create_dir_all(out).map_err(io_err(out))?;
    let tuples = campaign.expand();

    let mut traces: BTreeMap<String, Result<Arc<ChannelTrace>, String>> = BTreeMap::new();
    for t in &campaign.traces {
        let loaded = TraceSpec::parse(&t.spec).expect("checked").load().map(Arc::new).map_err(|e| e.to_string());
        traces.insert(t.name.clone(), loaded);
    }

    let jobs: Vec<(&Tuple, usize)> = tuples.iter().flat_map(|t| (0..campaign.runs).map(move |k| (t, k))).collect();
    let one = |&(tuple, k): &(&Tuple, usize)| -> ManifestRow {
        let seed = run_seed(campaign.seed, tuple.index, k);
        let rel = tuple.rel_dir().join(format!("run-{k}"));
        let mut row = ManifestRow {
            trace: tuple.trace.clone(),
            scenario: tuple.scenario.clone(),
            buffer: tuple.buffer.clone(),
            run: k,
            seed,
            dir: rel.display().to_string(),
            status: "ok".into(),
            error: String::new(),
        };
        let result = match &traces[&tuple.trace] {
            Ok(trace) => run_with_trace(&tuple.config.clone().with_seed(seed), trace.clone()).map_err(|e| e.to_string()),
            Err(e) => Err(format!("loading trace: {e}")),
        }
        .and_then(|r| r.write_dir(&out.join(&rel)).map_err(|e| format!("writing results: {e}")));
        if let Err(e) = result {
            row.status = "failed".into();
            row.error = e;
        }
        row
    };
    let manifest: Vec<ManifestRow> = if campaign.jobs <= 1 {
        jobs.iter().map(one).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(campaign.jobs)
            .build()
            .map_err(|e| CampaignError::BadCampaignFile(format!("thread pool: {e}")))?;
        pool.install(|| jobs.par_iter().map(one).collect())
    };

    let path = out.join("manifest.csv");
    let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
    for row in &manifest {
        w.serialize(row).map_err(csv_err(&path))?;
    }
    w.flush().map_err(io_err(&path))?;

    aggregate(out)?;
    let failed = manifest.iter().filter(|r| !r.ok()).count();
    Ok(CampaignOutcome { manifest, failed })
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestRow>, CampaignError> {
    let path = dir.join("manifest.csv");
    let mut r = csv::Reader::from_path(&path).map_err(csv_err(&path))?;
    r.deserialize().collect::<Result<Vec<ManifestRow>, _>>().map_err(csv_err(&path))
}

/// Per-flow figures of one run, recomputed from its directory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowRecord {
    pub trace: String,
    pub scenario: String,
    pub buffer: String,
    pub run: usize,
    pub seed: u64,
    pub flow: u32,
    pub protocol: String,
    pub mean_tput_bps: f64,
    pub mean_delay_us: Option<f64>,
    pub p95_delay_us: Option<u64>,
    pub utilization: f64,
    pub drops: u64,
    #[serde(skip)]
    pub capacity_bps: f64,
    #[serde(skip)]
    pub prop_delay_ms: u64,
}

#[derive(Debug, Deserialize)]
struct ThroughputRow {
    flow: u32,
    #[allow(dead_code)]
    second: f64,
    bits: u64,
}

#[derive(Debug, Deserialize)]
struct DelayRow {
    flow: u32,
    #[allow(dead_code)]
    seq: u64,
    sent_us: u64,
    acked_us: u64,
}

pub fn read_meta(run_dir: &Path) -> Result<RunMeta, CampaignError> {
    let path = run_dir.join("meta.json");
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(|e| CampaignError::BadResults { path: path.display().to_string(), msg: e.to_string() })
}

/// Read one run directory back into per-flow records.
pub fn read_run(root: &Path, row: &ManifestRow) -> Result<Vec<FlowRecord>, CampaignError> {
    let dir = root.join(&row.dir);
    let meta = read_meta(&dir)?;
    let n = meta.flows.len();
    let mut bits = vec![0u64; n];
    let path = dir.join("throughput.csv");
    let mut r = csv::Reader::from_path(&path).map_err(csv_err(&path))?;
    for rec in r.deserialize::<ThroughputRow>() {
        let rec = rec.map_err(csv_err(&path))?;
        *bits.get_mut(rec.flow as usize).ok_or_else(|| CampaignError::BadResults {
            path: path.display().to_string(),
            msg: format!("unknown flow {}", rec.flow),
        })? += rec.bits;
    }
    let mut delays: Vec<Vec<u64>> = vec![Vec::new(); n];
    let path = dir.join("delays.csv");
    let mut r = csv::Reader::from_path(&path).map_err(csv_err(&path))?;
    for rec in r.deserialize::<DelayRow>() {
        let rec = rec.map_err(csv_err(&path))?;
        if let Some(v) = delays.get_mut(rec.flow as usize) {
            v.push(rec.acked_us - rec.sent_us);
        }
    }
    let duration = meta.config.duration_s;
    Ok(meta
        .flows
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let d = &mut delays[i];
            d.sort_unstable();
            let mean_delay = if d.is_empty() {
                f.mean_delay_us()
            } else {
                Some(d.iter().map(|&x| x as f64).sum::<f64>() / d.len() as f64)
            };
            let tput = bits[i] as f64 / duration;
            FlowRecord {
                trace: row.trace.clone(),
                scenario: row.scenario.clone(),
                buffer: row.buffer.clone(),
                run: row.run,
                seed: row.seed,
                flow: f.flow_id,
                protocol: f.protocol.clone(),
                mean_tput_bps: tput,
                mean_delay_us: mean_delay,
                p95_delay_us: percentile(d, 95.0),
                utilization: if meta.capacity_bps > 0.0 { tput / meta.capacity_bps } else { 0.0 },
                drops: f.dropped,
                capacity_bps: meta.capacity_bps,
                prop_delay_ms: meta.config.prop_delay_ms,
            }
        })
        .collect())
}

/// Records of every successful run listed in the manifest, in manifest order.
pub fn read_records(root: &Path) -> Result<Vec<FlowRecord>, CampaignError> {
    let mut out = Vec::new();
    for row in read_manifest(root)?.iter().filter(|r| r.ok()) {
        out.extend(read_run(root, row)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HarmRow {
    pub trace: String,
    pub buffer: String,
    pub victim: String,
    pub competitor: String,
    pub metric: String,
    pub kind: String,
    pub solo_mean: f64,
    pub paired_mean: f64,
    pub harm_pct: f64,
    pub baseline_mean: Option<f64>,
    pub baseline_lo: Option<f64>,
    pub baseline_hi: Option<f64>,
    pub zone: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignificanceRow {
    pub trace: String,
    pub buffer: String,
    pub pair: String,
    pub metric: String,
    pub p_value: Option<f64>,
    pub stars: String,
    pub test_id: String,
    pub n_a: usize,
    pub n_b: usize,
}

const METRICS: [(&str, MetricKind); 2] = [("throughput", MetricKind::MoreIsBetter), ("delay", MetricKind::LessIsBetter)];

fn metric_value(r: &FlowRecord, metric: &str) -> Option<f64> {
    match metric {
        "throughput" => Some(r.mean_tput_bps),
        _ => r.mean_delay_us,
    }
}

/// Group key: (trace, buffer).
type Group<'a> = BTreeMap<(String, String), Vec<&'a FlowRecord>>;

fn groups(records: &[FlowRecord]) -> Group<'_> {
    let mut g: Group = BTreeMap::new();
    for r in records {
        g.entry((r.trace.clone(), r.buffer.clone())).or_default().push(r);
    }
    g
}

fn is_solo(scenario: &str) -> bool {
    !scenario.contains('+')
}

/// Harm of every competing scenario on each of its flows, against that
/// flow's protocol running solo on the same trace and buffer. The baseline
/// is the victim's self-harm (its `p+p` scenario) when that was run.
pub fn harm_rows(records: &[FlowRecord]) -> Vec<HarmRow> {
    let mut out = Vec::new();
    for ((trace, buffer), recs) in groups(records) {
        let scenarios: BTreeSet<&str> = recs.iter().map(|r| r.scenario.as_str()).collect();
        for scenario in scenarios.iter().filter(|s| !is_solo(s)) {
            let protos: Vec<&str> = scenario.split('+').collect();
            for (fi, victim) in protos.iter().enumerate() {
                let competitor: Vec<&str> = protos.iter().enumerate().filter(|&(j, _)| j != fi).map(|(_, p)| *p).collect();
                let competitor = competitor.join("+");
                // identical protocols are pooled so flow order does not matter
                let same: Vec<usize> = protos.iter().enumerate().filter(|(_, p)| *p == victim).map(|(j, _)| j).collect();
                if same[0] != fi {
                    continue;
                }
                for (metric, kind) in METRICS {
                    let solo: Vec<f64> = recs
                        .iter()
                        .filter(|r| r.scenario == *victim)
                        .filter_map(|r| metric_value(r, metric))
                        .collect();
                    let paired: Vec<f64> = recs
                        .iter()
                        .filter(|r| r.scenario == *scenario && same.contains(&(r.flow as usize)))
                        .filter_map(|r| metric_value(r, metric))
                        .collect();
                    if solo.is_empty() || paired.is_empty() {
                        continue;
                    }
                    let (x, y) = (mean(&solo), mean(&paired));
                    let Ok(h) = harm(x, y, kind) else { continue };
                    let self_scenario = format!("{victim}+{victim}");
                    let self_paired: Vec<f64> = recs
                        .iter()
                        .filter(|r| r.scenario == self_scenario)
                        .filter_map(|r| metric_value(r, metric))
                        .collect();
                    let baseline = self_harm_baseline(&solo, &self_paired, kind).ok();
                    out.push(HarmRow {
                        trace: trace.clone(),
                        buffer: buffer.clone(),
                        victim: victim.to_string(),
                        competitor: competitor.clone(),
                        metric: metric.to_string(),
                        kind: format!("{kind:?}"),
                        solo_mean: x,
                        paired_mean: y,
                        harm_pct: h,
                        baseline_mean: baseline.map(|b| b.mean),
                        baseline_lo: baseline.map(|b| b.ci_lo),
                        baseline_hi: baseline.map(|b| b.ci_hi),
                        zone: baseline.map(|b| zone(h, &b).as_str().to_string()).unwrap_or_default(),
                    });
                }
            }
        }
    }
    out
}

/// Welch tests between every pair of solo scenarios on the same trace and
/// buffer, over per-run means.
pub fn significance_rows(records: &[FlowRecord]) -> Vec<SignificanceRow> {
    let mut out = Vec::new();
    for ((trace, buffer), recs) in groups(records) {
        let solos: BTreeSet<&str> = recs.iter().map(|r| r.scenario.as_str()).filter(|s| is_solo(s)).collect();
        let solos: Vec<&str> = solos.into_iter().collect();
        for (i, a) in solos.iter().enumerate() {
            for b in &solos[i + 1..] {
                for (metric, _) in METRICS {
                    let sample = |p: &str| -> Vec<f64> {
                        recs.iter().filter(|r| r.scenario == p).filter_map(|r| metric_value(r, metric)).collect()
                    };
                    let (sa, sb) = (sample(a), sample(b));
                    let (p, stars) = match significance(&sa, &sb) {
                        Ok(rep) => (Some(rep.p_value), rep.stars),
                        Err(_) => (None, "degenerate".to_string()),
                    };
                    out.push(SignificanceRow {
                        trace: trace.clone(),
                        buffer: buffer.clone(),
                        pair: format!("{a} vs {b}"),
                        metric: metric.to_string(),
                        p_value: p,
                        stars,
                        test_id: metrics::WELCH_TEST_ID.to_string(),
                        n_a: sa.len(),
                        n_b: sb.len(),
                    });
                }
            }
        }
    }
    out
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<(), CampaignError> {
    let mut w = csv::WriterBuilder::new().has_headers(!rows.is_empty()).from_path(path).map_err(csv_err(path))?;
    if rows.is_empty() {
        w.write_record(header).map_err(csv_err(path))?;
    }
    for r in rows {
        w.serialize(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

const SUMMARY_HEADER: [&str; 12] =
    ["trace", "scenario", "buffer", "run", "seed", "flow", "protocol", "mean_tput_bps", "mean_delay_us", "p95_delay_us", "utilization", "drops"];
const HARM_HEADER: [&str; 13] = [
    "trace", "buffer", "victim", "competitor", "metric", "kind", "solo_mean", "paired_mean", "harm_pct", "baseline_mean", "baseline_lo",
    "baseline_hi", "zone",
];
const SIGNIFICANCE_HEADER: [&str; 9] = ["trace", "buffer", "pair", "metric", "p_value", "stars", "test_id", "n_a", "n_b"];

/// Rewrite `summary.csv`, `harm.csv` and `significance.csv` from the
/// manifest and run directories under `root`.
pub fn aggregate(root: &Path) -> Result<(), CampaignError> {
    let records = read_records(root)?;
    write_csv(&root.join("summary.csv"), &records, &SUMMARY_HEADER)?;
    write_csv(&root.join("harm.csv"), &harm_rows(&records), &HARM_HEADER)?;
    write_csv(&root.join("significance.csv"), &significance_rows(&records), &SIGNIFICANCE_HEADER)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub trace: String,
    pub multiple: f64,
    pub protocol_a: String,
    pub protocol_b: String,
    pub share_a: f64,
    pub share_b: f64,
    pub delay_a_ms: Option<f64>,
    pub delay_b_ms: Option<f64>,
    pub runs: usize,
}

/// Mean per-run capacity shares of the two flows of `scenario` at every
/// BDP-multiple buffer present in the records, sorted by multiple.
pub fn sweep_rows(records: &[FlowRecord], scenario: &str) -> Vec<SweepRow> {
    let protos: Vec<&str> = scenario.split('+').collect();
    let mut by_key: BTreeMap<(String, u64), BTreeMap<usize, Vec<&FlowRecord>>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.scenario == scenario) {
        if let Ok(BufferSpec::BdpMultiple(m)) = BufferSpec::parse(&r.buffer) {
            by_key.entry((r.trace.clone(), m.to_bits())).or_default().entry(r.run).or_default().push(r);
        }
    }
    let mut out = Vec::new();
    for ((trace, m_bits), runs) in by_key {
        let (mut sa, mut sb, mut da, mut db) = (vec![], vec![], vec![], vec![]);
        for flows in runs.values() {
            let get = |i: u32| flows.iter().find(|f| f.flow == i);
            let (Some(a), Some(b)) = (get(0), get(1)) else { continue };
            let total = a.mean_tput_bps + b.mean_tput_bps;
            if total > 0.0 {
                sa.push(a.mean_tput_bps / total);
                sb.push(b.mean_tput_bps / total);
            }
            da.extend(a.mean_delay_us);
            db.extend(b.mean_delay_us);
        }
        if sa.is_empty() {
            continue;
        }
        let ms = |v: &[f64]| (!v.is_empty()).then(|| mean(v) / 1e3);
        out.push(SweepRow {
            trace,
            multiple: f64::from_bits(m_bits),
            protocol_a: protos.first().unwrap_or(&"").to_string(),
            protocol_b: protos.get(1).unwrap_or(&"").to_string(),
            share_a: mean(&sa),
            share_b: mean(&sb),
            delay_a_ms: ms(&da),
            delay_b_ms: ms(&db),
            runs: sa.len(),
        });
    }
    out.sort_by(|a, b| a.trace.cmp(&b.trace).then(a.multiple.total_cmp(&b.multiple)));
    out
}

pub fn write_sweep(path: &Path, rows: &[SweepRow]) -> Result<(), CampaignError> {
    write_csv(
        path,
        rows,
        &["trace", "multiple", "protocol_a", "protocol_b", "share_a", "share_b", "delay_a_ms", "delay_b_ms", "runs"],
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FigureKind {
    Scatter,
    HarmBars,
    Sweep,
    Timeseries,
}

impl std::str::FromStr for FigureKind {
    type Err = CampaignError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "scatter" => Ok(Self::Scatter),
            "harm-bars" => Ok(Self::HarmBars),
            "sweep" => Ok(Self::Sweep),
            "timeseries" => Ok(Self::Timeseries),
            other => Err(CampaignError::UnknownFigureKind(other.to_string())),
        }
    }
}

fn to_csv_string<T: Serialize>(rows: &[T], header: &[&str]) -> Result<String, CampaignError> {
    let mut w = csv::WriterBuilder::new().has_headers(!rows.is_empty()).from_writer(Vec::new());
    let p = Path::new("<plotdata>");
    if rows.is_empty() {
        w.write_record(header).map_err(csv_err(p))?;
    }
    for r in rows {
        w.serialize(r).map_err(csv_err(p))?;
    }
    let bytes = w.into_inner().map_err(|e| CampaignError::BadResults { path: p.display().to_string(), msg: e.to_string() })?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[derive(Debug, Serialize)]
struct ScatterRow<'a> {
    trace: &'a str,
    scenario: &'a str,
    buffer: &'a str,
    run: usize,
    flow: u32,
    protocol: &'a str,
    delay_ms: Option<f64>,
    tput_mbps: f64,
    capacity_mbps: f64,
}

#[derive(Debug, Serialize)]
struct HarmBarRow<'a> {
    trace: &'a str,
    buffer: &'a str,
    victim: &'a str,
    protocol: &'a str,
    metric: &'a str,
    harm_pct: f64,
    baseline_lo: f64,
    baseline_hi: f64,
    zone: &'a str,
}

#[derive(Debug, Serialize)]
struct TimeseriesRow<'a> {
    trace: &'a str,
    scenario: &'a str,
    buffer: &'a str,
    run: usize,
    flow: u32,
    time_s: f64,
    cwnd: u64,
    pacing_mbps: f64,
    target_mbps: Option<f64>,
    mode: &'a str,
}

#[derive(Debug, Serialize)]
struct PlotSweepRow {
    scenario: String,
    trace: String,
    multiple: f64,
    protocol_a: String,
    protocol_b: String,
    share_a: f64,
    share_b: f64,
    delay_a_ms: Option<f64>,
    delay_b_ms: Option<f64>,
    runs: usize,
}

#[derive(Debug, Deserialize)]
struct DecisionRow {
    flow: u32,
    time_us: u64,
    cwnd: u64,
    pacing_pps: f64,
    target_pps: Option<f64>,
    #[allow(dead_code)]
    bdp_estimate: Option<f64>,
    mode: String,
}

/// Tidy plot-ready CSV for one figure family, computed from a results tree.
pub fn plotdata(root: &Path, kind: FigureKind) -> Result<String, CampaignError> {
    match kind {
        FigureKind::Scatter => {
            let records = read_records(root)?;
            let rows: Vec<ScatterRow> = records
                .iter()
                .map(|r| ScatterRow {
                    trace: &r.trace,
                    scenario: &r.scenario,
                    buffer: &r.buffer,
                    run: r.run,
                    flow: r.flow,
                    protocol: &r.protocol,
                    delay_ms: r.mean_delay_us.map(|d| d / 1e3),
                    tput_mbps: r.mean_tput_bps / 1e6,
                    capacity_mbps: r.capacity_bps / 1e6,
                })
                .collect();
            to_csv_string(
                &rows,
                &["trace", "scenario", "buffer", "run", "flow", "protocol", "delay_ms", "tput_mbps", "capacity_mbps"],
            )
        }
        FigureKind::HarmBars => {
            let records = read_records(root)?;
            let harms = harm_rows(&records);
            let rows: Vec<HarmBarRow> = harms
                .iter()
                .filter_map(|h| {
                    Some(HarmBarRow {
                        trace: &h.trace,
                        buffer: &h.buffer,
                        victim: &h.victim,
                        protocol: &h.competitor,
                        metric: &h.metric,
                        harm_pct: h.harm_pct,
                        baseline_lo: h.baseline_lo?,
                        baseline_hi: h.baseline_hi?,
                        zone: &h.zone,
                    })
                })
                .collect();
            to_csv_string(
                &rows,
                &["trace", "buffer", "victim", "protocol", "metric", "harm_pct", "baseline_lo", "baseline_hi", "zone"],
            )
        }
        FigureKind::Sweep => {
            let records = read_records(root)?;
            let scenarios: BTreeSet<&str> = records.iter().map(|r| r.scenario.as_str()).filter(|s| s.split('+').count() == 2).collect();
            let rows: Vec<PlotSweepRow> = scenarios
                .iter()
                .flat_map(|s| {
                    sweep_rows(&records, s).into_iter().map(move |r| PlotSweepRow {
                        scenario: s.to_string(),
                        trace: r.trace,
                        multiple: r.multiple,
                        protocol_a: r.protocol_a,
                        protocol_b: r.protocol_b,
                        share_a: r.share_a,
                        share_b: r.share_b,
                        delay_a_ms: r.delay_a_ms,
                        delay_b_ms: r.delay_b_ms,
                        runs: r.runs,
                    })
                })
                .collect();
            to_csv_string(
                &rows,
                &["scenario", "trace", "multiple", "protocol_a", "protocol_b", "share_a", "share_b", "delay_a_ms", "delay_b_ms", "runs"],
            )
        }
        FigureKind::Timeseries => {
            let manifest = read_manifest(root)?;
            let mut rows_owned = Vec::new();
            for row in manifest.iter().filter(|r| r.ok()) {
                let path = root.join(&row.dir).join("decisions.csv");
                if !path.exists() {
                    continue;
                }
                let mut r = csv::Reader::from_path(&path).map_err(csv_err(&path))?;
                for d in r.deserialize::<DecisionRow>() {
                    rows_owned.push((row, d.map_err(csv_err(&path))?));
                }
            }
            if rows_owned.is_empty() {
                return Err(CampaignError::BadResults {
                    path: root.display().to_string(),
                    msg: "no decision logs; run with decision_log enabled".into(),
                });
            }
            let mut packet_bits = BTreeMap::new();
            for (row, _) in &rows_owned {
                if !packet_bits.contains_key(&row.dir) {
                    let meta = read_meta(&root.join(&row.dir))?;
                    packet_bits.insert(row.dir.clone(), meta.packet_bytes as f64 * 8.0);
                }
            }
            let rows: Vec<TimeseriesRow> = rows_owned
                .iter()
                .map(|(m, d)| {
                    let bits = packet_bits[&m.dir];
                    TimeseriesRow {
                        trace: &m.trace,
                        scenario: &m.scenario,
                        buffer: &m.buffer,
                        run: m.run,
                        flow: d.flow,
                        time_s: d.time_us as f64 / 1e6,
                        cwnd: d.cwnd,
                        pacing_mbps: d.pacing_pps * bits / 1e6,
                        target_mbps: d.target_pps.map(|t| t * bits / 1e6),
                        mode: &d.mode,
                    }
                })
                .collect();
            to_csv_string(&rows, &[])
        }
    }
}
