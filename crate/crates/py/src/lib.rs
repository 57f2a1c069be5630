//! Python bindings for the simulator.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;

use ccsim::campaign::{self, Campaign};
use ccsim::engine::{BufferSpec, ExperimentConfig, FlowSpec};
use ccsim::metrics::{self, MetricKind};
use ccsim::trace::{self, ChannelTrace, TraceSpec};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// A per-millisecond delivery-opportunity trace.
#[pyclass(name = "Trace", module = "pyccsim", frozen)]
struct PyTrace {
    inner: Arc<ChannelTrace>,
}

#[pymethods]
impl PyTrace {
    /// Load a trace file or a synthetic spec such as `const:48:1000`.
    #[staticmethod]
    fn load(spec: &str) -> PyResult<Self> {
        let t = TraceSpec::parse(spec).and_then(|s| s.load()).map_err(value_err)?;
        Ok(Self { inner: Arc::new(t) })
    }

    /// Parse trace text, one millisecond timestamp per line.
    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        Ok(Self { inner: Arc::new(trace::parse_trace(text).map_err(value_err)?) })
    }

    /// Build a trace from opportunity counts per millisecond.
    #[staticmethod]
    #[pyo3(signature = (counts, packet_bytes = trace::DEFAULT_PACKET_BYTES))]
    fn from_counts(counts: Vec<u32>, packet_bytes: u32) -> PyResult<Self> {
        Ok(Self { inner: Arc::new(ChannelTrace::from_counts(counts, packet_bytes).map_err(value_err)?) })
    }

    /// Convert probe arrival times in microseconds to a trace.
    #[staticmethod]
    #[pyo3(signature = (arrivals_us, bin_ms = 1))]
    fn from_probe_log(arrivals_us: Vec<u64>, bin_ms: u64) -> PyResult<Self> {
        let log = trace::ProbeLog::new(arrivals_us);
        Ok(Self { inner: Arc::new(trace::probe_log_to_trace(&log, bin_ms).map_err(value_err)?) })
    }

    fn to_text(&self) -> PyResult<String> {
        trace::serialize_trace(&self.inner).map_err(value_err)
    }

    #[getter]
    fn duration_ms(&self) -> u64 {
        self.inner.duration_ms()
    }

    #[getter]
    fn total_opportunities(&self) -> u64 {
        self.inner.total_opportunities()
    }

    #[getter]
    fn counts(&self) -> Vec<u32> {
        self.inner.counts().to_vec()
    }

    /// Average capacity in bits per second.
    fn average_capacity(&self) -> f64 {
        self.inner.average_capacity()
    }

    /// Bandwidth-delay product in packets for a given minimum RTT.
    fn bdp_packets(&self, min_rtt_ms: f64) -> u64 {
        ccsim::bdp_packets(&self.inner, min_rtt_ms)
    }

    fn stats(&self) -> String {
        trace::trace_stats_line(&self.inner)
    }

    fn __repr__(&self) -> String {
        format!("Trace({} ms, {})", self.inner.duration_ms(), trace::trace_stats_line(&self.inner))
    }
}

/// Per-flow summary of one run.
#[pyclass(name = "FlowSummary", module = "pyccsim", frozen, get_all)]
struct PyFlowSummary {
    flow_id: u32,
    protocol: String,
    sent: u64,
    delivered: u64,
    dropped: u64,
    timeouts: u64,
    mean_throughput_bps: f64,
    throughput_series: Vec<u64>,
    utilization: f64,
    mean_delay_us: Option<f64>,
    p50_delay_us: Option<u64>,
    p95_delay_us: Option<u64>,
    p99_delay_us: Option<u64>,
    min_delay_us: Option<u64>,
}

#[pymethods]
impl PyFlowSummary {
    fn __repr__(&self) -> String {
        format!(
            "FlowSummary(flow={}, {}, util={:.3}, mean_delay_ms={})",
            self.flow_id,
            self.protocol,
            self.utilization,
            self.mean_delay_us.map_or("n/a".to_string(), |d| format!("{:.2}", d / 1e3))
        )
    }
}

/// The outcome of one simulation.
#[pyclass(name = "RunResult", module = "pyccsim", frozen)]
struct PyRunResult {
    inner: ccsim::RunResult,
}

#[pymethods]
impl PyRunResult {
    #[getter]
    fn seed(&self) -> u64 {
        self.inner.config.seed
    }

    #[getter]
    fn buffer_packets(&self) -> Option<u64> {
        self.inner.buffer_packets
    }

    #[getter]
    fn capacity_bps(&self) -> f64 {
        self.inner.capacity_bps
    }

    #[getter]
    fn wall_clock_s(&self) -> f64 {
        self.inner.wall_clock_s
    }

    /// Packet counters: sent, delivered, dropped, queued, on_wire, acked, events.
    fn counters(&self) -> BTreeMap<&'static str, u64> {
        let c = self.inner.counters;
        BTreeMap::from([
            ("sent", c.sent),
            ("delivered", c.delivered),
            ("dropped", c.dropped),
            ("queued", c.queued),
            ("on_wire", c.on_wire),
            ("acked", c.acked),
            ("events", c.events),
        ])
    }

    fn flows(&self) -> PyResult<Vec<PyFlowSummary>> {
        self.inner
            .flows
            .iter()
            .map(|f| {
                let s = metrics::summarize(&self.inner, f.flow_id).map_err(value_err)?;
                Ok(PyFlowSummary {
                    flow_id: f.flow_id,
                    protocol: f.protocol.clone(),
                    sent: f.sent,
                    delivered: f.delivered,
                    dropped: f.dropped,
                    timeouts: f.timeouts,
                    mean_throughput_bps: s.mean_throughput_bps,
                    throughput_series: s.throughput_series,
                    utilization: s.utilization,
                    mean_delay_us: s.mean_delay_us,
                    p50_delay_us: s.p50_delay_us,
                    p95_delay_us: s.p95_delay_us,
                    p99_delay_us: s.p99_delay_us,
                    min_delay_us: s.min_delay_us,
                })
            })
            .collect()
    }

    /// (seq, sent_us, acked_us) for every acked packet of one flow.
    fn delays(&self, flow: usize) -> PyResult<Vec<(u64, u64, u64)>> {
        let f = self.inner.flows.get(flow).ok_or_else(|| PyValueError::new_err(format!("no flow {flow}")))?;
        Ok(f.samples.iter().map(|s| (s.seq, s.sent_us, s.acked_us)).collect())
    }

    /// (time_us, packets) queue occupancy samples.
    fn queue(&self) -> Vec<(u64, u64)> {
        self.inner.queue_series.iter().map(|q| (q.time_us, q.packets)).collect()
    }

    fn link_utilization(&self) -> f64 {
        metrics::link_utilization(&self.inner)
    }

    /// Write delays.csv, throughput.csv, queue.csv and meta.json to `dir`.
    fn write_dir(&self, dir: PathBuf) -> PyResult<()> {
        self.inner.write_dir(&dir).map_err(|e| PyOSError::new_err(e.to_string()))
    }

    fn __repr__(&self) -> String {
        let names: Vec<&str> = self.inner.flows.iter().map(|f| f.protocol.as_str()).collect();
        format!("RunResult(seed={}, flows={:?}, delivered={})", self.inner.config.seed, names, self.inner.counters.delivered)
    }
}

#[allow(clippy::too_many_arguments)]
fn build_config(
    trace: &str,
    protocols: Vec<String>,
    buffer: &str,
    duration_s: f64,
    delay_ms: u64,
    seed: u64,
    params: Option<BTreeMap<String, BTreeMap<String, f64>>>,
    decision_log: bool,
) -> PyResult<ExperimentConfig> {
    let spec = TraceSpec::parse(trace).map_err(value_err)?;
    let buffer = BufferSpec::parse(buffer).map_err(PyValueError::new_err)?;
    let params = params.unwrap_or_default();
    let mut cfg = ExperimentConfig::new(spec, &[], buffer).with_duration(duration_s).with_seed(seed);
    cfg.flows = protocols
        .iter()
        .map(|p| {
            let mut f = FlowSpec::new(p);
            f.params = params.get(p).cloned().unwrap_or_default();
            f
        })
        .collect();
    cfg.prop_delay_ms = delay_ms;
    cfg.decision_log = decision_log;
    cfg.validate().map_err(value_err)?;
    Ok(cfg)
}

/// Run one simulation. `protocols` lists one entry per competing flow.
#[pyfunction]
#[pyo3(signature = (trace, protocols, buffer = "inf", duration_s = 180.0, delay_ms = 10, seed = 1, params = None, decision_log = false))]
#[allow(clippy::too_many_arguments)]
fn run(
    py: Python<'_>,
    trace: &str,
    protocols: Vec<String>,
    buffer: &str,
    duration_s: f64,
    delay_ms: u64,
    seed: u64,
    params: Option<BTreeMap<String, BTreeMap<String, f64>>>,
    decision_log: bool,
) -> PyResult<PyRunResult> {
    let cfg = build_config(trace, protocols, buffer, duration_s, delay_ms, seed, params, decision_log)?;
    let r = py.detach(|| ccsim::run(&cfg)).map_err(value_err)?;
    Ok(PyRunResult { inner: r })
}

/// Run the same scenario once per seed, in seed order.
#[pyfunction]
#[pyo3(signature = (trace, protocols, seeds, buffer = "inf", duration_s = 180.0, delay_ms = 10, jobs = 1, params = None))]
#[allow(clippy::too_many_arguments)]
fn run_batch(
    py: Python<'_>,
    trace: &str,
    protocols: Vec<String>,
    seeds: Vec<u64>,
    buffer: &str,
    duration_s: f64,
    delay_ms: u64,
    jobs: usize,
    params: Option<BTreeMap<String, BTreeMap<String, f64>>>,
) -> PyResult<Vec<PyRunResult>> {
    let cfg = build_config(trace, protocols, buffer, duration_s, delay_ms, 0, params, false)?;
    let results = py.detach(|| ccsim::run_batch(&cfg, &seeds, jobs)).map_err(value_err)?;
    results.into_iter().map(|r| r.map(|inner| PyRunResult { inner }).map_err(value_err)).collect()
}

/// Run a TOML campaign file into `out`. Returns the CLI exit code (0 or 2).
#[pyfunction]
fn run_campaign(py: Python<'_>, path: PathBuf, out: PathBuf) -> PyResult<i32> {
    let c = Campaign::load(&path).map_err(value_err)?;
    let outcome = py.detach(|| campaign::run_campaign(&c, &out)).map_err(value_err)?;
    Ok(outcome.exit_code())
}

fn metric_kind(more_is_better: bool) -> MetricKind {
    if more_is_better {
        MetricKind::MoreIsBetter
    } else {
        MetricKind::LessIsBetter
    }
}

/// Harm in percent of a solo value `x` against a contended value `y`.
#[pyfunction]
#[pyo3(signature = (x, y, more_is_better = true))]
fn harm(x: f64, y: f64, more_is_better: bool) -> PyResult<f64> {
    metrics::harm(x, y, metric_kind(more_is_better)).map_err(value_err)
}

#[pyfunction]
fn jain_index(throughputs: Vec<f64>) -> PyResult<f64> {
    metrics::jain_index(&throughputs).map_err(value_err)
}

#[pyfunction]
fn stars(p: f64) -> &'static str {
    metrics::stars(p)
}

/// Welch's t-test between two samples; returns a dict of the report fields.
#[pyfunction]
fn significance(a: Vec<f64>, b: Vec<f64>) -> PyResult<BTreeMap<&'static str, Py<PyAny>>> {
    let r = metrics::significance(&a, &b).map_err(value_err)?;
    Python::attach(|py| {
        Ok(BTreeMap::from([
            ("p_value", r.p_value.into_pyobject(py)?.into_any().unbind()),
            ("stars", r.stars.into_pyobject(py)?.into_any().unbind()),
            ("test_id", r.test_id.into_pyobject(py)?.into_any().unbind()),
            ("n_a", r.n_a.into_pyobject(py)?.into_any().unbind()),
            ("n_b", r.n_b.into_pyobject(py)?.into_any().unbind()),
            ("mean_a", r.mean_a.into_pyobject(py)?.into_any().unbind()),
            ("mean_b", r.mean_b.into_pyobject(py)?.into_any().unbind()),
        ]))
    })
}

/// Spearman rank correlation; None when either side is constant.
#[pyfunction]
fn spearman(x: Vec<f64>, y: Vec<f64>) -> Option<f64> {
    metrics::spearman(&x, &y)
}

#[pyfunction]
fn protocols() -> Vec<&'static str> {
    ccsim::cc::PROTOCOLS.to_vec()
}

#[pymodule]
fn pyccsim(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTrace>()?;
    m.add_class::<PyRunResult>()?;
    m.add_class::<PyFlowSummary>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(run_batch, m)?)?;
    m.add_function(wrap_pyfunction!(run_campaign, m)?)?;
    m.add_function(wrap_pyfunction!(harm, m)?)?;
    m.add_function(wrap_pyfunction!(jain_index, m)?)?;
    m.add_function(wrap_pyfunction!(stars, m)?)?;
    m.add_function(wrap_pyfunction!(significance, m)?)?;
    m.add_function(wrap_pyfunction!(spearman, m)?)?;
    m.add_function(wrap_pyfunction!(protocols, m)?)?;
    Ok(())
}
