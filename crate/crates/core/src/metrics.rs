//! Throughput, delay, harm, fairness and significance.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::result::RunResult;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no flow with id {0}")]
    UnknownFlow(u32),
    #[error("window must be positive, got {0}")]
    InvalidWindow(f64),
    #[error("harm is undefined for a zero baseline")]
    ZeroBaseline,
    #[error("jain index is undefined when every throughput is zero")]
    AllZero,
    #[error("jain index needs at least one throughput")]
    Empty,
    #[error("samples are degenerate: {0}")]
    DegenerateSamples(String),
    #[error("need at least one solo and one paired run")]
    InsufficientRuns,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MetricKind {
    MoreIsBetter,
    LessIsBetter,
}

/// Delivered bits per window `[k*w, (k+1)*w)` of receiver arrival time.
pub fn throughput_series(result: &RunResult, flow_id: u32, window_s: f64) -> Result<Vec<u64>, MetricsError> {
    if !(window_s.is_finite() && window_s > 0.0) {
        return Err(MetricsError::InvalidWindow(window_s));
    }
    let flow = result.flows.iter().find(|f| f.flow_id == flow_id).ok_or(MetricsError::UnknownFlow(flow_id))?;
    let bits_per_packet = result.packet_bytes as u64 * 8;
    let n = (result.config.duration_s / window_s - 1e-9).ceil().max(1.0) as usize;
    let mut series = vec![0u64; n];
    for (ms, &count) in flow.delivered_per_ms.iter().enumerate() {
        if count > 0 {
            let k = ((ms as f64 / 1000.0) / window_s + 1e-9).floor() as usize;
            series[k.min(n - 1)] += count as u64 * bits_per_packet;
        }
    }
    Ok(series)
}

/// Nearest-rank percentile of sorted data, `q` in [0, 100].
pub fn percentile(sorted: &[u64], q: f64) -> Option<u64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = ((q / 100.0) * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSummary {
    pub flow_id: u32,
    pub protocol: String,
    pub mean_throughput_bps: f64,
    pub throughput_series: Vec<u64>,
    pub mean_delay_us: Option<f64>,
    pub p50_delay_us: Option<u64>,
    pub p95_delay_us: Option<u64>,
    pub p99_delay_us: Option<u64>,
    pub min_delay_us: Option<u64>,
    pub utilization: f64,
    pub dropped: u64,
}

/// Summary of one flow. Throughput is averaged over the whole run and
/// utilization is relative to the run's average trace capacity.
pub fn summarize(result: &RunResult, flow_id: u32) -> Result<FlowSummary, MetricsError> {
    let series = throughput_series(result, flow_id, result.config.throughput_window_s)?;
    let flow = result.flows.iter().find(|f| f.flow_id == flow_id).ok_or(MetricsError::UnknownFlow(flow_id))?;
    let bits: u64 = series.iter().sum();
    let mean_tput = bits as f64 / result.config.duration_s;
    let mut delays: Vec<u64> = flow.samples.iter().map(|s| s.rtt_us()).collect();
    delays.sort_unstable();
    Ok(FlowSummary {
        flow_id,
        protocol: flow.protocol.clone(),
        mean_throughput_bps: mean_tput,
        throughput_series: series,
        mean_delay_us: flow.mean_delay_us(),
        p50_delay_us: percentile(&delays, 50.0),
        p95_delay_us: percentile(&delays, 95.0),
        p99_delay_us: percentile(&delays, 99.0),
        min_delay_us: (flow.acked > 0).then_some(flow.delay_min_us),
        utilization: if result.capacity_bps > 0.0 { mean_tput / result.capacity_bps } else { 0.0 },
        dropped: flow.dropped,
    })
}

/// Total delivered bits over capacity, all flows together.
pub fn link_utilization(result: &RunResult) -> f64 {
    if result.capacity_bps <= 0.0 {
        return 0.0;
    }
    let bits = result.counters.delivered as f64 * result.packet_bytes as f64 * 8.0;
    bits / result.config.duration_s / result.capacity_bps
}

/// Percent degradation of `y` relative to the solo value `x`.
pub fn harm(x: f64, y: f64, kind: MetricKind) -> Result<f64, MetricsError> {
    if x == 0.0 {
        return Err(MetricsError::ZeroBaseline);
    }
    Ok(match kind {
        MetricKind::MoreIsBetter => (x - y) / x * 100.0,
        MetricKind::LessIsBetter => (y - x) / x * 100.0,
    })
}

pub fn jain_index(throughputs: &[f64]) -> Result<f64, MetricsError> {
    if throughputs.is_empty() {
        return Err(MetricsError::Empty);
    }
    let sum: f64 = throughputs.iter().sum();
    let sq: f64 = throughputs.iter().map(|x| x * x).sum();
    if sq == 0.0 {
        return Err(MetricsError::AllZero);
    }
    Ok(sum * sum / (throughputs.len() as f64 * sq))
}

pub fn stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        "n.s."
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

pub const WELCH_TEST_ID: &str = "welch-t-two-sided";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceReport {
    pub p_value: f64,
    pub stars: String,
    pub test_id: String,
    pub n_a: usize,
    pub n_b: usize,
    pub mean_a: f64,
    pub mean_b: f64,
}

/// Welch's two-sided t-test.
pub fn significance(a: &[f64], b: &[f64]) -> Result<SignificanceReport, MetricsError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(MetricsError::DegenerateSamples("each sample needs at least two values".into()));
    }
    let (ma, mb) = (mean(a), mean(b));
    let (va, vb) = (variance(a) / a.len() as f64, variance(b) / b.len() as f64);
    let se2 = va + vb;
    if se2.is_nan() || se2 <= 0.0 {
        return Err(MetricsError::DegenerateSamples("both samples have zero variance".into()));
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (va * va / (a.len() as f64 - 1.0) + vb * vb / (b.len() as f64 - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| MetricsError::DegenerateSamples(e.to_string()))?;
    let p = (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0);
    Ok(SignificanceReport {
        p_value: p,
        stars: stars(p).to_string(),
        test_id: WELCH_TEST_ID.to_string(),
        n_a: a.len(),
        n_b: b.len(),
        mean_a: ma,
        mean_b: mb,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineSummary {
    pub mean: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub n: usize,
}

/// Mean with a 95% Student-t confidence interval. A single value has a
/// zero-width interval.
pub fn mean_ci95(xs: &[f64]) -> Option<BaselineSummary> {
    if xs.is_empty() {
        return None;
    }
    let m = mean(xs);
    if xs.len() < 2 {
        return Some(BaselineSummary { mean: m, ci_lo: m, ci_hi: m, n: 1 });
    }
    let t = StudentsT::new(0.0, 1.0, xs.len() as f64 - 1.0).ok()?.inverse_cdf(0.975);
    let half = t * (variance(xs) / xs.len() as f64).sqrt();
    Some(BaselineSummary { mean: m, ci_lo: m - half, ci_hi: m + half, n: xs.len() })
}

/// Harm of every paired-run flow against the mean solo value.
pub fn self_harm_baseline(solo: &[f64], paired: &[f64], kind: MetricKind) -> Result<BaselineSummary, MetricsError> {
    if solo.is_empty() || paired.is_empty() {
        return Err(MetricsError::InsufficientRuns);
    }
    let x = mean(solo);
    let harms = paired.iter().map(|&y| harm(x, y, kind)).collect::<Result<Vec<_>, _>>()?;
    Ok(mean_ci95(&harms).expect("nonempty"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Zone {
    Green,
    Red,
}

impl Zone {
    pub fn as_str(&self) -> &'static str {
        match self {
            Zone::Green => "green",
            Zone::Red => "red",
        }
    }
}

pub fn zone(harm_pct: f64, baseline: &BaselineSummary) -> Zone {
    if harm_pct > baseline.ci_hi {
        Zone::Red
    } else {
        Zone::Green
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarmReport {
    pub kind: MetricKind,
    pub x: f64,
    pub y: f64,
    pub harm_pct: f64,
    pub baseline: Option<BaselineSummary>,
}

impl HarmReport {
    pub fn new(x: f64, y: f64, kind: MetricKind, baseline: Option<BaselineSummary>) -> Result<Self, MetricsError> {
        Ok(Self { kind, x, y, harm_pct: harm(x, y, kind)?, baseline })
    }

    pub fn zone(&self) -> Option<Zone> {
        self.baseline.as_ref().map(|b| zone(self.harm_pct, b))
    }
}

/// Average ranks, ties sharing the mean of their positions.
fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation. `None` when either side is constant or the
/// lengths differ.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let (mx, my) = (mean(&rx), mean(&ry));
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my) * (b - my)).sum();
    if vx == 0.0 || vy == 0.0 {
        return None;
    }
    Some(cov / (vx * vy).sqrt())
}
