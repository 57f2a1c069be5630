//! Trace-driven discrete-event simulator for comparing congestion-control
//! algorithms over variable-rate bottleneck links.
//!
//! A run replays a millisecond-granularity delivery trace through a
//! DropTail queue, drives one or more bulk flows through it and records
//! per-packet delays, per-millisecond deliveries and queue occupancy.
//! [`metrics`] turns those records into throughput, delay, harm, fairness
//! and significance figures; [`campaign`] batches runs and writes reports.

pub mod campaign;
pub mod cli;
pub mod cc;
pub mod engine;
pub mod link;
pub mod metrics;
pub mod result;
pub mod trace;

pub use cc::{make_controller, CcError, CongestionController, ControllerContext, Params};
pub use engine::{run, run_batch, run_with_trace, BufferSpec, EngineError, ExperimentConfig, FlowSpec};
pub use link::{bdp_packets, BottleneckLink, BufferCapacity, Packet};
pub use metrics::{harm, jain_index, significance, stars, MetricKind, MetricsError};
pub use result::RunResult;
pub use trace::{ChannelTrace, TraceError, TraceSpec};
