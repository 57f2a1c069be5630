//! Acceptance suite. Each criterion prints a single PASS/FAIL line with
//! its measured values; the process fails if any criterion fails.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ccsim::campaign::{self, Campaign};
use ccsim::engine::{run, run_batch, run_with_trace, BufferSpec, ExperimentConfig, FlowSpec};
use ccsim::metrics::{self, harm, jain_index, mean, self_harm_baseline, significance, spearman, stars, summarize, MetricKind};
use ccsim::result::RunResult;
use ccsim::trace::{self, ChannelTrace, ProbeLog, TraceSpec};
use ccsim::{bdp_packets, cc};

fn verdict(id: u32, name: &str, ok: bool, detail: String) {
    println!("{} criterion {id:02} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {id} ({name}) failed: {detail}");
}

fn const48() -> TraceSpec {
    TraceSpec::Constant { rate_mbps: 48.0, duration_ms: 60_000 }
}

fn config(trace: TraceSpec, protos: &[&str], buffer: BufferSpec, secs: f64) -> ExperimentConfig {
    ExperimentConfig::new(trace, protos, buffer).with_duration(secs)
}

fn seeds(n: u64, salt: u64) -> Vec<u64> {
    (0..n).map(|i| salt * 1000 + i).collect()
}

fn batch(cfg: &ExperimentConfig, seeds: &[u64]) -> Vec<RunResult> {
    run_batch(cfg, seeds, 4).unwrap().into_iter().map(|r| r.unwrap()).collect()
}

fn flow_tput(r: &RunResult, flow: u32) -> f64 {
    summarize(r, flow).unwrap().mean_throughput_bps
}

fn criterion_01_formula_exactness() {
    let started = Instant::now();
    let mut checks = vec![
        harm(100.0, 50.0, MetricKind::MoreIsBetter).unwrap() == 50.0,
        harm(50.0, 80.0, MetricKind::LessIsBetter).unwrap() == 60.0,
        stars(0.05) == "n.s.",
        stars(0.049) == "*",
        stars(0.009) == "**",
        stars(0.0009) == "***",
        jain_index(&[1.0, 1.0, 1.0]).unwrap() == 1.0,
        jain_index(&[1.0, 0.0]).unwrap() == 0.5,
        bdp_packets(&trace::constant_trace(48.0, 60_000).unwrap(), 20.0) == 80,
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let x: f64 = rng.random_range(1e-6..1e9);
        checks.push(harm(x, x, MetricKind::MoreIsBetter).unwrap() == 0.0);
        checks.push(harm(x, x, MetricKind::LessIsBetter).unwrap() == 0.0);
    }
    let elapsed = started.elapsed().as_secs_f64();
    let passed = checks.iter().filter(|&&c| c).count();
    verdict(
        1,
        "formula exactness",
        passed == checks.len() && elapsed < 1.0,
        format!("{passed}/{} exact checks in {elapsed:.3}s", checks.len()),
    );
}

fn random_trace(rng: &mut ChaCha8Rng) -> ChannelTrace {
    let ms = rng.random_range(1..400usize);
    let max = rng.random_range(0..12u32);
    let mut counts: Vec<u32> = (0..ms).map(|_| if rng.random_bool(0.3) { 0 } else { rng.random_range(0..=max) }).collect();
    *counts.last_mut().unwrap() += 1;
    ChannelTrace::from_counts(counts, 1500).unwrap()
}

fn random_config(rng: &mut ChaCha8Rng) -> ExperimentConfig {
    let n = rng.random_range(1..=3);
    let flows = (0..n)
        .map(|_| {
            let mut f = FlowSpec::new(cc::PROTOCOLS[rng.random_range(0..cc::PROTOCOLS.len())]);
            f.start_time_s = if rng.random_bool(0.5) { 0.0 } else { rng.random_range(0.0..0.5) };
            f
        })
        .collect();
    let buffer = match rng.random_range(0..3) {
        0 => BufferSpec::Infinite,
        1 => BufferSpec::Packets(rng.random_range(1..200)),
        _ => BufferSpec::BdpMultiple(rng.random_range(0.1..10.0)),
    };
    ExperimentConfig {
        trace: TraceSpec::File { path: "<random>".into() },
        flows,
        buffer,
        prop_delay_ms: rng.random_range(0..30),
        duration_s: rng.random_range(0.6..3.0),
        seed: rng.random(),
        throughput_window_s: 1.0,
        start_jitter_ms: rng.random_range(0.0..20.0),
        record_delays: true,
        decision_log: false,
    }
}

/// Violations of conservation, per-ms capacity, the RTT floor and FIFO
/// order in one run.
fn invariant_violations(r: &RunResult, trace: &ChannelTrace) -> Vec<String> {
    let mut bad = vec![];
    let c = r.counters;
    if c.sent != c.delivered + c.dropped + c.queued + c.on_wire {
        bad.push(format!("conservation {c:?}"));
    }
    let prop_ms = r.config.prop_delay_ms;
    let prop_us = prop_ms * 1000;
    let horizon = r.flows[0].delivered_per_ms.len();
    for ms in 0..horizon {
        let got: u64 = r.flows.iter().map(|f| f.delivered_per_ms[ms] as u64).sum();
        let allowed = if (ms as u64) < prop_ms { 0 } else { trace.opportunities_at(ms as u64 - prop_ms) as u64 };
        if got > allowed {
            bad.push(format!("ms {ms}: {got} deliveries > {allowed} opportunities"));
        }
    }
    let mut all = vec![];
    for f in &r.flows {
        for s in &f.samples {
            if s.acked_us < s.sent_us + 2 * prop_us {
                bad.push(format!("flow {} seq {} rtt {} < {}", f.flow_id, s.seq, s.rtt_us(), 2 * prop_us));
            }
            all.push((s.sent_us, f.flow_id, s.seq, s.acked_us));
        }
    }
    all.sort_unstable();
    if let Some(w) = all.windows(2).find(|w| w[1].3 < w[0].3) {
        bad.push(format!("FIFO violated: {:?} acked after {:?}", w[0], w[1]));
    }
    bad
}

fn criterion_02_conservation_and_capacity() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut failures = vec![];
    let mut packets = 0;
    for i in 0..1000 {
        let trace = random_trace(&mut rng);
        let cfg = random_config(&mut rng);
        let r = run_with_trace(&cfg, Arc::new(trace.clone())).unwrap();
        packets += r.counters.sent;
        for v in invariant_violations(&r, &trace) {
            failures.push(format!("config {i}: {v}"));
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    verdict(
        2,
        "conservation and capacity",
        failures.is_empty() && elapsed < 60.0,
        format!(
            "1000 configs, {packets} packets, {} violations{} in {elapsed:.1}s",
            failures.len(),
            failures.first().map(|f| format!(" (first: {f})")).unwrap_or_default()
        ),
    );
}

fn csv_bytes(r: &RunResult) -> Vec<Vec<u8>> {
    let mut out = vec![];
    let mut b = vec![];
    r.write_delays(&mut b).unwrap();
    out.push(std::mem::take(&mut b));
    r.write_throughput(&mut b).unwrap();
    out.push(std::mem::take(&mut b));
    r.write_queue(&mut b).unwrap();
    out.push(std::mem::take(&mut b));
    r.write_decisions(&mut b).unwrap();
    out.push(b);
    out
}

fn criterion_03_determinism() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut identical = 0;
    let total = 20;
    for _ in 0..total {
        let trace = Arc::new(random_trace(&mut rng));
        let mut cfg = random_config(&mut rng);
        cfg.decision_log = true;
        let a = run_with_trace(&cfg, trace.clone()).unwrap();
        let b = run_with_trace(&cfg, trace).unwrap();
        identical += (csv_bytes(&a) == csv_bytes(&b)) as usize;
    }

    let mut cfg = config(TraceSpec::parse("step:48x2000,12x1000,96x2000").unwrap(), &["bbr", "cubic", "vivace"], BufferSpec::BdpMultiple(2.0), 8.0);
    cfg.decision_log = true;
    let s = seeds(8, 3);
    let one: Vec<_> = run_batch(&cfg, &s, 1).unwrap().into_iter().map(|r| csv_bytes(&r.unwrap())).collect();
    let four: Vec<_> = run_batch(&cfg, &s, 4).unwrap().into_iter().map(|r| csv_bytes(&r.unwrap())).collect();

    let dir = tempfile::tempdir().unwrap();
    let text = r#"
seed = 11
runs = 3
duration_s = 4
scenarios = ["cubic", "copa", "cubic+cubic", "bbr+cubic"]
buffers = ["inf", "bdp:2"]
[[traces]]
name = "steps"
spec = "step:24x1000,48x1000"
"#;
    let mut aggregates = vec![];
    for jobs in [1, 4] {
        let mut c = Campaign::from_toml(text).unwrap();
        c.jobs = jobs;
        let out = dir.path().join(format!("jobs{jobs}"));
        campaign::run_campaign(&c, &out).unwrap();
        let files: Vec<Vec<u8>> = ["manifest.csv", "summary.csv", "harm.csv", "significance.csv"]
            .iter()
            .map(|f| std::fs::read(out.join(f)).unwrap())
            .collect();
        aggregates.push(files);
    }
    let ok = identical == total && one == four && aggregates[0] == aggregates[1];
    verdict(
        3,
        "determinism",
        ok,
        format!(
            "{identical}/{total} repeated runs byte-identical; run_batch jobs 1 vs 4 identical: {}; campaign aggregates jobs 1 vs 4 identical: {}",
            one == four,
            aggregates[0] == aggregates[1]
        ),
    );
}

fn criterion_04_bufferbloat() {
    let min_rtt_us = 20_000.0;
    let cubic = run(&config(const48(), &["cubic"], BufferSpec::Infinite, 60.0)).unwrap();
    let bbr = run(&config(const48(), &["bbr"], BufferSpec::Infinite, 60.0)).unwrap();
    let (c, b) = (summarize(&cubic, 0).unwrap(), summarize(&bbr, 0).unwrap());
    let c_delay = c.mean_delay_us.unwrap();
    let b_delay = b.mean_delay_us.unwrap();
    let ok = c.utilization >= 0.90
        && c_delay >= 5.0 * min_rtt_us
        && (0.85..=1.0).contains(&b.utilization)
        && b_delay <= 3.0 * min_rtt_us
        && cubic.wall_clock_s < 10.0
        && bbr.wall_clock_s < 10.0;
    verdict(
        4,
        "bufferbloat",
        ok,
        format!(
            "cubic util {:.3} delay {:.1} ms ({:.3}s); bbr util {:.3} delay {:.1} ms ({:.3}s)",
            c.utilization,
            c_delay / 1e3,
            cubic.wall_clock_s,
            b.utilization,
            b_delay / 1e3,
            bbr.wall_clock_s
        ),
    );
}

fn criterion_05_copa_and_ledbat() {
    let runs = |p: &str| batch(&config(const48(), &[p], BufferSpec::Infinite, 60.0), &seeds(20, 5));
    let delays = |rs: &[RunResult]| -> Vec<f64> { rs.iter().map(|r| r.flows[0].mean_delay_us().unwrap()).collect() };
    let utils = |rs: &[RunResult]| -> Vec<f64> { rs.iter().map(|r| summarize(r, 0).unwrap().utilization).collect() };
    let (copa, cubic, ledbat, bbr) = (runs("copa"), runs("cubic"), runs("ledbat"), runs("bbr"));
    let sig = significance(&delays(&copa), &delays(&cubic)).unwrap();
    let copa_lower = sig.mean_a < sig.mean_b;

    let queuing: Vec<u64> = ledbat
        .iter()
        .flat_map(|r| {
            let base = 2 * r.config.prop_delay_ms * 1000;
            r.flows[0].samples.iter().map(move |s| s.rtt_us() - base)
        })
        .collect();
    let mut sorted = queuing;
    sorted.sort_unstable();
    let p95_q = metrics::percentile(&sorted, 95.0).unwrap();
    let (l_util, b_util) = (mean(&utils(&ledbat)), mean(&utils(&bbr)));
    let ok = copa_lower && sig.stars == "***" && p95_q <= 40_000 && l_util < b_util;
    verdict(
        5,
        "copa and ledbat",
        ok,
        format!(
            "copa delay {:.1} ms vs cubic {:.1} ms, p={:.2e} {}; ledbat p95 queuing {:.1} ms, util {:.3} vs bbr {:.3}",
            sig.mean_a / 1e3,
            sig.mean_b / 1e3,
            sig.p_value,
            sig.stars,
            p95_q as f64 / 1e3,
            l_util,
            b_util
        ),
    );
}

fn criterion_06_allegro_staircase() {
    let eps = 0.05;
    let mut cfg = config(const48(), &["allegro"], BufferSpec::BdpMultiple(2.0), 30.0);
    cfg.decision_log = true;
    let r = run(&cfg).unwrap();
    let decisions = &r.flows[0].decisions;
    let mut targets: Vec<f64> = decisions.iter().filter_map(|d| d.target_pps).collect();
    targets.dedup();
    let allowed = [1.0, 1.0 + eps, 1.0 - eps];
    let mut multiset: BTreeMap<String, usize> = BTreeMap::new();
    let mut worst = 0.0f64;
    let mut outside = 0;
    for w in targets.windows(2) {
        let ratio = w[1] / w[0];
        let (dev, k) = allowed.iter().map(|a| ((ratio - a).abs(), *a)).fold((f64::INFINITY, 0.0), |m, x| if x.0 < m.0 { x } else { m });
        worst = worst.max(dev);
        if dev > 1e-12 {
            outside += 1;
        }
        *multiset.entry(format!("{k}")).or_default() += 1;
    }

    // startup: the rate of each monitor interval is the previous times (1+eps)
    let startup: Vec<f64> = {
        let mut v: Vec<f64> = decisions.iter().take_while(|d| d.mode == "starting").map(|d| d.pacing_pps).collect();
        v.dedup();
        v
    };
    let staircase = startup.len() >= 10 && startup.windows(2).all(|w| ((w[1] / w[0]) - (1.0 + eps)).abs() < 1e-12);
    // delivered throughput over the same stretch never steps down by more
    // than one packet per 20 ms bin
    let end_ms = decisions.iter().find(|d| d.mode != "starting").map(|d| d.time_us / 1000).unwrap_or(0) as usize;
    let bins: Vec<u32> = r.flows[0].delivered_per_ms[..end_ms].chunks(20).map(|c| c.iter().sum()).collect();
    let bins = &bins[..bins.len().saturating_sub(1)];
    let monotone = bins.windows(2).all(|w| w[1] + 1 >= w[0]);
    let ok = outside == 0 && staircase && monotone && multiset.len() >= 2;
    verdict(
        6,
        "allegro staircase",
        ok,
        format!(
            "{} rate changes, ratio multiset {multiset:?}, max deviation {worst:.1e}; {} startup steps, throughput monotone over {} bins: {monotone}",
            targets.len().saturating_sub(1),
            startup.len(),
            bins.len()
        ),
    );
}

fn criterion_07_cubic_self_harm() {
    let solo = batch(&config(const48(), &["cubic"], BufferSpec::BdpMultiple(10.0), 60.0), &seeds(20, 7));
    let paired = batch(&config(const48(), &["cubic", "cubic"], BufferSpec::BdpMultiple(10.0), 60.0), &seeds(20, 70));
    let x: Vec<f64> = solo.iter().map(|r| flow_tput(r, 0)).collect();
    let y: Vec<f64> = paired.iter().flat_map(|r| [flow_tput(r, 0), flow_tput(r, 1)]).collect();
    let b = self_harm_baseline(&x, &y, MetricKind::MoreIsBetter).unwrap();
    verdict(
        7,
        "cubic self-harm",
        (35.0..=65.0).contains(&b.mean),
        format!("mean throughput self-harm {:.1}% (95% CI {:.1}..{:.1}, n={})", b.mean, b.ci_lo, b.ci_hi, b.n),
    );
}

fn criterion_08_bbr_cubic_buffer_sweep() {
    let trace = TraceSpec::parse("step:48x10000,24x10000,96x10000,12x10000,60x10000,36x10000").unwrap();
    let multiples = [1.0, 2.0, 5.0, 10.0, 15.0];
    let mut bbr_share = vec![];
    let mut cubic_share = vec![];
    for (i, &m) in multiples.iter().enumerate() {
        let rs = batch(&config(trace.clone(), &["bbr", "cubic"], BufferSpec::BdpMultiple(m), 60.0), &seeds(10, 80 + i as u64));
        let shares: Vec<(f64, f64)> = rs
            .iter()
            .map(|r| {
                let (a, b) = (flow_tput(r, 0), flow_tput(r, 1));
                (a / (a + b), b / (a + b))
            })
            .collect();
        bbr_share.push(mean(&shares.iter().map(|s| s.0).collect::<Vec<_>>()));
        cubic_share.push(mean(&shares.iter().map(|s| s.1).collect::<Vec<_>>()));
    }
    let rho = spearman(&multiples, &cubic_share).unwrap_or(f64::NAN);
    let ok = rho > 0.6 && bbr_share[0] > cubic_share[0] && cubic_share[4] > bbr_share[4];
    let table: Vec<String> = multiples.iter().zip(&cubic_share).map(|(m, c)| format!("{m}x:{c:.2}")).collect();
    verdict(8, "bbr-cubic buffer sweep", ok, format!("cubic share {} spearman {rho:.2}", table.join(" ")));
}

fn criterion_09_simulator_throughput() {
    let cfg = config(TraceSpec::Constant { rate_mbps: 1000.0, duration_ms: 60_000 }, &["bbr", "cubic"], BufferSpec::BdpMultiple(2.0), 180.0);
    let started = Instant::now();
    let r = run(&cfg).unwrap();
    let elapsed = started.elapsed().as_secs_f64();
    verdict(
        9,
        "simulator throughput",
        elapsed < 120.0 && r.counters.delivered > 14_000_000,
        format!("{} deliveries, {} events in {elapsed:.1}s", r.counters.delivered, r.counters.events),
    );
}

fn criterion_10_trace_tooling() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut round_trips = 0;
    for _ in 0..1000 {
        let n = rng.random_range(1..500);
        let mut t = 0u64;
        let mut stamps = vec![];
        for _ in 0..n {
            t += if rng.random_bool(0.6) { 0 } else { rng.random_range(1..50) };
            stamps.push(t);
        }
        let stamps: Vec<u64> = stamps.into_iter().map(|s| s.max(1)).collect();
        let text: String = stamps.iter().map(|s| format!("{s}\n")).collect();
        let parsed = trace::parse_trace(&text).unwrap();
        let back = trace::serialize_trace(&parsed).unwrap();
        let reparsed = trace::parse_trace(&back).unwrap();
        let same_ops = parsed.opportunities().collect::<Vec<_>>() == stamps;
        round_trips += (back == text && reparsed == parsed && same_ops) as usize;
    }
    let arrivals: Vec<u64> = (0..240_000u64).map(|i| 1_000_000 + i * 250).collect();
    let converted = trace::probe_log_to_trace(&ProbeLog::new(arrivals), 1).unwrap();
    let mbps = converted.average_capacity() / 1e6;
    let ok = round_trips == 1000 && (mbps - 48.0).abs() <= 48.0 * 0.005;
    verdict(
        10,
        "trace tooling",
        ok,
        format!("{round_trips}/1000 round trips; 250 us probe log -> {}", trace::trace_stats_line(&converted)),
    );
}

fn main() {
    let criteria: [fn(); 10] = [
        criterion_01_formula_exactness,
        criterion_02_conservation_and_capacity,
        criterion_03_determinism,
        criterion_04_bufferbloat,
        criterion_05_copa_and_ledbat,
        criterion_06_allegro_staircase,
        criterion_07_cubic_self_harm,
        criterion_08_bbr_cubic_buffer_sweep,
        criterion_09_simulator_throughput,
        criterion_10_trace_tooling,
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, c) in criteria.iter().enumerate() {
        let name = format!("criterion_{:02}", i + 1);
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        if std::panic::catch_unwind(c).is_err() {
            failed += 1;
        }
    }
    println!("acceptance: {} failed", failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
