use std::collections::VecDeque;

use super::{CcError, CongestionController, Params, ParamReader, INITIAL_CWND};

const MIN_CWND: f64 = 2.0;
const CURRENT_FILTER: usize = 4;
const BASE_HISTORY: usize = 10;
const BASE_BUCKET_US: u64 = 60_000_000;
/// Slow start ends once queuing delay passes this fraction of the target.
const SLOW_START_EXIT: f64 = 0.75;
const SLOWDOWN_CWND: f64 = 2.0;
const SLOWDOWN_RTTS: u64 = 2;
/// Gap between slowdowns, in multiples of the last slowdown's length.
const SLOWDOWN_SPACING: u64 = 9;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Phase {
    SlowStart,
    Linear { next_slowdown_us: Option<u64> },
    Frozen { since_us: u64, until_us: u64, saved_cwnd: f64 },
    Ramping { since_us: u64, saved_cwnd: f64 },
}

/// LEDBAT with the minimum RTT standing in for the base one-way delay.
///
/// With `plusplus` set (the default) the LEDBAT++ extensions apply: an
/// initial slow start, a gain scaled down by the base delay, multiplicative
/// decrease above target and periodic slowdowns that keep the base delay
/// estimate fresh. Without it this is the plain linear controller.
#[derive(Debug, Clone)]
pub struct Ledbat {
    target_us: f64,
    gain: f64,
    allowed_increase: f64,
    plusplus: bool,
    phase: Phase,
    cwnd: f64,
    /// Per-minute minima, newest last.
    base_history: VecDeque<(u64, u64)>,
    current: VecDeque<u64>,
    flight: u64,
    last_sent: Option<u64>,
    recovery_until: Option<u64>,
}

impl Ledbat {
    pub fn new(params: &Params) -> Result<Self, CcError> {
        let mut r = ParamReader::new("ledbat", params);
        let target_ms = r.get("target_ms", 25.0, |v| v > 0.0)?;
        let gain = r.get("gain", 1.0, |v| v > 0.0)?;
        let allowed_increase = r.get("allowed_increase", 1.0, |v| v >= 0.0)?;
        let cwnd = r.get("initial_cwnd", INITIAL_CWND, |v| v >= 1.0)?;
        let plusplus = r.get("plusplus", 1.0, |v| v == 0.0 || v == 1.0)? == 1.0;
        r.finish()?;
        Ok(Self {
            target_us: target_ms * 1000.0,
            gain,
            allowed_increase,
            plusplus,
            phase: if plusplus { Phase::SlowStart } else { Phase::Linear { next_slowdown_us: None } },
            cwnd,
            base_history: VecDeque::new(),
            current: VecDeque::new(),
            flight: 0,
            last_sent: None,
            recovery_until: None,
        })
    }

    pub fn cwnd(&self) -> f64 {
        self.cwnd
    }

    pub fn base_delay_us(&self) -> Option<u64> {
        self.base_history.iter().map(|&(_, d)| d).min()
    }

    pub fn queuing_delay_us(&self) -> Option<u64> {
        let current = self.current.iter().min()?;
        Some(current.saturating_sub(self.base_delay_us()?))
    }

    /// Smallest delay in the current filter, the RTT used for scheduling.
    fn current_rtt_us(&self) -> u64 {
        self.current.iter().copied().min().unwrap_or(0)
    }

    /// `gain / min(16, ceil(2 target / base))`.
    fn plusplus_gain(&self) -> f64 {
        let base = self.base_delay_us().unwrap_or(1).max(1) as f64;
        self.gain / (2.0 * self.target_us / base).ceil().clamp(1.0, 16.0)
    }

    fn end_ramp(&mut self, since_us: u64, now_us: u64) {
        let took = now_us.saturating_sub(since_us).max(1);
        self.phase = Phase::Linear { next_slowdown_us: Some(now_us + SLOWDOWN_SPACING * took) };
    }

    fn record_delay(&mut self, delay_us: u64, now_us: u64) {
        let bucket = now_us / BASE_BUCKET_US;
        match self.base_history.back_mut() {
            Some((b, d)) if *b == bucket => *d = (*d).min(delay_us),
            _ => {
                self.base_history.push_back((bucket, delay_us));
                if self.base_history.len() > BASE_HISTORY {
                    self.base_history.pop_front();
                }
            }
        }
        self.current.push_back(delay_us);
        if self.current.len() > CURRENT_FILTER {
            self.current.pop_front();
        }
    }
}

impl CongestionController for Ledbat {
    fn name(&self) -> &'static str {
        "ledbat"
    }

    fn on_send(&mut self, seq: u64, _now_us: u64) {
        self.flight += 1;
        self.last_sent = Some(seq);
    }

    fn on_ack(&mut self, _seq: u64, rtt_us: u64, now_us: u64) {
        self.record_delay(rtt_us, now_us);
        let queuing = self.queuing_delay_us().unwrap_or(0) as f64;
        let flight = self.flight as f64;
        self.flight = self.flight.saturating_sub(1);
        let rtt = self.current_rtt_us();
        match self.phase {
            Phase::SlowStart | Phase::Ramping { .. } => {
                let cap = match self.phase {
                    Phase::Ramping { saved_cwnd, .. } => saved_cwnd,
                    _ => f64::INFINITY,
                };
                if queuing > SLOW_START_EXIT * self.target_us || self.cwnd + 1.0 >= cap {
                    self.cwnd = (self.cwnd + 1.0).min(cap);
                    match self.phase {
                        Phase::Ramping { since_us, .. } => self.end_ramp(since_us, now_us),
                        _ => self.phase = Phase::Linear { next_slowdown_us: Some(now_us + SLOWDOWN_RTTS * rtt) },
                    }
                } else {
                    self.cwnd += 1.0;
                }
            }
            Phase::Frozen { since_us, until_us, saved_cwnd } => {
                if now_us >= until_us {
                    self.phase = Phase::Ramping { since_us, saved_cwnd };
                }
                return;
            }
            Phase::Linear { next_slowdown_us } => {
                if self.plusplus && next_slowdown_us.is_some_and(|t| now_us >= t) {
                    self.phase = Phase::Frozen {
                        since_us: now_us,
                        until_us: now_us + SLOWDOWN_RTTS * rtt,
                        saved_cwnd: self.cwnd,
                    };
                    self.cwnd = SLOWDOWN_CWND;
                    return;
                }
                let off_target = (self.target_us - queuing) / self.target_us;
                if !self.plusplus {
                    self.cwnd += self.gain * off_target / self.cwnd;
                } else if off_target >= 0.0 {
                    self.cwnd += self.plusplus_gain() * off_target / self.cwnd;
                } else {
                    // per RTT: W += gain - W (delay/target - 1), at most W/2 down
                    self.cwnd += self.plusplus_gain() / self.cwnd - (-off_target).min(0.5);
                }
            }
        }
        self.cwnd = self.cwnd.min(flight + self.allowed_increase).max(MIN_CWND);
    }

    fn on_loss(&mut self, seq: u64, now_us: u64) {
        self.flight = self.flight.saturating_sub(1);
        if self.recovery_until.is_some_and(|r| seq <= r) {
            return;
        }
        self.cwnd = (self.cwnd / 2.0).max(MIN_CWND);
        self.recovery_until = Some(self.last_sent.unwrap_or(seq).max(seq));
        match self.phase {
            Phase::SlowStart => self.phase = Phase::Linear { next_slowdown_us: Some(now_us + SLOWDOWN_RTTS * self.current_rtt_us()) },
            Phase::Ramping { since_us, .. } => self.end_ramp(since_us, now_us),
            _ => {}
        }
    }

    fn on_timeout(&mut self, now_us: u64) {
        self.flight = 0;
        self.cwnd = 1.0;
        self.recovery_until = self.last_sent;
        if let Phase::Frozen { since_us, saved_cwnd, .. } | Phase::Ramping { since_us, saved_cwnd } = self.phase {
            self.phase = Phase::Ramping { since_us, saved_cwnd };
            self.end_ramp(since_us, now_us);
        }
    }

    fn cwnd_packets(&self) -> u64 {
        (self.cwnd.floor() as u64).max(1)
    }

    fn pacing_rate_pps(&self) -> f64 {
        0.0
    }

    fn mode(&self) -> &'static str {
        match self.phase {
            Phase::SlowStart => "slow_start",
            Phase::Linear { .. } => "linear",
            Phase::Frozen { .. } => "slowdown",
            Phase::Ramping { .. } => "ramp",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear() -> Ledbat {
        Ledbat::new(&[("plusplus".to_string(), 0.0)].into_iter().collect()).unwrap()
    }

    #[test]
    fn backs_off_above_target() {
        let mut l = linear();
        for s in 0..100 {
            l.on_send(s, 0);
        }
        l.on_ack(0, 10_000, 10_000);
        for s in 1..=3 {
            l.on_ack(s, 40_000, 40_000);
        }
        let before = l.cwnd();
        l.on_ack(4, 40_000, 41_000);
        // off_target = (25 - 30) / 25 < 0
        assert_eq!(l.queuing_delay_us(), Some(30_000));
        assert!(l.cwnd() < before);
    }

    #[test]
    fn grows_below_target() {
        let mut l = linear();
        for s in 0..100 {
            l.on_send(s, 0);
        }
        let before = l.cwnd();
        for s in 0..5 {
            l.on_ack(s, 20_000, 20_000);
        }
        assert!(l.cwnd() > before);
        assert!(l.cwnd() - before <= 5.0 / before + 1e-9);
    }

    #[test]
    fn window_limited_by_flight_size() {
        let mut l = linear();
        l.on_send(0, 0);
        l.on_ack(0, 20_000, 20_000);
        assert!(l.cwnd() <= 2.0);
    }

    #[test]
    fn base_delay_ages_out_after_ten_minutes() {
        let mut l = linear();
        l.on_ack(0, 10_000, 0);
        for minute in 1..=10 {
            l.on_ack(minute, 30_000, minute * BASE_BUCKET_US);
        }
        assert_eq!(l.base_delay_us(), Some(30_000));
    }

    #[test]
    fn slow_start_exits_near_target() {
        let mut l = Ledbat::new(&Params::new()).unwrap();
        let mut seq = 0;
        for s in 0..1000 {
            l.on_send(s, 0);
        }
        l.on_ack(seq, 20_000, 20_000);
        seq += 1;
        let before = l.cwnd();
        l.on_ack(seq, 25_000, 21_000);
        seq += 1;
        assert_eq!(l.cwnd(), before + 1.0);
        assert_eq!(l.mode(), "slow_start");
        // 20 ms queuing > 0.75 * 25 ms
        for _ in 0..4 {
            l.on_ack(seq, 40_000, 22_000);
            seq += 1;
        }
        assert_eq!(l.mode(), "linear");
    }

    #[test]
    fn periodic_slowdown_freezes_then_ramps() {
        let mut l = Ledbat::new(&Params::new()).unwrap();
        for s in 0..100_000 {
            l.on_send(s, 0);
        }
        let mut now = 20_000;
        let mut seq = 0;
        let mut modes = vec![];
        while now < 2_000_000 {
            // queuing delay grows with the window beyond 80 packets
            let rtt = 20_000 + ((l.cwnd() - 80.0).max(0.0) * 250.0) as u64;
            l.on_ack(seq, rtt, now);
            seq += 1;
            now += 250;
            if modes.last() != Some(&l.mode()) {
                modes.push(l.mode());
            }
            if l.mode() == "slowdown" {
                assert_eq!(l.cwnd(), 2.0);
            }
        }
        assert_eq!(&modes[..5], &["slow_start", "linear", "slowdown", "ramp", "linear"]);
    }
}
