//! Congestion controllers modeled as per-flow state machines.
//!
//! Every controller implements [`CongestionController`]. The engine feeds it
//! send, ACK, loss, timeout and 1 ms tick notifications and reads back a
//! congestion window and an optional pacing rate.

use std::collections::{BTreeMap, VecDeque};

use thiserror::Error;

mod allegro;
mod bbr;
mod copa;
mod cubic;
mod ledbat;
mod pcc;
mod reno;
mod vivace;

pub use allegro::Allegro;
pub use bbr::{Bbr, BbrMode};
pub use copa::Copa;
pub use cubic::Cubic;
pub use ledbat::Ledbat;
pub use reno::Reno;
pub use vivace::Vivace;

/// Initial window for window-based controllers, in packets.
pub const INITIAL_CWND: f64 = 10.0;

pub const PROTOCOLS: [&str; 7] = ["reno", "cubic", "bbr", "copa", "ledbat", "allegro", "vivace"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CcError {
    #[error("unknown protocol `{0}`")]
    UnknownProtocol(String),
    #[error("protocol `{protocol}` has no parameter `{key}`")]
    UnknownParameter { protocol: String, key: String },
    #[error("parameter `{key}` = {value} out of range")]
    InvalidParameter { key: String, value: f64 },
}

/// Per-flow state machine deciding how much to send.
///
/// Callbacks never fail; duplicate or stale notifications are ignored.
pub trait CongestionController: Send {
    fn name(&self) -> &'static str;

    /// A new packet `seq` left the sender. Sequence numbers increase by one.
    fn on_send(&mut self, _seq: u64, _now_us: u64) {}

    fn on_ack(&mut self, seq: u64, rtt_us: u64, now_us: u64);

    fn on_loss(&mut self, seq: u64, now_us: u64);

    /// Retransmission timeout: everything outstanding is considered lost.
    fn on_timeout(&mut self, now_us: u64);

    /// Called every millisecond of simulated time once the flow started.
    fn on_tick(&mut self, _now_us: u64) {}

    /// Congestion window in packets, always at least 1.
    fn cwnd_packets(&self) -> u64;

    /// Pacing rate in packets per second; 0 means window-limited only.
    fn pacing_rate_pps(&self) -> f64;

    fn mode(&self) -> &'static str {
        "default"
    }

    /// Rate chosen by the controller's decision logic, for rate-based
    /// controllers whose instantaneous pacing includes probing offsets.
    fn target_rate_pps(&self) -> Option<f64> {
        None
    }

    /// Current bandwidth-delay product estimate in packets, when the
    /// controller keeps one.
    fn bdp_estimate(&self) -> Option<f64> {
        None
    }
}

/// Information a controller gets at creation time.
#[derive(Debug, Clone, Copy)]
pub struct ControllerContext {
    /// RTT estimate before any sample exists (the handshake RTT).
    pub initial_rtt_us: u64,
    /// Seed for controllers that explore randomly.
    pub seed: u64,
}

impl Default for ControllerContext {
    fn default() -> Self {
        Self { initial_rtt_us: 20_000, seed: 0 }
    }
}

pub type Params = BTreeMap<String, f64>;

/// Reads overridable parameters and rejects keys the controller does not know.
pub(crate) struct ParamReader<'a> {
    protocol: &'static str,
    params: &'a Params,
    used: Vec<&'static str>,
}

impl<'a> ParamReader<'a> {
    pub(crate) fn new(protocol: &'static str, params: &'a Params) -> Self {
        Self { protocol, params, used: Vec::new() }
    }

    pub(crate) fn get(&mut self, key: &'static str, default: f64, valid: impl Fn(f64) -> bool) -> Result<f64, CcError> {
        self.used.push(key);
        match self.params.get(key) {
            None => Ok(default),
            Some(&v) if v.is_finite() && valid(v) => Ok(v),
            Some(&v) => Err(CcError::InvalidParameter { key: key.to_string(), value: v }),
        }
    }

    pub(crate) fn finish(self) -> Result<(), CcError> {
        match self.params.keys().find(|k| !self.used.contains(&k.as_str())) {
            Some(k) => Err(CcError::UnknownParameter { protocol: self.protocol.to_string(), key: k.clone() }),
            None => Ok(()),
        }
    }
}

pub fn make_controller(name: &str, params: &Params, ctx: ControllerContext) -> Result<Box<dyn CongestionController>, CcError> {
    Ok(match name {
        "reno" => Box::new(Reno::new(params)?),
        "cubic" => Box::new(Cubic::new(params)?),
        "bbr" => Box::new(Bbr::new(params, ctx)?),
        "copa" => Box::new(Copa::new(params, ctx)?),
        "ledbat" => Box::new(Ledbat::new(params)?),
        "allegro" => Box::new(Allegro::new(params, ctx)?),
        "vivace" => Box::new(Vivace::new(params, ctx)?),
        other => return Err(CcError::UnknownProtocol(other.to_string())),
    })
}

/// BBR's window target: `ceil(gain * btlbw * rtprop)` packets.
pub fn bbr_target_cwnd(btlbw_pps: f64, rtprop_s: f64, gain: f64) -> u64 {
    (gain * btlbw_pps * rtprop_s - 1e-9).ceil().max(0.0) as u64
}

/// Smoothed RTT per RFC 6298 weights.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Srtt {
    srtt: Option<f64>,
}

impl Srtt {
    pub(crate) fn update(&mut self, rtt_us: u64) {
        let r = rtt_us as f64;
        self.srtt = Some(match self.srtt {
            None => r,
            Some(s) => 0.875 * s + 0.125 * r,
        });
    }

    pub(crate) fn get(&self) -> Option<f64> {
        self.srtt
    }
}

/// Sliding-window extremum over `(key, value)` samples with nondecreasing
/// keys; keys are time or round counts.
#[derive(Debug, Clone)]
pub(crate) struct WindowedFilter {
    window: u64,
    is_max: bool,
    samples: VecDeque<(u64, f64)>,
}

impl WindowedFilter {
    pub(crate) fn max(window: u64) -> Self {
        Self { window, is_max: true, samples: VecDeque::new() }
    }

    pub(crate) fn min(window: u64) -> Self {
        Self { window, is_max: false, samples: VecDeque::new() }
    }

    pub(crate) fn set_window(&mut self, window: u64) {
        self.window = window;
    }

    pub(crate) fn update(&mut self, key: u64, value: f64) {
        let dominated = |old: f64| if self.is_max { old <= value } else { old >= value };
        while self.samples.back().is_some_and(|&(_, v)| dominated(v)) {
            self.samples.pop_back();
        }
        self.samples.push_back((key, value));
        self.expire(key);
    }

    pub(crate) fn expire(&mut self, key: u64) {
        while self.samples.len() > 1 && self.samples.front().is_some_and(|&(k, _)| k + self.window < key) {
            self.samples.pop_front();
        }
    }

    pub(crate) fn get(&self) -> Option<f64> {
        self.samples.front().map(|&(_, v)| v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn unknown_protocol() {
        for name in ["verus", "proteus-s", ""] {
            assert!(matches!(
                make_controller(name, &Params::new(), ControllerContext::default()),
                Err(CcError::UnknownProtocol(_))
            ));
        }
    }

    #[test]
    fn unknown_and_invalid_parameters() {
        let p: Params = [("gamma".to_string(), 1.0)].into();
        assert!(matches!(
            make_controller("cubic", &p, ControllerContext::default()),
            Err(CcError::UnknownParameter { .. })
        ));
        let p: Params = [("beta".to_string(), 1.5)].into();
        assert!(matches!(
            make_controller("cubic", &p, ControllerContext::default()),
            Err(CcError::InvalidParameter { .. })
        ));
    }

    #[test]
    fn every_protocol_constructs() {
        for name in PROTOCOLS {
            let c = make_controller(name, &Params::new(), ControllerContext::default()).unwrap();
            assert_eq!(c.name(), name);
            assert!(c.cwnd_packets() >= 1);
        }
    }

    #[test]
    fn target_cwnd_formula() {
        assert_eq!(bbr_target_cwnd(1000.0, 0.02, 2.0), 40);
        assert_eq!(bbr_target_cwnd(1000.0, 0.02, 1.0), 20);
        assert_eq!(bbr_target_cwnd(1000.0, 0.0205, 1.0), 21);
    }

    #[test]
    fn windowed_filters() {
        let mut f = WindowedFilter::max(10);
        f.update(0, 5.0);
        f.update(3, 3.0);
        assert_eq!(f.get(), Some(5.0));
        f.update(11, 1.0);
        assert_eq!(f.get(), Some(3.0));
        let mut g = WindowedFilter::min(10);
        g.update(0, 5.0);
        g.update(1, 7.0);
        assert_eq!(g.get(), Some(5.0));
        g.update(12, 9.0);
        assert_eq!(g.get(), Some(9.0));
    }

    #[derive(Debug, Clone)]
    enum Event {
        Send,
        Ack { rtt_ms: u16 },
        Loss,
        Timeout,
        Tick { gap_ms: u16 },
    }

    fn event() -> impl Strategy<Value = Event> {
        prop_oneof![
            4 => Just(Event::Send),
            4 => (1u16..2000).prop_map(|rtt_ms| Event::Ack { rtt_ms }),
            1 => Just(Event::Loss),
            1 => Just(Event::Timeout),
            2 => (0u16..500).prop_map(|gap_ms| Event::Tick { gap_ms }),
        ]
    }

    /// Drives a controller with an arbitrary callback sequence that is
    /// consistent with a FIFO path: acks and losses refer to sent packets.
    fn drive(c: &mut dyn CongestionController, events: &[Event]) -> Vec<(u64, u64)> {
        let mut now = 0u64;
        let mut next_seq = 0u64;
        let mut outstanding: VecDeque<(u64, u64)> = VecDeque::new();
        let mut trajectory = Vec::new();
        for e in events {
            match *e {
                Event::Send => {
                    c.on_send(next_seq, now);
                    outstanding.push_back((next_seq, now));
                    next_seq += 1;
                }
                Event::Ack { rtt_ms } => {
                    if let Some((seq, sent)) = outstanding.pop_front() {
                        now = now.max(sent + rtt_ms as u64 * 1000);
                        c.on_ack(seq, now - sent, now);
                    }
                }
                Event::Loss => {
                    if let Some((seq, _)) = outstanding.pop_front() {
                        c.on_loss(seq, now);
                    }
                }
                Event::Timeout => {
                    outstanding.clear();
                    c.on_timeout(now);
                }
                Event::Tick { gap_ms } => {
                    now += gap_ms as u64 * 1000;
                    c.on_tick(now);
                }
            }
            let cwnd = c.cwnd_packets();
            let rate = c.pacing_rate_pps();
            assert!(cwnd >= 1, "{} cwnd {cwnd} after {e:?}", c.name());
            assert!(rate >= 0.0 && rate.is_finite(), "{} rate {rate}", c.name());
            trajectory.push((cwnd, rate.to_bits()));
        }
        trajectory
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn cwnd_never_below_one(events in prop::collection::vec(event(), 1..400), proto in 0usize..7) {
            let mut c = make_controller(PROTOCOLS[proto], &Params::new(), ControllerContext::default()).unwrap();
            drive(c.as_mut(), &events);
        }

        #[test]
        fn identical_callbacks_identical_trajectories(events in prop::collection::vec(event(), 1..300), proto in 0usize..7, seed: u64) {
            let ctx = ControllerContext { seed, ..Default::default() };
            let mut a = make_controller(PROTOCOLS[proto], &Params::new(), ctx).unwrap();
            let mut b = make_controller(PROTOCOLS[proto], &Params::new(), ctx).unwrap();
            prop_assert_eq!(drive(a.as_mut(), &events), drive(b.as_mut(), &events));
        }
    }

    #[test]
    fn long_random_fuzz() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for proto in PROTOCOLS {
            let events: Vec<Event> = (0..20_000)
                .map(|_| match rng.random_range(0..12) {
                    0..=3 => Event::Send,
                    4..=7 => Event::Ack { rtt_ms: rng.random_range(20..400) },
                    8 => Event::Loss,
                    9 if rng.random_bool(0.05) => Event::Timeout,
                    _ => Event::Tick { gap_ms: rng.random_range(0..20) },
                })
                .collect();
            let mut c = make_controller(proto, &Params::new(), ControllerContext::default()).unwrap();
            drive(c.as_mut(), &events);
        }
    }
}
