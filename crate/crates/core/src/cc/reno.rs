use super::{CcError, CongestionController, Params, ParamReader, INITIAL_CWND};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RenoPhase {
    SlowStart,
    CongestionAvoidance,
}

/// NewReno-style AIMD: +1 packet per ACK in slow start, +1/cwnd in
/// congestion avoidance, halve once per window of losses.
#[derive(Debug, Clone)]
pub struct Reno {
    cwnd: f64,
    ssthresh: f64,
    last_sent: Option<u64>,
    /// Losses of packets up to this sequence belong to the current reduction.
    recovery_until: Option<u64>,
}

impl Reno {
    pub fn new(params: &Params) -> Result<Self, CcError> {
        let mut r = ParamReader::new("reno", params);
        let cwnd = r.get("initial_cwnd", INITIAL_CWND, |v| v >= 1.0)?;
        r.finish()?;
        Ok(Self { cwnd, ssthresh: f64::INFINITY, last_sent: None, recovery_until: None })
    }

    pub fn cwnd(&self) -> f64 {
        self.cwnd
    }

    pub fn ssthresh(&self) -> f64 {
        self.ssthresh
    }

    pub fn phase(&self) -> RenoPhase {
        if self.cwnd < self.ssthresh {
            RenoPhase::SlowStart
        } else {
            RenoPhase::CongestionAvoidance
        }
    }
}

impl CongestionController for Reno {
    fn name(&self) -> &'static str {
        "reno"
    }

    fn on_send(&mut self, seq: u64, _now_us: u64) {
        self.last_sent = Some(seq);
    }

    fn on_ack(&mut self, _seq: u64, _rtt_us: u64, _now_us: u64) {
        match self.phase() {
            RenoPhase::SlowStart => self.cwnd += 1.0,
            RenoPhase::CongestionAvoidance => self.cwnd += 1.0 / self.cwnd,
        }
    }

    fn on_loss(&mut self, seq: u64, _now_us: u64) {
        if self.recovery_until.is_some_and(|r| seq <= r) {
            return;
        }
        self.cwnd = (self.cwnd / 2.0).max(1.0);
        self.ssthresh = self.cwnd;
        self.recovery_until = Some(self.last_sent.unwrap_or(seq).max(seq));
    }

    fn on_timeout(&mut self, _now_us: u64) {
        self.ssthresh = (self.cwnd / 2.0).max(2.0);
        self.cwnd = 1.0;
        self.recovery_until = self.last_sent;
    }

    fn cwnd_packets(&self) -> u64 {
        (self.cwnd.floor() as u64).max(1)
    }

    fn pacing_rate_pps(&self) -> f64 {
        0.0
    }

    fn mode(&self) -> &'static str {
        match self.phase() {
            RenoPhase::SlowStart => "slow_start",
            RenoPhase::CongestionAvoidance => "congestion_avoidance",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slow_start_doubles_per_rtt() {
        let mut r = Reno::new(&Params::new()).unwrap();
        for s in 0..10 {
            r.on_send(s, 0);
        }
        for s in 0..10 {
            r.on_ack(s, 20_000, 20_000);
        }
        assert_eq!(r.cwnd(), 20.0);
    }

    #[test]
    fn congestion_avoidance_increment() {
        let mut r = Reno::new(&Params::new()).unwrap();
        r.ssthresh = 10.0;
        r.on_ack(0, 20_000, 20_000);
        assert!((r.cwnd() - 10.1).abs() < 1e-12);
    }

    #[test]
    fn one_halving_per_window() {
        let mut r = Reno::new(&Params::new()).unwrap();
        r.cwnd = 40.0;
        for s in 0..40 {
            r.on_send(s, 0);
        }
        r.on_loss(3, 1);
        r.on_loss(5, 1);
        assert_eq!(r.cwnd(), 20.0);
        assert_eq!(r.phase(), RenoPhase::CongestionAvoidance);
        r.on_send(40, 2);
        r.on_loss(40, 3);
        assert_eq!(r.cwnd(), 10.0);
    }

    #[test]
    fn timeout_collapses_window() {
        let mut r = Reno::new(&Params::new()).unwrap();
        r.on_timeout(0);
        assert_eq!(r.cwnd_packets(), 1);
        assert_eq!(r.ssthresh(), 5.0);
        r.cwnd = 1.0;
        r.on_loss(0, 0);
        assert!(r.cwnd() >= 1.0);
    }
}
