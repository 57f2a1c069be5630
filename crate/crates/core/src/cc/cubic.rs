use super::{CcError, CongestionController, Params, ParamReader, INITIAL_CWND};

/// CUBIC window growth (RFC 8312) in packet units, with the TCP-friendly
/// region and fast convergence.
#[derive(Debug, Clone)]
pub struct Cubic {
    c: f64,
    beta: f64,
    fast_convergence: bool,
    cwnd: f64,
    ssthresh: f64,
    w_max: f64,
    k: f64,
    origin: f64,
    w_est: f64,
    epoch_start_us: Option<u64>,
    min_rtt_us: Option<u64>,
    last_sent: Option<u64>,
    recovery_until: Option<u64>,
}

impl Cubic {
    pub fn new(params: &Params) -> Result<Self, CcError> {
        let mut r = ParamReader::new("cubic", params);
        let c = r.get("c", 0.4, |v| v > 0.0)?;
        let beta = r.get("beta", 0.7, |v| v > 0.0 && v < 1.0)?;
        let fast_convergence = r.get("fast_convergence", 1.0, |v| v == 0.0 || v == 1.0)? == 1.0;
        let cwnd = r.get("initial_cwnd", INITIAL_CWND, |v| v >= 1.0)?;
        r.finish()?;
        Ok(Self {
            c,
            beta,
            fast_convergence,
            cwnd,
            ssthresh: f64::INFINITY,
            w_max: 0.0,
            k: 0.0,
            origin: 0.0,
            w_est: 0.0,
            epoch_start_us: None,
            min_rtt_us: None,
            last_sent: None,
            recovery_until: None,
        })
    }

    pub fn cwnd(&self) -> f64 {
        self.cwnd
    }

    pub fn w_max(&self) -> f64 {
        self.w_max
    }

    /// Time in seconds for the cubic curve to return to `w_max`.
    pub fn k(&self) -> f64 {
        self.k
    }

    fn cubic_window(&self, t_s: f64) -> f64 {
        self.c * (t_s - self.k).powi(3) + self.origin
    }

    fn congestion_avoidance(&mut self, now_us: u64) {
        let rtt_s = self.min_rtt_us.unwrap_or(0) as f64 / 1e6;
        let epoch = *self.epoch_start_us.get_or_insert_with(|| {
            if self.cwnd < self.w_max {
                self.k = ((self.w_max - self.cwnd) / self.c).cbrt();
                self.origin = self.w_max;
            } else {
                self.k = 0.0;
                self.origin = self.cwnd;
            }
            self.w_est = self.cwnd;
            now_us
        });
        let t = (now_us - epoch) as f64 / 1e6;
        let target = self.cubic_window(t + rtt_s).clamp(self.cwnd, 1.5 * self.cwnd);

        self.w_est += 3.0 * (1.0 - self.beta) / (1.0 + self.beta) / self.cwnd;
        if self.cubic_window(t) < self.w_est {
            self.cwnd = self.cwnd.max(self.w_est);
        } else {
            self.cwnd += (target - self.cwnd) / self.cwnd;
        }
    }
}

impl CongestionController for Cubic {
    fn name(&self) -> &'static str {
        "cubic"
    }

    fn on_send(&mut self, seq: u64, _now_us: u64) {
        self.last_sent = Some(seq);
    }

    fn on_ack(&mut self, _seq: u64, rtt_us: u64, now_us: u64) {
        self.min_rtt_us = Some(self.min_rtt_us.map_or(rtt_us, |m| m.min(rtt_us)));
        if self.cwnd < self.ssthresh {
            self.cwnd += 1.0;
        } else {
            self.congestion_avoidance(now_us);
        }
    }

    fn on_loss(&mut self, seq: u64, _now_us: u64) {
        if self.recovery_until.is_some_and(|r| seq <= r) {
            return;
        }
        self.epoch_start_us = None;
        self.w_max = if self.fast_convergence && self.cwnd < self.w_max {
            self.cwnd * (1.0 + self.beta) / 2.0
        } else {
            self.cwnd
        };
        self.cwnd = (self.cwnd * self.beta).max(1.0);
        self.ssthresh = self.cwnd;
        self.recovery_until = Some(self.last_sent.unwrap_or(seq).max(seq));
    }

    fn on_timeout(&mut self, _now_us: u64) {
        self.epoch_start_us = None;
        self.w_max = self.cwnd;
        self.ssthresh = (self.cwnd * self.beta).max(2.0);
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
        if self.cwnd < self.ssthresh {
            "slow_start"
        } else {
            "congestion_avoidance"
        }
    }
}
