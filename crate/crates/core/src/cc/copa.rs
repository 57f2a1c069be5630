use super::{CcError, CongestionController, ControllerContext, Params, ParamReader, Srtt, WindowedFilter, INITIAL_CWND};

const MIN_CWND: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Direction {
    Up,
    Down,
}

/// Copa in its default (delay-targeting) mode.
///
/// The queuing delay is estimated as standing RTT (min over the last half
/// smoothed RTT) minus the min RTT; the window moves toward
/// `1 / (delta * queuing_delay)` packets per second, with a velocity that
/// doubles once the direction has held for three RTTs.
#[derive(Debug, Clone)]
pub struct Copa {
    delta: f64,
    cwnd: f64,
    srtt: Srtt,
    initial_rtt_us: u64,
    min_rtt: WindowedFilter,
    standing_rtt: WindowedFilter,
    slow_start: bool,
    velocity: f64,
    direction: Option<Direction>,
    same_direction_rtts: u32,
    last_cwnd_check: Option<(u64, f64)>,
}

impl Copa {
    pub fn new(params: &Params, ctx: ControllerContext) -> Result<Self, CcError> {
        let mut r = ParamReader::new("copa", params);
        let delta = r.get("delta", 0.5, |v| v > 0.0)?;
        let min_rtt_window_s = r.get("min_rtt_window_s", 10.0, |v| v > 0.0)?;
        let cwnd = r.get("initial_cwnd", INITIAL_CWND, |v| v >= 1.0)?;
        r.finish()?;
        Ok(Self {
            delta,
            cwnd,
            srtt: Srtt::default(),
            initial_rtt_us: ctx.initial_rtt_us.max(1),
            min_rtt: WindowedFilter::min((min_rtt_window_s * 1e6) as u64),
            standing_rtt: WindowedFilter::min(ctx.initial_rtt_us / 2),
            slow_start: true,
            velocity: 1.0,
            direction: None,
            same_direction_rtts: 0,
            last_cwnd_check: None,
        })
    }

    pub fn cwnd(&self) -> f64 {
        self.cwnd
    }

    pub fn velocity(&self) -> f64 {
        self.velocity
    }

    /// Standing RTT minus min RTT, seconds.
    pub fn queuing_delay_s(&self) -> Option<f64> {
        let q = self.standing_rtt.get()? - self.min_rtt.get()?;
        Some(q.max(0.0) / 1e6)
    }

    fn srtt_us(&self) -> f64 {
        self.srtt.get().unwrap_or(self.initial_rtt_us as f64)
    }

    fn update_velocity(&mut self, now_us: u64) {
        let srtt = self.srtt_us() as u64;
        let Some((since, cwnd_then)) = self.last_cwnd_check else {
            self.last_cwnd_check = Some((now_us, self.cwnd));
            return;
        };
        if now_us < since + srtt {
            return;
        }
        let dir = if self.cwnd >= cwnd_then { Direction::Up } else { Direction::Down };
        if self.direction == Some(dir) {
            self.same_direction_rtts += 1;
            if self.same_direction_rtts >= 3 {
                self.velocity *= 2.0;
            }
        } else {
            self.direction = Some(dir);
            self.same_direction_rtts = 0;
            self.velocity = 1.0;
        }
        // keep velocity from overrunning the window
        self.velocity = self.velocity.min(self.cwnd.max(1.0));
        self.last_cwnd_check = Some((now_us, self.cwnd));
    }
}

impl CongestionController for Copa {
    fn name(&self) -> &'static str {
        "copa"
    }

    fn on_ack(&mut self, _seq: u64, rtt_us: u64, now_us: u64) {
        self.srtt.update(rtt_us);
        self.min_rtt.update(now_us, rtt_us as f64);
        self.standing_rtt.set_window((self.srtt_us() / 2.0) as u64);
        self.standing_rtt.update(now_us, rtt_us as f64);

        let (Some(standing), Some(dq)) = (self.standing_rtt.get(), self.queuing_delay_s()) else {
            return;
        };
        let target_rate = if dq > 0.0 { 1.0 / (self.delta * dq) } else { f64::INFINITY };
        let current_rate = self.cwnd / (standing / 1e6);

        if self.slow_start {
            if current_rate <= target_rate {
                self.cwnd += 1.0;
                return;
            }
            self.slow_start = false;
        }
        self.update_velocity(now_us);
        let step = self.velocity / (self.delta * self.cwnd);
        if current_rate <= target_rate {
            self.cwnd += step;
        } else {
            self.cwnd -= step;
        }
        self.cwnd = self.cwnd.max(MIN_CWND);
    }

    fn on_loss(&mut self, _seq: u64, _now_us: u64) {}

    fn on_timeout(&mut self, _now_us: u64) {
        self.cwnd = MIN_CWND;
        self.velocity = 1.0;
        self.direction = None;
        self.same_direction_rtts = 0;
        self.last_cwnd_check = None;
    }

    fn cwnd_packets(&self) -> u64 {
        (self.cwnd.floor() as u64).max(1)
    }

    fn pacing_rate_pps(&self) -> f64 {
        let rtt = self.standing_rtt.get().unwrap_or(self.initial_rtt_us as f64);
        2.0 * self.cwnd / (rtt / 1e6)
    }

    fn mode(&self) -> &'static str {
        if self.slow_start {
            "slow_start"
        } else {
            "default"
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn copa() -> Copa {
        Copa::new(&Params::new(), ControllerContext::default()).unwrap()
    }

    #[test]
    fn grows_without_queueing() {
        let mut c = copa();
        let before = c.cwnd();
        for i in 0..100 {
            c.on_ack(i, 20_000, 20_000 + i * 250);
        }
        assert!(c.cwnd() > before);
    }

    #[test]
    fn shrinks_when_rate_exceeds_target() {
        let mut c = copa();
        c.slow_start = false;
        c.cwnd = 200.0;
        c.on_ack(0, 20_000, 20_000);
        // 10 ms of standing queue: target 1/(0.5*0.01) = 200 pps, far below
        // the current 200 packets per 30 ms
        let mut now = 30_000;
        for i in 1..200 {
            c.on_ack(i, 30_000, now);
            now += 250;
        }
        assert!(c.cwnd() < 200.0);
        assert!((c.queuing_delay_s().unwrap() - 0.01).abs() < 1e-9);
    }

    #[test]
    fn velocity_resets_on_direction_change() {
        let mut c = copa();
        c.slow_start = false;
        let mut now = 0;
        for i in 0..2000 {
            now += 500;
            c.on_ack(i, 20_000, now);
        }
        assert!(c.velocity() > 1.0);
        for i in 0..2000 {
            now += 500;
            c.on_ack(2000 + i, 60_000, now);
        }
        assert_eq!(c.direction, Some(Direction::Down));
    }
}
