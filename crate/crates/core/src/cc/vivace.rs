use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::pcc::{MiResult, MiTracker, MAX_UNRESOLVED};
use super::{CcError, CongestionController, ControllerContext, Params, ParamReader, INITIAL_CWND};

/// RTT gradients smaller than this are treated as measurement noise.
const GRADIENT_NOISE: f64 = 0.01;

#[derive(Debug, Clone, Copy)]
pub struct VivaceUtility {
    pub exponent: f64,
    pub latency_coeff: f64,
    pub loss_coeff: f64,
}

impl Default for VivaceUtility {
    fn default() -> Self {
        Self { exponent: 0.9, latency_coeff: 900.0, loss_coeff: 11.35 }
    }
}

impl VivaceUtility {
    /// `x^t - b * x * max(0, dRTT/dt) - c * x * L`, with `x` in Mbps.
    pub fn eval(&self, rate_mbps: f64, rtt_gradient: f64, loss_rate: f64) -> f64 {
        let g = if rtt_gradient.abs() < GRADIENT_NOISE { 0.0 } else { rtt_gradient.max(0.0) };
        rate_mbps.max(0.0).powf(self.exponent)
            - self.latency_coeff * rate_mbps * g
            - self.loss_coeff * rate_mbps * loss_rate
    }
}

#[derive(Debug, Clone)]
enum Phase {
    /// Double every interval while utility improves.
    Starting { last: Option<(f64, f64)> },
    /// One pair of trial intervals at `rate * (1 +/- eps)` in random order.
    Probing { trials: Vec<(u64, i8)>, results: Vec<(i8, f64)>, planned: Vec<i8> },
}

/// PCC Vivace: online gradient ascent on a latency- and loss-aware utility,
/// with a confidence amplifier and a dynamic change boundary on each step.
#[derive(Debug, Clone)]
pub struct Vivace {
    utility: VivaceUtility,
    eps: f64,
    theta: f64,
    packet_bits: f64,
    rate: f64,
    phase: Phase,
    last_direction: i8,
    amplifier: f64,
    boundary_hits: u32,
    mi: MiTracker,
    rng: ChaCha8Rng,
}

impl Vivace {
    pub fn new(params: &Params, ctx: ControllerContext) -> Result<Self, CcError> {
        let mut r = ParamReader::new("vivace", params);
        let utility = VivaceUtility {
            exponent: r.get("t", 0.9, |v| v > 0.0 && v < 1.0)?,
            latency_coeff: r.get("b", 900.0, |v| v >= 0.0)?,
            loss_coeff: r.get("c", 11.35, |v| v >= 0.0)?,
        };
        let eps = r.get("epsilon", 0.05, |v| v > 0.0 && v < 0.5)?;
        let theta = r.get("theta", 1.0, |v| v > 0.0)?;
        r.finish()?;
        let rtt = ctx.initial_rtt_us.max(1);
        Ok(Self {
            utility,
            eps,
            theta,
            packet_bits: 1500.0 * 8.0,
            rate: INITIAL_CWND / (rtt as f64 / 1e6),
            phase: Phase::Starting { last: None },
            last_direction: 0,
            amplifier: 1.0,
            boundary_hits: 0,
            mi: MiTracker::new(rtt),
            rng: ChaCha8Rng::seed_from_u64(ctx.seed),
        })
    }

    pub fn rate_pps(&self) -> f64 {
        self.rate
    }

    fn mbps(&self, pps: f64) -> f64 {
        pps * self.packet_bits / 1e6
    }

    fn min_rate(&self) -> f64 {
        // one packet per RTT estimate, at least 1 pps
        (1e6 / self.mi.rtt_estimate_us()).max(1.0)
    }

    fn plan(&mut self) -> Vec<i8> {
        if self.rng.random_bool(0.5) {
            vec![1, -1]
        } else {
            vec![-1, 1]
        }
    }

    fn roll_interval(&mut self, now_us: u64) {
        if !self.mi.needs_new_interval(now_us) {
            return;
        }
        let base = self.rate;
        let eps = self.eps;
        match &mut self.phase {
            Phase::Starting { .. } => {
                self.mi.start(base, now_us);
                if self.mi.unresolved() < MAX_UNRESOLVED {
                    self.rate *= 2.0;
                }
            }
            Phase::Probing { trials, planned, .. } => match planned.pop() {
                Some(sign) => {
                    let id = self.mi.start(base * (1.0 + sign as f64 * eps), now_us);
                    trials.push((id, sign));
                }
                None => {
                    self.mi.start(base, now_us);
                }
            },
        }
    }

    fn utility_of(&self, res: &MiResult) -> f64 {
        self.utility.eval(self.mbps(res.send_rate_pps), res.rtt_gradient, res.loss_rate)
    }

    fn restart_probing(&mut self) {
        let planned = self.plan();
        self.phase = Phase::Probing { trials: Vec::new(), results: Vec::new(), planned };
    }

    fn step(&mut self, gradient: f64) {
        let direction: i8 = if gradient > 0.0 { 1 } else if gradient < 0.0 { -1 } else { 0 };
        if direction == 0 {
            return;
        }
        if direction == self.last_direction {
            self.amplifier += 1.0;
        } else {
            self.amplifier = 1.0;
            self.boundary_hits = 0;
        }
        self.last_direction = direction;
        let rate_mbps = self.mbps(self.rate);
        let mut change = self.amplifier * self.theta * gradient;
        let bound = (0.05 + 0.1 * self.boundary_hits as f64) * rate_mbps;
        if change.abs() > bound {
            change = bound * change.signum();
            self.boundary_hits += 1;
        } else {
            self.boundary_hits = 0;
        }
        let new_mbps = rate_mbps + change;
        self.rate = (new_mbps * 1e6 / self.packet_bits).max(self.min_rate());
    }

    fn on_result(&mut self, res: MiResult) {
        if res.sent == 0 {
            if let Phase::Probing { trials, .. } = &self.phase {
                if trials.iter().any(|(id, _)| *id == res.id) {
                    self.restart_probing();
                }
            }
            return;
        }
        let u = self.utility_of(&res);
        match &mut self.phase {
            Phase::Starting { last } => match *last {
                Some((prev_u, prev_rate)) if u < prev_u => {
                    self.rate = prev_rate.max(self.min_rate());
                    self.restart_probing();
                }
                _ => *last = Some((u, res.rate_pps)),
            },
            Phase::Probing { trials, results, .. } => {
                let Some(&(_, sign)) = trials.iter().find(|(id, _)| *id == res.id) else {
                    return;
                };
                results.push((sign, u));
                if results.len() < 2 {
                    return;
                }
                let up = results.iter().find(|r| r.0 > 0).map(|r| r.1).unwrap_or(0.0);
                let down = results.iter().find(|r| r.0 < 0).map(|r| r.1).unwrap_or(0.0);
                let rate_mbps = self.mbps(self.rate);
                let gradient = (up - down) / (2.0 * self.eps * rate_mbps);
                self.step(gradient);
                self.restart_probing();
            }
        }
    }

    fn process_results(&mut self) {
        while let Some(res) = self.mi.pop_completed() {
            self.on_result(res);
        }
    }
}

impl CongestionController for Vivace {
    fn name(&self) -> &'static str {
        "vivace"
    }

    fn on_send(&mut self, seq: u64, now_us: u64) {
        self.roll_interval(now_us);
        self.mi.on_send(seq, now_us);
    }

    fn on_ack(&mut self, seq: u64, rtt_us: u64, now_us: u64) {
        self.mi.on_ack(seq, rtt_us, now_us);
        self.process_results();
    }

    fn on_loss(&mut self, seq: u64, _now_us: u64) {
        self.mi.on_loss(seq);
        self.process_results();
    }

    fn on_timeout(&mut self, now_us: u64) {
        self.mi.on_timeout(now_us);
        self.process_results();
    }

    fn on_tick(&mut self, now_us: u64) {
        self.roll_interval(now_us);
    }

    fn cwnd_packets(&self) -> u64 {
        self.mi.window_for(self.pacing_rate_pps())
    }

    fn pacing_rate_pps(&self) -> f64 {
        self.mi.current_rate().unwrap_or(self.rate)
    }

    fn mode(&self) -> &'static str {
        match self.phase {
            Phase::Starting { .. } => "starting",
            Phase::Probing { .. } => "probing",
        }
    }

    fn target_rate_pps(&self) -> Option<f64> {
        Some(self.rate)
    }
}
