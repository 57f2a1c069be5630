use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::pcc::{MiResult, MiTracker, MAX_UNRESOLVED};
use super::{CcError, CongestionController, ControllerContext, Params, ParamReader, INITIAL_CWND};

/// Sigmoid steepness and loss tolerance of the Allegro utility.
const ALPHA: f64 = 100.0;
const LOSS_TOLERANCE: f64 = 0.05;

/// Allegro utility: `T * sigmoid(L - 0.05) - x * L`.
///
/// `L` counts both real losses and the part of the sending rate the path
/// did not deliver within the interval, so overdriving a deep buffer is
/// penalized the same way as overdriving a shallow one.
pub fn allegro_utility(send_rate: f64, throughput: f64, loss_rate: f64) -> f64 {
    let shortfall = if send_rate > 0.0 { (1.0 - throughput / send_rate).max(0.0) } else { 0.0 };
    let loss = loss_rate.max(shortfall);
    let sigmoid = 1.0 / (1.0 + (ALPHA * (loss - LOSS_TOLERANCE)).exp());
    throughput * sigmoid - send_rate * loss
}

#[derive(Debug, Clone)]
enum Phase {
    /// Raise the rate by one step every interval while utility improves.
    Starting { last_utility: Option<f64> },
    /// Two randomized pairs of trial intervals at `rate * (1 +/- eps)`.
    Deciding { trials: Vec<(u64, i8)>, utilities: Vec<(i8, usize, f64)>, planned: Vec<(usize, i8)> },
}

/// PCC Allegro with a fixed multiplicative step: every decision moves the
/// base rate by exactly `1 + eps`, `1 - eps` or leaves it unchanged.
#[derive(Debug, Clone)]
pub struct Allegro {
    eps: f64,
    rate: f64,
    phase: Phase,
    mi: MiTracker,
    rng: ChaCha8Rng,
}

impl Allegro {
    pub fn new(params: &Params, ctx: ControllerContext) -> Result<Self, CcError> {
        let mut r = ParamReader::new("allegro", params);
        let eps = r.get("epsilon", 0.05, |v| v > 0.0 && v < 0.5)?;
        r.finish()?;
        let rtt = ctx.initial_rtt_us.max(1);
        Ok(Self {
            eps,
            rate: INITIAL_CWND / (rtt as f64 / 1e6),
            phase: Phase::Starting { last_utility: None },
            mi: MiTracker::new(rtt),
            rng: ChaCha8Rng::seed_from_u64(ctx.seed),
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.eps
    }

    /// The decided base rate, packets per second.
    pub fn rate_pps(&self) -> f64 {
        self.rate
    }

    fn new_trial_plan(&mut self) -> Vec<(usize, i8)> {
        let mut plan = Vec::with_capacity(4);
        for pair in 0..2 {
            if self.rng.random_bool(0.5) {
                plan.push((pair, 1));
                plan.push((pair, -1));
            } else {
                plan.push((pair, -1));
                plan.push((pair, 1));
            }
        }
        // popped from the back
        plan.reverse();
        plan
    }

    fn roll_interval(&mut self, now_us: u64) {
        if !self.mi.needs_new_interval(now_us) {
            return;
        }
        match &mut self.phase {
            Phase::Starting { .. } => {
                let rate = self.rate;
                self.mi.start(rate, now_us);
                // the next interval runs one step higher
                if self.mi.unresolved() < MAX_UNRESOLVED {
                    self.rate *= 1.0 + self.eps;
                }
            }
            Phase::Deciding { trials, planned, .. } => {
                if let Some((pair, sign)) = planned.pop() {
                    let rate = self.rate * (1.0 + sign as f64 * self.eps);
                    let id = self.mi.start(rate, now_us);
                    trials.push((id, sign * if pair == 0 { 1 } else { 2 }));
                } else {
                    let rate = self.rate;
                    self.mi.start(rate, now_us);
                }
            }
        }
    }

    fn process_results(&mut self, now_us: u64) {
        while let Some(res) = self.mi.pop_completed() {
            self.on_result(res, now_us);
        }
    }

    fn on_result(&mut self, res: MiResult, _now_us: u64) {
        let u = allegro_utility(res.send_rate_pps, res.throughput_pps, res.loss_rate);
        if res.sent == 0 {
            // nothing was sent (window-limited); a trial without data is void
            if let Phase::Deciding { trials, .. } = &self.phase {
                if trials.iter().any(|(id, _)| *id == res.id) {
                    let planned = self.new_trial_plan();
                    self.phase = Phase::Deciding { trials: Vec::new(), utilities: Vec::new(), planned };
                }
            }
            return;
        }
        match &mut self.phase {
            Phase::Starting { last_utility } => {
                match *last_utility {
                    Some(prev) if u < prev => {
                        self.rate *= 1.0 - self.eps;
                        let planned = self.new_trial_plan();
                        self.phase = Phase::Deciding { trials: Vec::new(), utilities: Vec::new(), planned };
                    }
                    _ => *last_utility = Some(u),
                }
            }
            Phase::Deciding { trials, utilities, .. } => {
                let Some(&(_, tag)) = trials.iter().find(|(id, _)| *id == res.id) else {
                    return;
                };
                let pair = (tag.unsigned_abs() - 1) as usize;
                utilities.push((tag.signum(), pair, u));
                if utilities.len() < 4 {
                    return;
                }
                let prefers_up = |p: usize| {
                    let up = utilities.iter().find(|&&(s, q, _)| s > 0 && q == p).map(|t| t.2);
                    let down = utilities.iter().find(|&&(s, q, _)| s < 0 && q == p).map(|t| t.2);
                    match (up, down) {
                        (Some(a), Some(b)) if a > b => 1,
                        (Some(a), Some(b)) if a < b => -1,
                        _ => 0,
                    }
                };
                let (a, b) = (prefers_up(0), prefers_up(1));
                if a == b && a != 0 {
                    self.rate *= 1.0 + a as f64 * self.eps;
                }
                let planned = self.new_trial_plan();
                self.phase = Phase::Deciding { trials: Vec::new(), utilities: Vec::new(), planned };
            }
        }
    }
}

impl CongestionController for Allegro {
    fn name(&self) -> &'static str {
        "allegro"
    }

    fn on_send(&mut self, seq: u64, now_us: u64) {
        self.roll_interval(now_us);
        self.mi.on_send(seq, now_us);
    }

    fn on_ack(&mut self, seq: u64, rtt_us: u64, now_us: u64) {
        self.mi.on_ack(seq, rtt_us, now_us);
        self.process_results(now_us);
    }

    fn on_loss(&mut self, seq: u64, now_us: u64) {
        self.mi.on_loss(seq);
        self.process_results(now_us);
    }

    fn on_timeout(&mut self, now_us: u64) {
        self.mi.on_timeout(now_us);
        self.process_results(now_us);
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
            Phase::Deciding { .. } => "deciding",
        }
    }

    fn target_rate_pps(&self) -> Option<f64> {
        Some(self.rate)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn utility_prefers_delivered_rate() {
        // under capacity: more is better
        assert!(allegro_utility(110.0, 110.0, 0.0) > allegro_utility(100.0, 100.0, 0.0));
        // over capacity: the higher rate delivers the same, so it loses
        assert!(allegro_utility(110.0, 100.0, 0.0) < allegro_utility(105.0, 100.0, 0.0));
        // heavy loss collapses utility
        assert!(allegro_utility(100.0, 80.0, 0.2) < 0.0);
    }

    #[test]
    fn starting_rate_climbs_in_fixed_steps() {
        let mut a = Allegro::new(&Params::new(), ControllerContext::default()).unwrap();
        let r0 = a.rate_pps();
        let mut rates = vec![];
        for ms in 0..200u64 {
            a.on_tick(ms * 1000);
            rates.push(a.rate_pps());
        }
        rates.dedup();
        for w in rates.windows(2) {
            assert!((w[1] / w[0] - 1.05).abs() < 1e-12);
        }
        assert!(a.rate_pps() > r0);
    }
}
