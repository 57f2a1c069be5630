//! BBR (v1) model-based control in packet units.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{bbr_target_cwnd, CcError, CongestionController, ControllerContext, Params, ParamReader, WindowedFilter, INITIAL_CWND};

const PROBE_BW_GAINS: [f64; 8] = [1.25, 0.75, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0];
const MIN_CWND: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BbrMode {
    Startup,
    Drain,
    ProbeBw,
    ProbeRtt,
}

#[derive(Debug, Clone, Copy)]
struct SendRecord {
    seq: u64,
    delivered: u64,
    delivered_time: u64,
    first_sent_time: u64,
    sent_time: u64,
}

#[derive(Debug, Clone)]
pub struct Bbr {
    mode: BbrMode,
    rng: ChaCha8Rng,
    high_gain: f64,
    steady_cwnd_gain: f64,
    probe_rtt_cwnd: f64,
    probe_rtt_duration_us: u64,
    rtprop_window_us: u64,

    btlbw: WindowedFilter,
    rtprop_us: Option<u64>,
    rtprop_stamp: u64,

    delivered: u64,
    delivered_time: u64,
    first_sent_time: u64,
    records: VecDeque<SendRecord>,
    last_sent: Option<u64>,

    round_count: u64,
    next_round_delivered: u64,
    round_start: bool,

    full_bw: f64,
    full_bw_count: u32,
    filled_pipe: bool,

    pacing_gain: f64,
    cwnd_gain: f64,
    cycle_index: usize,
    cycle_stamp: u64,
    loss_in_cycle: bool,

    probe_rtt_done_stamp: Option<u64>,
    probe_rtt_round_done: bool,
    prior_cwnd: f64,

    in_recovery: bool,
    recovery_until: u64,
    conservation_until_round: u64,

    cwnd: f64,
    pacing_rate: f64,
}

impl Bbr {
    pub fn new(params: &Params, ctx: ControllerContext) -> Result<Self, CcError> {
        let mut r = ParamReader::new("bbr", params);
        let high_gain = r.get("high_gain", 2.0 / std::f64::consts::LN_2, |v| v > 1.0)?;
        let steady_cwnd_gain = r.get("cwnd_gain", 2.0, |v| v >= 1.0)?;
        let probe_rtt_cwnd = r.get("probe_rtt_cwnd", MIN_CWND, |v| v >= 1.0)?;
        let probe_rtt_ms = r.get("probe_rtt_ms", 200.0, |v| v >= 0.0)?;
        let rtprop_window_s = r.get("rtprop_window_s", 10.0, |v| v > 0.0)?;
        let btlbw_rounds = r.get("btlbw_window_rounds", 10.0, |v| v >= 1.0)?;
        r.finish()?;
        let initial_rtt_us = ctx.initial_rtt_us.max(1);
        Ok(Self {
            mode: BbrMode::Startup,
            rng: ChaCha8Rng::seed_from_u64(ctx.seed),
            high_gain,
            steady_cwnd_gain,
            probe_rtt_cwnd,
            probe_rtt_duration_us: (probe_rtt_ms * 1000.0) as u64,
            rtprop_window_us: (rtprop_window_s * 1e6) as u64,
            btlbw: WindowedFilter::max(btlbw_rounds as u64),
            rtprop_us: None,
            rtprop_stamp: 0,
            delivered: 0,
            delivered_time: 0,
            first_sent_time: 0,
            records: VecDeque::new(),
            last_sent: None,
            round_count: 0,
            next_round_delivered: 0,
            round_start: false,
            full_bw: 0.0,
            full_bw_count: 0,
            filled_pipe: false,
            pacing_gain: high_gain,
            cwnd_gain: high_gain,
            cycle_index: 0,
            cycle_stamp: 0,
            loss_in_cycle: false,
            probe_rtt_done_stamp: None,
            probe_rtt_round_done: false,
            prior_cwnd: INITIAL_CWND,
            in_recovery: false,
            recovery_until: 0,
            conservation_until_round: 0,
            cwnd: INITIAL_CWND,
            pacing_rate: high_gain * INITIAL_CWND / (initial_rtt_us as f64 / 1e6),
        })
    }

    pub fn state(&self) -> BbrMode {
        self.mode
    }

    /// Windowed-max delivery rate, packets per second.
    pub fn btlbw_pps(&self) -> Option<f64> {
        self.btlbw.get()
    }

    pub fn rtprop_us(&self) -> Option<u64> {
        self.rtprop_us
    }

    pub fn inflight(&self) -> u64 {
        self.records.len() as u64
    }

    fn inflight_target(&self, gain: f64) -> f64 {
        match (self.btlbw.get(), self.rtprop_us) {
            (Some(bw), Some(rt)) => bbr_target_cwnd(bw, rt as f64 / 1e6, gain) as f64,
            _ => INITIAL_CWND,
        }
    }

    fn enter_probe_bw(&mut self, now_us: u64) {
        self.mode = BbrMode::ProbeBw;
        self.cwnd_gain = self.steady_cwnd_gain;
        // any phase except the draining one
        self.cycle_index = loop {
            let i = self.rng.random_range(0..PROBE_BW_GAINS.len());
            if i != 1 {
                break i;
            }
        };
        self.pacing_gain = PROBE_BW_GAINS[self.cycle_index];
        self.cycle_stamp = now_us;
        self.loss_in_cycle = false;
    }

    fn enter_probe_rtt(&mut self) {
        self.mode = BbrMode::ProbeRtt;
        self.pacing_gain = 1.0;
        self.cwnd_gain = 1.0;
        self.prior_cwnd = if self.in_recovery { self.prior_cwnd.max(self.cwnd) } else { self.cwnd };
        self.probe_rtt_done_stamp = None;
        self.probe_rtt_round_done = false;
    }

    fn exit_probe_rtt(&mut self, now_us: u64) {
        self.rtprop_stamp = now_us;
        self.cwnd = self.cwnd.max(self.prior_cwnd);
        if self.filled_pipe {
            self.enter_probe_bw(now_us);
        } else {
            self.mode = BbrMode::Startup;
            self.pacing_gain = self.high_gain;
            self.cwnd_gain = self.high_gain;
        }
    }

    fn rtprop_expired(&self, now_us: u64) -> bool {
        self.rtprop_us.is_some() && now_us > self.rtprop_stamp + self.rtprop_window_us
    }

    fn handle_probe_rtt(&mut self, now_us: u64) {
        if self.mode != BbrMode::ProbeRtt {
            return;
        }
        match self.probe_rtt_done_stamp {
            None if self.inflight() as f64 <= self.probe_rtt_cwnd => {
                self.probe_rtt_done_stamp = Some(now_us + self.probe_rtt_duration_us);
                self.probe_rtt_round_done = false;
                self.next_round_delivered = self.delivered;
            }
            Some(done) => {
                if self.round_start {
                    self.probe_rtt_round_done = true;
                }
                if self.probe_rtt_round_done && now_us >= done {
                    self.exit_probe_rtt(now_us);
                }
            }
            None => {}
        }
    }

    fn update_cycle_phase(&mut self, now_us: u64) {
        let full_length = self
            .rtprop_us
            .is_some_and(|rt| now_us.saturating_sub(self.cycle_stamp) > rt);
        let inflight = self.inflight() as f64;
        let advance = if self.pacing_gain > 1.0 {
            full_length && (self.loss_in_cycle || inflight >= self.inflight_target(self.pacing_gain))
        } else if self.pacing_gain < 1.0 {
            full_length || inflight <= self.inflight_target(1.0)
        } else {
            full_length
        };
        if advance {
            self.cycle_index = (self.cycle_index + 1) % PROBE_BW_GAINS.len();
            self.pacing_gain = PROBE_BW_GAINS[self.cycle_index];
            self.cycle_stamp = now_us;
            self.loss_in_cycle = false;
        }
    }

    fn update_pacing_rate(&mut self) {
        if let Some(bw) = self.btlbw.get() {
            let rate = self.pacing_gain * bw;
            if self.filled_pipe || rate > self.pacing_rate {
                self.pacing_rate = rate;
            }
        }
    }

    fn update_cwnd(&mut self) {
        let target = self.inflight_target(self.cwnd_gain);
        let inflight = self.inflight() as f64;
        if self.in_recovery && self.round_count < self.conservation_until_round {
            self.cwnd = self.cwnd.max(inflight + 1.0);
        } else if self.filled_pipe {
            self.cwnd = (self.cwnd + 1.0).min(target);
        } else if self.cwnd < target || self.delivered < INITIAL_CWND as u64 {
            self.cwnd += 1.0;
        }
        if self.filled_pipe {
            self.cwnd = self.cwnd.min(target);
        }
        self.cwnd = self.cwnd.max(MIN_CWND);
        if self.mode == BbrMode::ProbeRtt {
            self.cwnd = self.cwnd.min(self.probe_rtt_cwnd);
        }
    }
}

impl CongestionController for Bbr {
    fn name(&self) -> &'static str {
        "bbr"
    }

    fn on_send(&mut self, seq: u64, now_us: u64) {
        if self.records.is_empty() {
            self.first_sent_time = now_us;
            self.delivered_time = now_us;
        }
        self.records.push_back(SendRecord {
            seq,
            delivered: self.delivered,
            delivered_time: self.delivered_time,
            first_sent_time: self.first_sent_time,
            sent_time: now_us,
        });
        self.last_sent = Some(seq);
    }

    fn on_ack(&mut self, seq: u64, rtt_us: u64, now_us: u64) {
        // Holes before `seq` stay until their loss is reported.
        let Some(idx) = self.records.iter().position(|r| r.seq >= seq) else {
            return;
        };
        if self.records[idx].seq != seq {
            return;
        }
        let rec = self.records.remove(idx).expect("index in range");

        self.delivered += 1;
        self.delivered_time = now_us;
        self.first_sent_time = rec.sent_time;
        let send_elapsed = rec.sent_time.saturating_sub(rec.first_sent_time);
        let ack_elapsed = now_us.saturating_sub(rec.delivered_time);
        let interval = send_elapsed.max(ack_elapsed);
        let min_interval = self.rtprop_us.unwrap_or(0);
        let rate = (interval > 0 && interval >= min_interval)
            .then(|| (self.delivered - rec.delivered) as f64 / (interval as f64 / 1e6));

        self.round_start = false;
        if rec.delivered >= self.next_round_delivered {
            self.next_round_delivered = self.delivered;
            self.round_count += 1;
            self.round_start = true;
        }
        if let Some(rate) = rate {
            self.btlbw.update(self.round_count, rate);
        }
        self.btlbw.expire(self.round_count);

        // RTprop: strictly lower samples refresh it, otherwise it ages out
        let expired = self.rtprop_expired(now_us);
        if self.rtprop_us.is_none_or(|rt| rtt_us < rt) || expired {
            self.rtprop_us = Some(rtt_us);
            self.rtprop_stamp = now_us;
        }
        if expired && self.mode != BbrMode::ProbeRtt {
            self.enter_probe_rtt();
        }

        if self.in_recovery && seq > self.recovery_until {
            self.in_recovery = false;
            self.cwnd = self.cwnd.max(self.prior_cwnd);
        }

        if !self.filled_pipe && self.round_start {
            if let Some(bw) = self.btlbw.get() {
                if bw >= self.full_bw * 1.25 {
                    self.full_bw = bw;
                    self.full_bw_count = 0;
                } else {
                    self.full_bw_count += 1;
                    self.filled_pipe = self.full_bw_count >= 3;
                }
            }
        }
        if self.mode == BbrMode::Startup && self.filled_pipe {
            self.mode = BbrMode::Drain;
            self.pacing_gain = 1.0 / self.high_gain;
            self.cwnd_gain = self.steady_cwnd_gain;
        }
        if self.mode == BbrMode::Drain && self.inflight() as f64 <= self.inflight_target(1.0) {
            self.enter_probe_bw(now_us);
        }
        if self.mode == BbrMode::ProbeBw {
            self.update_cycle_phase(now_us);
        }
        self.handle_probe_rtt(now_us);

        self.update_pacing_rate();
        self.update_cwnd();
    }

    fn on_loss(&mut self, seq: u64, _now_us: u64) {
        let Some(idx) = self.records.iter().position(|r| r.seq == seq) else {
            return;
        };
        self.records.remove(idx);
        self.loss_in_cycle = true;
        if !self.in_recovery {
            self.in_recovery = true;
            self.recovery_until = self.last_sent.unwrap_or(seq);
            self.prior_cwnd = if self.mode == BbrMode::ProbeRtt { self.prior_cwnd.max(self.cwnd) } else { self.cwnd };
            self.conservation_until_round = self.round_count + 1;
            self.cwnd = self.inflight() as f64 + 1.0;
        } else {
            self.cwnd -= 1.0;
        }
        self.cwnd = self.cwnd.max(MIN_CWND);
    }

    fn on_timeout(&mut self, _now_us: u64) {
        self.records.clear();
        if !self.in_recovery {
            self.prior_cwnd = self.cwnd;
        }
        self.in_recovery = true;
        self.recovery_until = self.last_sent.unwrap_or(0);
        self.conservation_until_round = self.round_count + 1;
        self.cwnd = MIN_CWND;
    }

    fn on_tick(&mut self, now_us: u64) {
        if self.rtprop_expired(now_us) && self.mode != BbrMode::ProbeRtt {
            self.enter_probe_rtt();
            self.update_cwnd();
        }
        if self.mode == BbrMode::ProbeRtt {
            self.round_start = false;
            self.handle_probe_rtt(now_us);
        }
    }

    fn cwnd_packets(&self) -> u64 {
        (self.cwnd.floor() as u64).max(1)
    }

    fn pacing_rate_pps(&self) -> f64 {
        self.pacing_rate
    }

    fn mode(&self) -> &'static str {
        match self.mode {
            BbrMode::Startup => "startup",
            BbrMode::Drain => "drain",
            BbrMode::ProbeBw => "probe_bw",
            BbrMode::ProbeRtt => "probe_rtt",
        }
    }

    fn bdp_estimate(&self) -> Option<f64> {
        Some(self.btlbw.get()? * self.rtprop_us? as f64 / 1e6)
    }
}
