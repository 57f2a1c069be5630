//! Monitor-interval bookkeeping shared by the PCC-family controllers.
//!
//! A monitor interval (MI) is a stretch of sending at one fixed rate. Every
//! packet sent during it is attributed to it by sequence number; once each
//! of those packets is acked or lost, the MI is complete and yields a
//! [`MiResult`].

use std::collections::VecDeque;

use super::Srtt;

#[derive(Debug, Clone)]
struct MonitorInterval {
    id: u64,
    rate_pps: f64,
    start_us: u64,
    planned_end_us: u64,
    closed_at_us: Option<u64>,
    first_seq: Option<u64>,
    last_seq: Option<u64>,
    sent: u64,
    acked: u64,
    lost: u64,
    first_send_us: u64,
    last_send_us: u64,
    first_ack_us: u64,
    last_ack_us: u64,
    // least-squares accumulators for rtt against send time (seconds)
    n: f64,
    sum_t: f64,
    sum_r: f64,
    sum_tt: f64,
    sum_tr: f64,
}

impl MonitorInterval {
    fn contains(&self, seq: u64) -> bool {
        matches!((self.first_seq, self.last_seq), (Some(a), Some(b)) if a <= seq && seq <= b)
    }

    fn complete(&self) -> bool {
        self.closed_at_us.is_some() && self.acked + self.lost >= self.sent
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct MiResult {
    pub id: u64,
    pub rate_pps: f64,
    /// Achieved sending rate, packets per second.
    pub send_rate_pps: f64,
    /// Delivery rate seen by the ACK stream, packets per second.
    pub throughput_pps: f64,
    pub loss_rate: f64,
    /// Slope of RTT against send time, seconds per second.
    pub rtt_gradient: f64,
    pub sent: u64,
}

/// Deliveries happen on 1 ms link slots, so an ACK span can read one slot
/// long without any queue growth.
const ACK_RESOLUTION_US: u64 = 1000;

/// Startup phases stop raising the rate while this many intervals are still
/// waiting for feedback, so a sender with no ACKs cannot grow without bound.
pub(crate) const MAX_UNRESOLVED: usize = 4;

#[derive(Debug, Clone)]
pub(crate) struct MiTracker {
    open: VecDeque<MonitorInterval>,
    next_id: u64,
    pub srtt: Srtt,
    initial_rtt_us: u64,
}

impl MiTracker {
    pub(crate) fn new(initial_rtt_us: u64) -> Self {
        Self { open: VecDeque::new(), next_id: 0, srtt: Srtt::default(), initial_rtt_us }
    }

    pub(crate) fn rtt_estimate_us(&self) -> f64 {
        self.srtt.get().unwrap_or(self.initial_rtt_us as f64)
    }

    /// Intervals started but not yet popped as results.
    pub(crate) fn unresolved(&self) -> usize {
        self.open.len()
    }

    /// Rate of the MI currently accepting packets.
    pub(crate) fn current_rate(&self) -> Option<f64> {
        self.open.back().filter(|m| m.closed_at_us.is_none()).map(|m| m.rate_pps)
    }

    /// True when there is no open MI or the open one has run its course.
    pub(crate) fn needs_new_interval(&self, now_us: u64) -> bool {
        match self.open.back() {
            Some(m) if m.closed_at_us.is_none() => now_us >= m.planned_end_us,
            _ => true,
        }
    }

    /// Close the running MI (if any) and start a new one at `rate_pps`,
    /// lasting one RTT estimate but long enough for a handful of packets.
    pub(crate) fn start(&mut self, rate_pps: f64, now_us: u64) -> u64 {
        if let Some(m) = self.open.back_mut() {
            if m.closed_at_us.is_none() {
                m.closed_at_us = Some(now_us);
            }
        }
        let min_len_us = 5.0 / rate_pps * 1e6;
        let len = self.rtt_estimate_us().max(min_len_us).max(1000.0) as u64;
        let id = self.next_id;
        self.next_id += 1;
        self.open.push_back(MonitorInterval {
            id,
            rate_pps,
            start_us: now_us,
            planned_end_us: now_us + len,
            closed_at_us: None,
            first_seq: None,
            last_seq: None,
            sent: 0,
            acked: 0,
            lost: 0,
            first_send_us: 0,
            last_send_us: 0,
            first_ack_us: 0,
            last_ack_us: 0,
            n: 0.0,
            sum_t: 0.0,
            sum_r: 0.0,
            sum_tt: 0.0,
            sum_tr: 0.0,
        });
        id
    }

    pub(crate) fn on_send(&mut self, seq: u64, now_us: u64) {
        if let Some(m) = self.open.back_mut().filter(|m| m.closed_at_us.is_none()) {
            if m.sent == 0 {
                m.first_send_us = now_us;
            }
            m.last_send_us = now_us;
            m.first_seq.get_or_insert(seq);
            m.last_seq = Some(seq);
            m.sent += 1;
        }
    }

    fn find(&mut self, seq: u64) -> Option<&mut MonitorInterval> {
        self.open.iter_mut().find(|m| m.contains(seq))
    }

    pub(crate) fn on_ack(&mut self, seq: u64, rtt_us: u64, now_us: u64) {
        self.srtt.update(rtt_us);
        if let Some(m) = self.find(seq) {
            if m.acked == 0 {
                m.first_ack_us = now_us;
            }
            m.acked += 1;
            m.last_ack_us = now_us;
            let t = now_us.saturating_sub(rtt_us) as f64 / 1e6;
            let r = rtt_us as f64 / 1e6;
            m.n += 1.0;
            m.sum_t += t;
            m.sum_r += r;
            m.sum_tt += t * t;
            m.sum_tr += t * r;
        }
    }

    pub(crate) fn on_loss(&mut self, seq: u64) {
        if let Some(m) = self.find(seq) {
            m.lost += 1;
        }
    }

    /// Every outstanding packet of every MI is lost.
    pub(crate) fn on_timeout(&mut self, now_us: u64) {
        for m in self.open.iter_mut() {
            m.lost = m.sent - m.acked;
            m.closed_at_us.get_or_insert(now_us);
        }
    }

    /// Pop the oldest MI if it is complete.
    pub(crate) fn pop_completed(&mut self) -> Option<MiResult> {
        if !self.open.front()?.complete() {
            return None;
        }
        let m = self.open.pop_front()?;
        let closed = m.closed_at_us.expect("complete implies closed");
        // spans between first and last event, widened by n/(n-1) so that n
        // evenly paced events count as n gaps
        let span = |first: u64, last: u64, n: u64| {
            if n > 1 {
                (last - first) as f64 / 1e6 * n as f64 / (n - 1) as f64
            } else {
                0.0
            }
        };
        let open_secs = (closed.saturating_sub(m.start_us)).max(1) as f64 / 1e6;
        let send_secs = match span(m.first_send_us, m.last_send_us, m.sent) {
            s if s > 0.0 => s,
            _ => open_secs,
        };
        let send_rate = m.sent as f64 / send_secs;
        let throughput = if m.acked == 0 {
            0.0
        } else {
            let last = m.last_ack_us.saturating_sub(ACK_RESOLUTION_US).max(m.first_ack_us);
            m.acked as f64 / span(m.first_ack_us, last, m.acked).max(send_secs)
        };
        let loss_rate = if m.sent == 0 { 0.0 } else { m.lost as f64 / m.sent as f64 };
        let denom = m.n * m.sum_tt - m.sum_t * m.sum_t;
        let rtt_gradient = if m.n >= 2.0 && denom.abs() > 1e-15 {
            (m.n * m.sum_tr - m.sum_t * m.sum_r) / denom
        } else {
            0.0
        };
        Some(MiResult {
            id: m.id,
            rate_pps: m.rate_pps,
            send_rate_pps: send_rate,
            throughput_pps: throughput,
            loss_rate,
            rtt_gradient,
            sent: m.sent,
        })
    }

    /// Packets a rate-based sender may keep outstanding: two RTTs' worth.
    pub(crate) fn window_for(&self, rate_pps: f64) -> u64 {
        let w = 2.0 * rate_pps * self.rtt_estimate_us() / 1e6;
        (w.ceil() as u64).max(super::INITIAL_CWND as u64)
    }
}
