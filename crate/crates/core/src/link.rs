//! Trace-driven bottleneck: a DropTail FIFO drained on the trace schedule.

use std::collections::VecDeque;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::ChannelTrace;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LinkError {
    #[error("clock regression: asked to advance to ms {requested}, already at {current}")]
    ClockRegression { requested: u64, current: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Packet {
    pub flow_id: u32,
    pub seq: u64,
    pub size_bytes: u32,
    /// Send time in microseconds; the sender sits directly at the queue ingress.
    pub sent_at: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BufferCapacity {
    Infinite,
    Packets(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnqueueOutcome {
    Accepted,
    Dropped,
}

#[derive(Debug, Clone)]
pub struct BottleneckLink {
    trace: Arc<ChannelTrace>,
    capacity: BufferCapacity,
    queue: VecDeque<Packet>,
    prop_delay_ms: u64,
    /// First millisecond whose opportunities have not been consumed yet.
    next_ms: u64,
    enqueued: u64,
    delivered: u64,
    dropped: u64,
}

impl BottleneckLink {
    pub fn new(trace: Arc<ChannelTrace>, capacity: BufferCapacity, prop_delay_ms: u64) -> Self {
        Self {
            trace,
            capacity,
            queue: VecDeque::new(),
            prop_delay_ms,
            next_ms: 0,
            enqueued: 0,
            delivered: 0,
            dropped: 0,
        }
    }

    pub fn trace(&self) -> &ChannelTrace {
        &self.trace
    }

    pub fn capacity(&self) -> BufferCapacity {
        self.capacity
    }

    pub fn prop_delay_ms(&self) -> u64 {
        self.prop_delay_ms
    }

    pub fn prop_delay_us(&self) -> u64 {
        self.prop_delay_ms * 1000
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    /// Packets offered to the queue, including dropped ones.
    pub fn enqueued(&self) -> u64 {
        self.enqueued
    }

    /// Packets released onto the wire.
    pub fn delivered(&self) -> u64 {
        self.delivered
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    pub fn next_ms(&self) -> u64 {
        self.next_ms
    }

    pub fn enqueue(&mut self, packet: Packet, now_us: u64) -> EnqueueOutcome {
        debug_assert!(packet.sent_at <= now_us);
        debug_assert!(packet.size_bytes <= self.trace.packet_bytes());
        self.enqueued += 1;
        if let BufferCapacity::Packets(cap) = self.capacity {
            if self.queue.len() as u64 >= cap {
                self.dropped += 1;
                return EnqueueOutcome::Dropped;
            }
        }
        self.queue.push_back(packet);
        EnqueueOutcome::Accepted
    }

    /// Consume the opportunities of millisecond `ms` (the next unconsumed one
    /// or later), appending released packets and their egress times to `out`.
    /// Unused opportunities are lost. Milliseconds skipped over are consumed
    /// without releasing anything, so callers must not skip a millisecond
    /// while the queue is nonempty; `advance_to` handles that.
    pub fn release_ms(&mut self, ms: u64, out: &mut Vec<(Packet, u64)>) {
        debug_assert!(ms >= self.next_ms);
        self.next_ms = ms + 1;
        if self.queue.is_empty() {
            return;
        }
        let egress = ms * 1000;
        let budget = self.trace.opportunities_at(ms);
        for _ in 0..budget {
            match self.queue.front() {
                Some(p) if p.sent_at <= egress => {
                    let p = self.queue.pop_front().expect("front exists");
                    self.delivered += 1;
                    out.push((p, egress));
                }
                _ => break,
            }
        }
    }

    /// Release everything scheduled up to and including millisecond `ms`.
    ///
    /// The receiver sees each packet at `egress + prop_delay`.
    pub fn advance_to(&mut self, ms: u64) -> Result<Vec<(Packet, u64)>, LinkError> {
        let mut out = Vec::new();
        if self.next_ms > 0 && ms < self.next_ms - 1 {
            return Err(LinkError::ClockRegression { requested: ms, current: self.next_ms - 1 });
        }
        let mut m = self.next_ms;
        while m <= ms {
            if self.queue.is_empty() {
                self.next_ms = ms + 1;
                break;
            }
            self.release_ms(m, &mut out);
            m += 1;
        }
        Ok(out)
    }
}

/// One bandwidth-delay product in packets, rounded, at least 1.
pub fn bdp_packets(trace: &ChannelTrace, min_rtt_ms: f64) -> u64 {
    let bits = trace.average_capacity() * min_rtt_ms / 1000.0;
    let pkts = (bits / (trace.packet_bytes() as f64 * 8.0)).round();
    (pkts as u64).max(1)
}

pub fn buffer_from_bdp(trace: &ChannelTrace, min_rtt_ms: f64, multiple: f64) -> u64 {
    let pkts = (multiple * bdp_packets(trace, min_rtt_ms) as f64).round();
    (pkts as u64).max(1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{constant_trace, ChannelTrace};

    fn pkt(seq: u64, at: u64) -> Packet {
        Packet { flow_id: 0, seq, size_bytes: 1500, sent_at: at }
    }

    fn link(counts: Vec<u32>, cap: BufferCapacity) -> BottleneckLink {
        BottleneckLink::new(Arc::new(ChannelTrace::from_counts(counts, 1500).unwrap()), cap, 10)
    }

    #[test]
    fn droptail_on_full_buffer() {
        let mut l = link(vec![1], BufferCapacity::Packets(2));
        assert_eq!(l.enqueue(pkt(1, 0), 0), EnqueueOutcome::Accepted);
        assert_eq!(l.enqueue(pkt(2, 0), 0), EnqueueOutcome::Accepted);
        assert_eq!(l.enqueue(pkt(3, 0), 0), EnqueueOutcome::Dropped);
        assert_eq!(l.dropped(), 1);
        assert_eq!(l.enqueued(), 3);
    }

    #[test]
    fn infinite_buffer_never_drops() {
        let mut l = link(vec![1], BufferCapacity::Infinite);
        for i in 0..1_000_000 {
            assert_eq!(l.enqueue(pkt(i, 0), 0), EnqueueOutcome::Accepted);
        }
        assert_eq!(l.queue_len(), 1_000_000);
    }

    #[test]
    fn release_follows_schedule() {
        let mut l = link(vec![2, 0, 1], BufferCapacity::Infinite);
        for i in 0..3 {
            l.enqueue(pkt(i, 0), 0);
        }
        let out = l.advance_to(0).unwrap();
        assert_eq!(out.iter().map(|(p, t)| (p.seq, *t)).collect::<Vec<_>>(), vec![(0, 0), (1, 0)]);
        assert!(l.advance_to(1).unwrap().is_empty());
        assert_eq!(l.advance_to(2).unwrap()[0], (pkt(2, 0), 2000));
        assert_eq!(l.delivered(), 3);
    }

    #[test]
    fn unused_slots_are_not_banked() {
        let mut l = link(vec![1; 10], BufferCapacity::Infinite);
        assert!(l.advance_to(5).unwrap().is_empty());
        for i in 0..3 {
            l.enqueue(pkt(i, 6000), 6000);
        }
        let out = l.advance_to(6).unwrap();
        assert_eq!(out.len(), 1);
    }

    #[test]
    fn packets_not_released_before_they_arrive() {
        let mut l = link(vec![5; 4], BufferCapacity::Infinite);
        l.enqueue(pkt(0, 1500), 1500);
        let out = l.advance_to(2).unwrap();
        assert_eq!(out, vec![(pkt(0, 1500), 2000)]);
    }

    #[test]
    fn clock_regression() {
        let mut l = link(vec![1; 10], BufferCapacity::Infinite);
        l.advance_to(5).unwrap();
        assert!(l.advance_to(5).unwrap().is_empty());
        assert_eq!(
            l.advance_to(3),
            Err(LinkError::ClockRegression { requested: 3, current: 5 })
        );
    }

    #[test]
    fn saturated_constant_trace_delivers_every_slot() {
        let t = constant_trace(48.0, 15_000).unwrap();
        let mut l = BottleneckLink::new(Arc::new(t), BufferCapacity::Infinite, 10);
        for i in 0..70_000 {
            l.enqueue(pkt(i, 0), 0);
        }
        let out = l.advance_to(14_999).unwrap();
        assert_eq!(out.len(), 60_000);
    }

    #[test]
    fn trace_wraps() {
        let mut l = link(vec![1, 3], BufferCapacity::Infinite);
        for i in 0..10 {
            l.enqueue(pkt(i, 0), 0);
        }
        let per_ms: Vec<usize> = (0..4)
            .map(|m| l.advance_to(m).unwrap().len())
            .collect();
        assert_eq!(per_ms, vec![1, 3, 1, 3]);
    }

    #[test]
    fn bdp_arithmetic() {
        let t48 = constant_trace(48.0, 1000).unwrap();
        assert_eq!(bdp_packets(&t48, 20.0), 80);
        let g = constant_trace(1000.0, 1000).unwrap();
        assert_eq!(bdp_packets(&g, 20.0), 1667);
        let zero = ChannelTrace::from_counts(vec![0; 100], 1500).unwrap();
        assert_eq!(bdp_packets(&zero, 20.0), 1);
        assert_eq!(buffer_from_bdp(&t48, 20.0, 2.0), 160);
        assert_eq!(buffer_from_bdp(&t48, 20.0, 4.5), 360);
        assert_eq!(buffer_from_bdp(&t48, 20.0, 0.001), 1);
    }
}
