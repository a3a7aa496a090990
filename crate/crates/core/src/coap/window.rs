//! NSTART-bounded sender window. NSTART=1 is Stop-and-Wait; larger values
//! run Go-Back-N with cumulative ACKs and a single exponential-backoff timer.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::sim::{RngStream, SimTime};
use crate::transport::TimerCmd;

pub const NSTART_MAX: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArqConfig {
    pub nstart: usize,
    /// Seconds; first timeout after a fresh transmission.
    pub rto_base: f64,
    /// Seconds; cap on the doubled timeout.
    pub rto_max: f64,
    /// Initial timeout is drawn from `[rto_base, rto_base * random_factor]`.
    pub random_factor: f64,
}

impl Default for ArqConfig {
    fn default() -> Self {
        ArqConfig {
            nstart: 1,
            rto_base: 2.0,
            rto_max: 64.0,
            random_factor: 1.0,
        }
    }
}

impl ArqConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=NSTART_MAX).contains(&self.nstart) {
            return Err(SimError::config(
                "coap.nstart",
                format!("{} is outside [1, {NSTART_MAX}]", self.nstart),
            ));
        }
        if !(self.rto_base.is_finite() && self.rto_base > 0.0) {
            return Err(SimError::config("coap.rto_base", "must be > 0"));
        }
        if !(self.rto_max.is_finite() && self.rto_max >= self.rto_base) {
            return Err(SimError::config("coap.rto_max", "must be >= rto_base"));
        }
        if !(self.random_factor.is_finite() && self.random_factor >= 1.0) {
            return Err(SimError::config("coap.random_factor", "must be >= 1"));
        }
        Ok(())
    }
}

/// One confirmable message owned by the window.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WindowEntry<T> {
    pub message_id: u16,
    pub item: T,
    pub transmissions: u32,
}

/// Result of an ACK.
#[derive(Debug)]
pub struct AckOutcome<T> {
    /// Entries released by this ACK, oldest first.
    pub acked: Vec<WindowEntry<T>>,
    pub timer: TimerCmd,
}

#[derive(Debug)]
pub struct ArqWindow<T> {
    cfg: ArqConfig,
    rng: RngStream,
    next_id: u16,
    pending: VecDeque<WindowEntry<T>>,
    in_flight: VecDeque<WindowEntry<T>>,
    backoff_exponent: u32,
    timer_armed: bool,
    timeouts: u64,
    peak_in_flight: usize,
}

impl<T: Clone> ArqWindow<T> {
    pub fn new(cfg: ArqConfig, rng: RngStream) -> Result<Self> {
        cfg.validate()?;
        Ok(ArqWindow {
            cfg,
            rng,
            next_id: 0,
            pending: VecDeque::new(),
            in_flight: VecDeque::new(),
            backoff_exponent: 0,
            timer_armed: false,
            timeouts: 0,
            peak_in_flight: 0,
        })
    }

    pub fn nstart(&self) -> usize {
        self.cfg.nstart
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight.len()
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    /// Sent at least once and not yet acknowledged, oldest first.
    pub fn unacked(&self) -> impl Iterator<Item = &WindowEntry<T>> {
        self.in_flight.iter()
    }

    /// Never sent yet.
    pub fn queued(&self) -> impl Iterator<Item = &WindowEntry<T>> {
        self.pending.iter()
    }

    pub fn is_idle(&self) -> bool {
        self.pending.is_empty() && self.in_flight.is_empty()
    }

    pub fn backoff_exponent(&self) -> u32 {
        self.backoff_exponent
    }

    pub fn timeouts(&self) -> u64 {
        self.timeouts
    }

    pub fn peak_in_flight(&self) -> usize {
        self.peak_in_flight
    }

    /// Oldest unacknowledged message id.
    pub fn base(&self) -> Option<u16> {
        self.in_flight.front().map(|e| e.message_id)
    }

    /// Id the next queued message will receive.
    pub fn next_id(&self) -> u16 {
        self.next_id
    }

    /// Current timeout without jitter: `rto_base * 2^k`, capped at `rto_max`.
    pub fn rto_secs(&self) -> f64 {
        let k = self.backoff_exponent.min(62);
        (self.cfg.rto_base * (1u64 << k) as f64).min(self.cfg.rto_max)
    }

    /// Queues an item and returns its message id.
    pub fn enqueue(&mut self, item: T) -> u16 {
        let id = self.next_id;
        self.next_id = self.next_id.wrapping_add(1);
        self.pending.push_back(WindowEntry {
            message_id: id,
            item,
            transmissions: 0,
        });
        id
    }

    /// Moves queued messages into flight while the window has room. The
    /// returned entries must be transmitted now.
    pub fn window_send(&mut self, now: SimTime) -> (Vec<WindowEntry<T>>, TimerCmd) {
        let mut out = Vec::new();
        while self.in_flight.len() < self.cfg.nstart {
            let Some(mut e) = self.pending.pop_front() else {
                break;
            };
            e.transmissions += 1;
            out.push(e.clone());
            self.in_flight.push_back(e);
        }
        self.peak_in_flight = self.peak_in_flight.max(self.in_flight.len());
        let timer = if !out.is_empty() && !self.timer_armed {
            self.arm(now)
        } else {
            TimerCmd::Keep
        };
        (out, timer)
    }

    /// Cumulative ACK: releases every in-flight message up to and including
    /// `message_id`. ACKs for ids not in flight are ignored.
    pub fn on_ack(&mut self, now: SimTime, message_id: u16) -> AckOutcome<T> {
        let Some(pos) = self
            .in_flight
            .iter()
            .position(|e| e.message_id == message_id)
        else {
            return AckOutcome {
                acked: Vec::new(),
                timer: TimerCmd::Keep,
            };
        };
        let acked: Vec<_> = self.in_flight.drain(..=pos).collect();
        self.backoff_exponent = 0;
        let timer = if self.in_flight.is_empty() {
            self.timer_armed = false;
            TimerCmd::Disarm
        } else {
            self.arm(now)
        };
        AckOutcome { acked, timer }
    }

    /// Timer expiry: everything in flight is sent again and the timeout doubles.
    pub fn on_timeout(&mut self, now: SimTime) -> (Vec<WindowEntry<T>>, TimerCmd) {
        self.timer_armed = false;
        if self.in_flight.is_empty() {
            return (Vec::new(), TimerCmd::Disarm);
        }
        self.timeouts += 1;
        self.backoff_exponent = self.backoff_exponent.saturating_add(1);
        for e in self.in_flight.iter_mut() {
            e.transmissions += 1;
        }
        let resend = self.in_flight.iter().cloned().collect();
        let timer = self.arm(now);
        (resend, timer)
    }

    fn arm(&mut self, now: SimTime) -> TimerCmd {
        let mut rto = self.rto_secs();
        if self.cfg.random_factor > 1.0 {
            let u = self.rng.unit_open_low();
            rto *= 1.0 + (self.cfg.random_factor - 1.0) * u;
        }
        self.timer_armed = true;
        TimerCmd::Arm(now + SimTime::from_secs_f64(rto))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::StreamId;

    fn window(nstart: usize) -> ArqWindow<u32> {
        let cfg = ArqConfig {
            nstart,
            ..ArqConfig::default()
        };
        ArqWindow::new(cfg, RngStream::new(1, StreamId::new("arq", 0))).unwrap()
    }

    fn t(s: f64) -> SimTime {
        SimTime::from_secs_f64(s)
    }

    #[test]
    fn nstart_out_of_range_is_rejected() {
        for n in [0, 101] {
            let cfg = ArqConfig {
                nstart: n,
                ..ArqConfig::default()
            };
            let err = cfg.validate().unwrap_err().to_string();
            assert!(err.contains("coap.nstart"), "{err}");
        }
    }

    #[test]
    fn stop_and_wait_alternates() {
        let mut w = window(1);
        for i in 0..4 {
            w.enqueue(i);
        }
        let mut now = t(0.0);
        let mut order = Vec::new();
        loop {
            let (sent, _) = w.window_send(now);
            assert!(sent.len() <= 1);
            let Some(e) = sent.first() else { break };
            order.push(format!("send{}", e.item));
            assert_eq!(w.in_flight(), 1);
            now += t(0.533);
            let out = w.on_ack(now, e.message_id);
            order.push(format!("ack{}", out.acked[0].item));
        }
        assert_eq!(
            order,
            ["send0", "ack0", "send1", "ack1", "send2", "ack2", "send3", "ack3"]
        );
        assert!(w.is_idle());
    }

    #[test]
    fn window_never_exceeds_nstart() {
        let mut w = window(3);
        for i in 0..10 {
            w.enqueue(i);
        }
        let (sent, timer) = w.window_send(t(0.0));
        assert_eq!(sent.len(), 3);
        assert_eq!(timer, TimerCmd::Arm(t(2.0)));
        assert_eq!(w.window_send(t(0.1)).0.len(), 0);
        assert_eq!(w.peak_in_flight(), 3);
    }

    #[test]
    fn cumulative_ack_slides_window() {
        let mut w = window(3);
        for i in 0..10 {
            w.enqueue(i);
        }
        w.window_send(t(0.0));
        // ACK for id 1 also covers id 0.
        let out = w.on_ack(t(0.5), 1);
        assert_eq!(out.acked.iter().map(|e| e.item).collect::<Vec<_>>(), [0, 1]);
        assert_eq!(out.timer, TimerCmd::Arm(t(2.5)));
        let (sent, _) = w.window_send(t(0.5));
        assert_eq!(sent.iter().map(|e| e.item).collect::<Vec<_>>(), [3, 4]);
        assert_eq!(w.base(), Some(2));
        // Stale ACK is ignored.
        assert!(w.on_ack(t(0.6), 0).acked.is_empty());
    }

    #[test]
    fn timeouts_double_and_resend_all_in_flight() {
        let mut w = window(3);
        for i in 0..5 {
            w.enqueue(i);
        }
        w.window_send(t(0.0));
        let mut now = t(2.0);
        let mut gaps = Vec::new();
        for _ in 0..7 {
            let (resend, timer) = w.on_timeout(now);
            assert_eq!(resend.iter().map(|e| e.item).collect::<Vec<_>>(), [0, 1, 2]);
            let TimerCmd::Arm(at) = timer else {
                panic!("timer not armed")
            };
            gaps.push((at - now).as_secs_f64());
            now = at;
        }
        assert_eq!(gaps, [4.0, 8.0, 16.0, 32.0, 64.0, 64.0, 64.0]);
        // Progress resets the backoff.
        w.on_ack(now, 0);
        assert_eq!(w.backoff_exponent(), 0);
        assert_eq!(w.rto_secs(), 2.0);
    }

    #[test]
    fn message_ids_wrap() {
        let mut w = window(2);
        for i in 0..65_538u32 {
            let id = w.enqueue(i);
            let (sent, _) = w.window_send(t(0.0));
            assert_eq!(sent[0].message_id, id);
            w.on_ack(t(0.0), id);
        }
        assert_eq!(w.next_id(), 2);
    }

    #[test]
    fn random_factor_stays_in_range() {
        let cfg = ArqConfig {
            nstart: 1,
            random_factor: 1.5,
            ..ArqConfig::default()
        };
        let mut w = ArqWindow::new(cfg, RngStream::new(3, StreamId::new("arq", 1))).unwrap();
        for i in 0..200u32 {
            let id = w.enqueue(i);
            let (_, timer) = w.window_send(t(0.0));
            let TimerCmd::Arm(at) = timer else { panic!() };
            let s = at.as_secs_f64();
            assert!((2.0..=3.0).contains(&s), "{s}");
            w.on_ack(t(0.0), id);
        }
    }
}
