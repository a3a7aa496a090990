use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use super::SimTime;
use crate::error::{Result, SimError};

/// Handle returned by [`Scheduler::schedule`]; lets the caller cancel the event.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EventHandle(u64);

struct Entry<E> {
    fire_at: SimTime,
    seq: u64,
    payload: E,
}

impl<E> PartialEq for Entry<E> {
    fn eq(&self, other: &Self) -> bool {
        self.fire_at == other.fire_at && self.seq == other.seq
    }
}

impl<E> Eq for Entry<E> {}

impl<E> PartialOrd for Entry<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Entry<E> {
    // BinaryHeap is a max-heap: invert so the earliest (fire_at, seq) pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.fire_at, other.seq).cmp(&(self.fire_at, self.seq))
    }
}

/// Future-event set with a monotone clock.
///
/// Events firing at the same instant are dispatched in insertion order, so a
/// run is a pure function of its inputs.
pub struct Scheduler<E> {
    heap: BinaryHeap<Entry<E>>,
    live: HashSet<u64>,
    now: SimTime,
    next_seq: u64,
    dispatched: u64,
}

impl<E> Default for Scheduler<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> Scheduler<E> {
    pub fn new() -> Self {
        Scheduler {
            heap: BinaryHeap::new(),
            live: HashSet::new(),
            now: SimTime::ZERO,
            next_seq: 0,
            dispatched: 0,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    /// Total events dispatched since creation.
    pub fn dispatched(&self) -> u64 {
        self.dispatched
    }

    pub fn pending(&self) -> usize {
        self.live.len()
    }

    pub fn is_idle(&self) -> bool {
        self.live.is_empty()
    }

    pub fn schedule(&mut self, fire_at: SimTime, payload: E) -> Result<EventHandle> {
        if fire_at < self.now {
            return Err(SimError::ScheduleInPast {
                fire_at,
                now: self.now,
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.live.insert(seq);
        self.heap.push(Entry {
            fire_at,
            seq,
            payload,
        });
        Ok(EventHandle(seq))
    }

    /// Schedules `delay` after the current clock; cannot fail.
    pub fn schedule_in(&mut self, delay: SimTime, payload: E) -> EventHandle {
        let at = self.now + delay;
        self.schedule(at, payload)
            .expect("relative schedule is never in the past")
    }

    /// Returns `true` if the event was still pending.
    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        self.live.remove(&handle.0)
    }

    /// Fire time of the next live event, if any.
    pub fn peek_time(&mut self) -> Option<SimTime> {
        self.skip_cancelled();
        self.heap.peek().map(|e| e.fire_at)
    }

    /// Pops the next live event and advances the clock to its fire time.
    pub fn pop(&mut self) -> Option<(SimTime, E)> {
        self.skip_cancelled();
        let entry = self.heap.pop()?;
        self.live.remove(&entry.seq);
        debug_assert!(entry.fire_at >= self.now);
        self.now = entry.fire_at;
        self.dispatched += 1;
        Some((entry.fire_at, entry.payload))
    }

    /// Dispatches every event with `fire_at <= t_end` through `handler`, then
    /// leaves the clock at `t_end`. Returns the number of events dispatched.
    pub fn run_until<F>(&mut self, t_end: SimTime, mut handler: F) -> Result<usize>
    where
        F: FnMut(&mut Self, SimTime, E),
    {
        if t_end < self.now {
            return Err(SimError::ScheduleInPast {
                fire_at: t_end,
                now: self.now,
            });
        }
        let mut count = 0;
        while let Some(t) = self.peek_time() {
            if t > t_end {
                break;
            }
            let (t, ev) = self.pop().expect("peeked event exists");
            handler(self, t, ev);
            count += 1;
        }
        self.now = t_end;
        Ok(count)
    }

    fn skip_cancelled(&mut self) {
        while let Some(top) = self.heap.peek() {
            if self.live.contains(&top.seq) {
                break;
            }
            self.heap.pop();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn event_at_zero_from_zero_dispatches_first() {
        let mut s = Scheduler::new();
        s.schedule(SimTime::from_secs(1), "later").unwrap();
        s.schedule(SimTime::ZERO, "first").unwrap();
        assert_eq!(s.pop().unwrap(), (SimTime::ZERO, "first"));
    }

    #[test]
    fn equal_times_dispatch_in_insertion_order() {
        let mut s = Scheduler::new();
        let t = SimTime::from_secs(1);
        s.schedule(t, 'A').unwrap();
        s.schedule(t, 'B').unwrap();
        assert_eq!(s.pop().unwrap().1, 'A');
        assert_eq!(s.pop().unwrap().1, 'B');
    }

    #[test]
    fn scheduling_in_the_past_is_an_error() {
        let mut s = Scheduler::new();
        s.schedule(SimTime::from_secs(2), ()).unwrap();
        s.pop();
        let err = s.schedule(SimTime::from_secs(1), ()).unwrap_err();
        assert!(matches!(err, SimError::ScheduleInPast { .. }));
    }

    #[test]
    fn random_events_dispatch_sorted_by_time_then_seq() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut s = Scheduler::new();
        let mut expected = Vec::new();
        for i in 0..100_000u64 {
            // Coarse times force many ties.
            let t = SimTime::from_micros(rng.gen_range(0..5_000));
            s.schedule(t, i).unwrap();
            expected.push((t, i));
        }
        expected.sort();
        let mut got = Vec::with_capacity(expected.len());
        while let Some(e) = s.pop() {
            got.push(e);
        }
        assert_eq!(got, expected);
    }

    #[test]
    fn run_until_on_empty_queue_moves_clock() {
        let mut s: Scheduler<()> = Scheduler::new();
        let n = s.run_until(SimTime::from_secs(5), |_, _, _| {}).unwrap();
        assert_eq!(n, 0);
        assert_eq!(s.now(), SimTime::from_secs(5));
    }

    #[test]
    fn run_until_stops_at_horizon() {
        let mut s = Scheduler::new();
        for k in 1..=3 {
            s.schedule(SimTime::from_secs(k), k).unwrap();
        }
        let mut seen = Vec::new();
        let n = s
            .run_until(SimTime::from_secs(2), |_, _, k| seen.push(k))
            .unwrap();
        assert_eq!(n, 2);
        assert_eq!(seen, vec![1, 2]);
        assert_eq!(s.pending(), 1);
    }

    #[test]
    fn cancelled_event_never_fires() {
        let mut s = Scheduler::new();
        let h = s.schedule(SimTime::from_secs(1), "cancelled").unwrap();
        s.schedule(SimTime::from_secs(2), "kept").unwrap();
        assert!(s.cancel(h));
        assert!(!s.cancel(h));
        let mut seen = Vec::new();
        s.run_until(SimTime::from_secs(10), |_, _, e| seen.push(e))
            .unwrap();
        assert_eq!(seen, vec!["kept"]);
    }

    #[test]
    fn handler_can_schedule_follow_ups() {
        let mut s = Scheduler::new();
        s.schedule(SimTime::ZERO, 0u32).unwrap();
        let mut fired = 0;
        s.run_until(SimTime::from_secs(1), |s, _, n| {
            fired += 1;
            if n < 9 {
                s.schedule_in(SimTime::from_millis(10), n + 1);
            }
        })
        .unwrap();
        assert_eq!(fired, 10);
    }
}
