//! Deterministic discrete-event engine: virtual clock and ordered event queue.
//!
//! Events fire in (fire_time, insertion sequence) order. The sequence
//! tie-break makes simultaneous events FIFO, which is the whole
//! reproducibility guarantee: same inputs, same firing order, on any
//! platform.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::collections::BTreeSet;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum KernelError {
    #[error("event delay must be >= 0 and finite, got {0}")]
    NegativeDelay(f64),
}

/// Handle for a scheduled event, usable for cancellation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EventHandle(u64);

#[derive(Debug)]
struct Scheduled<P> {
    fire_time: f64,
    seq: u64,
    payload: P,
}

impl<P> PartialEq for Scheduled<P> {
    fn eq(&self, other: &Self) -> bool {
        self.seq == other.seq
    }
}

impl<P> Eq for Scheduled<P> {}

impl<P> PartialOrd for Scheduled<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<P> Ord for Scheduled<P> {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed: BinaryHeap is a max-heap, we want earliest (time, seq) first.
        other
            .fire_time
            .total_cmp(&self.fire_time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// A fired event as handed to the dispatcher.
#[derive(Debug)]
pub struct Event<P> {
    pub at: f64,
    pub handle: EventHandle,
    pub payload: P,
}

/// Statistics returned by [`Kernel::run_until`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunStats {
    pub events_fired: u64,
    pub final_time: f64,
}

/// Single-threaded event queue with a virtual clock.
#[derive(Debug)]
pub struct Kernel<P> {
    now: f64,
    seq: u64,
    fired: u64,
    queue: BinaryHeap<Scheduled<P>>,
    cancelled: BTreeSet<u64>,
}

impl<P> Default for Kernel<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P> Kernel<P> {
    pub fn new() -> Self {
        Kernel {
            now: 0.0,
            seq: 0,
            fired: 0,
            queue: BinaryHeap::new(),
            cancelled: BTreeSet::new(),
        }
    }

    /// Current virtual time in seconds.
    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn events_fired(&self) -> u64 {
        self.fired
    }

    pub fn pending(&self) -> usize {
        self.queue.len() - self.cancelled.len()
    }

    /// Enqueue `payload` to fire `delay` seconds from now.
    pub fn schedule(&mut self, delay: f64, payload: P) -> Result<EventHandle, KernelError> {
        if !delay.is_finite() || delay < 0.0 {
            return Err(KernelError::NegativeDelay(delay));
        }
        let seq = self.seq;
        self.seq += 1;
        self.queue.push(Scheduled {
            fire_time: self.now + delay,
            seq,
            payload,
        });
        Ok(EventHandle(seq))
    }

    /// Drop a pending event. Returns false if it already fired or was
    /// cancelled before.
    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        if handle.0 >= self.seq {
            return false;
        }
        self.cancelled.insert(handle.0)
    }

    /// Fire time of the next live event, without firing it.
    pub fn peek_time(&mut self) -> Option<f64> {
        loop {
            let (seq, fire_time) = {
                let top = self.queue.peek()?;
                (top.seq, top.fire_time)
            };
            if self.cancelled.remove(&seq) {
                self.queue.pop();
                continue;
            }
            return Some(fire_time);
        }
    }

    /// Pop the next event with fire_time <= t_end, advancing the clock to it.
    pub fn pop_due(&mut self, t_end: f64) -> Option<Event<P>> {
        loop {
            let due = self.queue.peek().is_some_and(|top| top.fire_time <= t_end);
            if !due {
                return None;
            }
            let ev = self.queue.pop().expect("peeked");
            if self.cancelled.remove(&ev.seq) {
                continue;
            }
            debug_assert!(ev.fire_time >= self.now, "event in the past");
            self.now = self.now.max(ev.fire_time);
            self.fired += 1;
            return Some(Event {
                at: self.now,
                handle: EventHandle(ev.seq),
                payload: ev.payload,
            });
        }
    }

    /// Fire every event due at or before `t_end` through `dispatch`, then
    /// advance the clock to `t_end`. The dispatcher may schedule and cancel
    /// freely; newly scheduled events inside the window fire in the same run.
    pub fn run_until<W>(
        &mut self,
        t_end: f64,
        world: &mut W,
        mut dispatch: impl FnMut(&mut W, &mut Kernel<P>, Event<P>),
    ) -> RunStats {
        assert!(t_end >= self.now, "run_until into the past");
        let start_fired = self.fired;
        while let Some(ev) = self.pop_due(t_end) {
            dispatch(world, self, ev);
        }
        self.now = t_end;
        RunStats {
            events_fired: self.fired - start_fired,
            final_time: self.now,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_delay_fires_after_current_event_same_time() {
        let mut k: Kernel<&'static str> = Kernel::new();
        k.schedule(5.0, "a").unwrap();
        let mut log: Vec<(f64, &str)> = Vec::new();
        k.run_until(10.0, &mut log, |log, k, ev| {
            log.push((ev.at, ev.payload));
            if ev.payload == "a" {
                k.schedule(0.0, "b").unwrap();
            }
        });
        assert_eq!(log, vec![(5.0, "a"), (5.0, "b")]);
    }

    #[test]
    fn same_time_fires_in_schedule_order() {
        let mut k: Kernel<u32> = Kernel::new();
        k.schedule(1.0, 1).unwrap();
        k.schedule(1.0, 2).unwrap();
        k.schedule(1.0, 3).unwrap();
        let mut log = Vec::new();
        k.run_until(2.0, &mut log, |log, _, ev| log.push(ev.payload));
        assert_eq!(log, vec![1, 2, 3]);
    }

    #[test]
    fn negative_delay_rejected() {
        let mut k: Kernel<()> = Kernel::new();
        assert_eq!(k.schedule(-1.0, ()), Err(KernelError::NegativeDelay(-1.0)));
        assert!(k.schedule(f64::NAN, ()).is_err());
    }

    #[test]
    fn empty_run_reaches_t_end() {
        let mut k: Kernel<()> = Kernel::new();
        let stats = k.run_until(100.0, &mut (), |_, _, _| {});
        assert_eq!(stats.events_fired, 0);
        assert_eq!(stats.final_time, 100.0);
        assert_eq!(k.now(), 100.0);
    }

    #[test]
    fn nested_scheduling_fires_within_one_run() {
        let mut k: Kernel<u32> = Kernel::new();
        k.schedule(1.0, 0).unwrap();
        let mut log = Vec::new();
        k.run_until(10.0, &mut log, |log, k, ev| {
            log.push((ev.at, ev.payload));
            if ev.payload < 3 {
                k.schedule(2.0, ev.payload + 1).unwrap();
            }
        });
        assert_eq!(log, vec![(1.0, 0), (3.0, 1), (5.0, 2), (7.0, 3)]);
    }

    #[test]
    fn events_beyond_window_stay_queued() {
        let mut k: Kernel<u32> = Kernel::new();
        k.schedule(1.0, 1).unwrap();
        k.schedule(50.0, 2).unwrap();
        let mut log = Vec::new();
        k.run_until(10.0, &mut log, |log, _, ev| log.push(ev.payload));
        assert_eq!(log, vec![1]);
        assert_eq!(k.pending(), 1);
        k.run_until(60.0, &mut log, |log, _, ev| log.push(ev.payload));
        assert_eq!(log, vec![1, 2]);
    }

    #[test]
    fn cancel_suppresses_event() {
        let mut k: Kernel<u32> = Kernel::new();
        let h = k.schedule(1.0, 1).unwrap();
        k.schedule(2.0, 2).unwrap();
        assert!(k.cancel(h));
        assert!(!k.cancel(h));
        let mut log = Vec::new();
        k.run_until(5.0, &mut log, |log, _, ev| log.push(ev.payload));
        assert_eq!(log, vec![2]);
    }

    #[test]
    fn identical_setup_identical_stats() {
        let run = || {
            let mut k: Kernel<u64> = Kernel::new();
            for i in 0..100 {
                k.schedule((i % 7) as f64, i).unwrap();
            }
            let mut log = Vec::new();
            let stats = k.run_until(10.0, &mut log, |log, k, ev| {
                log.push(ev.payload);
                if ev.payload % 3 == 0 {
                    k.schedule(0.5, ev.payload + 1000).unwrap();
                }
            });
            (log, stats.events_fired, stats.final_time)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn clock_is_monotone() {
        let mut k: Kernel<u32> = Kernel::new();
        k.schedule(3.0, 1).unwrap();
        k.schedule(1.0, 2).unwrap();
        let mut last = 0.0;
        k.run_until(5.0, &mut last, |last, k, ev| {
            assert!(ev.at >= *last);
            *last = ev.at;
            assert_eq!(k.now(), ev.at);
        });
    }
}
