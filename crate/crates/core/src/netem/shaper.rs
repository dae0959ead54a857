use std::collections::VecDeque;

use crate::sim::Micros;

/// Outcome of offering a packet to a [`Shaper`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Admission {
    /// Last bit leaves the shaper at this time.
    Departs(Micros),
    /// Tail drop: the queue could not hold the packet.
    Dropped,
}

/// Rate-limited FIFO with a byte-bounded queue.
///
/// Service is work-conserving: a packet starts service at
/// `max(arrival, previous departure)` and takes `bits / rate`. This is a
/// token bucket whose depth is zero, so an idle shaper still charges the
/// serialization time of the first packet.
///
/// Departure bookkeeping is kept in fractional microseconds so the long-run
/// rate is exact; reported departure times are rounded to whole microseconds.
#[derive(Debug, Clone)]
pub struct Shaper {
    rate_bps: f64,
    queue_limit_bytes: u64,
    busy_until: f64,
    in_system: VecDeque<(f64, u64)>,
    queued_bytes: u64,
}

impl Shaper {
    pub fn new(rate_bps: f64, queue_limit_bytes: u64) -> Self {
        assert!(rate_bps > 0.0, "shaper rate must be positive");
        Self {
            rate_bps,
            queue_limit_bytes,
            busy_until: 0.0,
            in_system: VecDeque::new(),
            queued_bytes: 0,
        }
    }

    pub fn rate_bps(&self) -> f64 {
        self.rate_bps
    }

    pub fn set_rate(&mut self, rate_bps: f64) {
        assert!(rate_bps > 0.0, "shaper rate must be positive");
        self.rate_bps = rate_bps;
    }

    /// Bytes admitted but not yet departed at time `t`.
    pub fn queued_bytes(&mut self, t: Micros) -> u64 {
        self.expire(t);
        self.queued_bytes
    }

    fn expire(&mut self, t: Micros) {
        while let Some(&(dep, bytes)) = self.in_system.front() {
            if dep > t as f64 {
                break;
            }
            self.in_system.pop_front();
            self.queued_bytes -= bytes;
        }
    }

    pub fn admit(&mut self, pkt_bytes: u64, t: Micros) -> Admission {
        let rate = self.rate_bps;
        self.admit_with(pkt_bytes, t, |_| rate)
    }

    /// Like [`Shaper::admit`], with the service rate taken from `rate_at`
    /// evaluated at the packet's service start time.
    pub fn admit_with<F>(&mut self, pkt_bytes: u64, t: Micros, rate_at: F) -> Admission
    where
        F: FnOnce(Micros) -> f64,
    {
        assert!(pkt_bytes > 0, "packets must carry at least one byte");
        self.expire(t);
        if self.queued_bytes + pkt_bytes > self.queue_limit_bytes {
            return Admission::Dropped;
        }
        let start = self.busy_until.max(t as f64);
        let rate = rate_at(start.ceil() as Micros);
        if rate <= 0.0 {
            // A dead link accepts nothing.
            return Admission::Dropped;
        }
        self.rate_bps = rate;
        let departure = start + (pkt_bytes * 8) as f64 * 1e6 / rate;
        self.busy_until = departure;
        self.in_system.push_back((departure, pkt_bytes));
        self.queued_bytes += pkt_bytes;
        Admission::Departs(departure.round() as Micros)
    }
}
