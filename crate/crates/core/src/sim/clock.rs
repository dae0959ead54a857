use serde::{Deserialize, Serialize};

use super::{Micros, SeededRng};

/// A node's local clock: true simulation time plus an offset and a linear
/// drift accumulated since the last synchronization.
///
/// `epoch_us` is a constant added to every reading so that node-local
/// timestamps stay positive on the wire; it cancels in every delay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeClock {
    pub epoch_us: Micros,
    pub true_offset_us: Micros,
    pub drift_ppm: f64,
    pub last_sync_us: Micros,
    pub sync_interval_us: Micros,
    pub max_residual_error_us: Micros,
}

impl Default for NodeClock {
    fn default() -> Self {
        Self {
            epoch_us: 0,
            true_offset_us: 0,
            drift_ppm: 0.0,
            last_sync_us: 0,
            sync_interval_us: 10_000_000,
            max_residual_error_us: 1_000,
        }
    }
}

impl NodeClock {
    pub fn with_offset(mut self, offset_us: Micros) -> Self {
        self.true_offset_us = offset_us;
        self
    }

    pub fn with_drift(mut self, drift_ppm: f64) -> Self {
        self.drift_ppm = drift_ppm;
        self
    }

    pub fn with_epoch(mut self, epoch_us: Micros) -> Self {
        self.epoch_us = epoch_us;
        self
    }

    fn drift_term(&self, t_true: Micros) -> Micros {
        let elapsed = (t_true - self.last_sync_us) as f64;
        (self.drift_ppm * elapsed / 1e6).round() as Micros
    }

    /// Node-local timestamp at true time `t_true` (`t_true >= last_sync_us`).
    pub fn local_now(&self, t_true: Micros) -> Micros {
        debug_assert!(t_true >= self.last_sync_us);
        self.epoch_us + t_true + self.true_offset_us + self.drift_term(t_true)
    }

    /// Signed error of the local clock against true time, epoch excluded.
    pub fn error_at(&self, t_true: Micros) -> Micros {
        self.local_now(t_true) - self.epoch_us - t_true
    }

    /// Worst-case |error| between two syncs.
    pub fn error_bound(&self) -> Micros {
        let drift = (self.drift_ppm.abs() * self.sync_interval_us as f64 / 1e6).ceil() as Micros;
        self.max_residual_error_us + drift
    }

    /// NTP-style correction: the offset is replaced by a residual drawn
    /// uniformly from `[-max_residual_error_us, +max_residual_error_us]`.
    pub fn ntp_sync(&self, t_true: Micros, rng: &mut SeededRng) -> NodeClock {
        let bound = self.max_residual_error_us;
        let residual = if bound == 0 { 0 } else { rng.uniform_i64(-bound, bound) };
        NodeClock {
            true_offset_us: residual,
            last_sync_us: t_true,
            ..self.clone()
        }
    }

    /// When the follow-up query should be issued after a sync at `last_sync_us`.
    pub fn next_sync_at(&self) -> Micros {
        self.last_sync_us + self.sync_interval_us
    }
}
