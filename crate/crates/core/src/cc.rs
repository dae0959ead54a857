//! Downlink command-and-control link.
//!
//! The ground station emits one 20-byte CC frame every `1/f` seconds without
//! retransmission. The UAV side holds arriving datagrams in a bounded FIFO
//! and takes at most one per control-loop iteration; an iteration costs the
//! nominal sleep plus a processing time, so the buffer drains at
//! `1 / (poll_period + processing_time)`. When nothing usable is queued the
//! UAV is commanded with all-zero (failsafe) values.

use std::collections::VecDeque;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::sim::{Micros, NodeClock, MICROS_PER_SEC};
use crate::wire::{self, CcFrame, CC_FRAME_LEN};

/// Source of raw joystick axes `[roll, pitch, yaw, thrust]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StickSource {
    Constant {
        axes: [i16; 4],
    },
    /// Sine on every axis with per-axis phase shifts of a quarter period.
    Waveform {
        amplitude: i16,
        period_s: f64,
    },
    /// Replays recorded samples, one per frame; exhausted at the end.
    Recorded {
        samples: Vec<[i16; 4]>,
        #[serde(skip)]
        cursor: usize,
    },
}

impl Default for StickSource {
    fn default() -> Self {
        StickSource::Constant { axes: [0; 4] }
    }
}

impl StickSource {
    pub fn next_axes(&mut self, t: Micros) -> Option<[i16; 4]> {
        match self {
            StickSource::Constant { axes } => Some(*axes),
            StickSource::Waveform { amplitude, period_s } => {
                let phase = t as f64 / 1e6 / *period_s * std::f64::consts::TAU;
                let amp = f64::from(*amplitude);
                Some(std::array::from_fn(|i| {
                    let v = amp * (phase + i as f64 * std::f64::consts::FRAC_PI_2).sin();
                    v.round().clamp(f64::from(i16::MIN), f64::from(i16::MAX)) as i16
                }))
            }
            StickSource::Recorded { samples, cursor } => {
                let s = samples.get(*cursor).copied();
                *cursor += 1;
                s
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CcLogEntry {
    pub frame_id: u32,
    pub timestamp_us: Micros,
}

/// Transmit and receive logs of one CC session.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CcLog {
    pub tx: Vec<CcLogEntry>,
    pub rx: Vec<CcLogEntry>,
}

impl CcLog {
    /// CSV with columns `frame_id,timestamp_us,side`.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["frame_id", "timestamp_us", "side"])?;
        for (side, log) in [("tx", &self.tx), ("rx", &self.rx)] {
            for e in log {
                w.write_record([e.frame_id.to_string(), e.timestamp_us.to_string(), side.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SenderState {
    send_frequency_hz: f64,
    start_us: Micros,
    ticks: u64,
    frame_limit: Option<u64>,
    next_frame_id: u32,
    stick: StickSource,
    cc_log_tx: Vec<CcLogEntry>,
}

/// What one sender tick hands to the network.
#[derive(Debug, Clone, PartialEq)]
pub struct SenderEmission {
    pub frame: CcFrame,
    pub datagram: [u8; CC_FRAME_LEN],
    /// Time of the next tick, or `None` once the sender is done.
    pub next_tick: Option<Micros>,
}

impl SenderState {
    pub fn new(send_frequency_hz: f64, stick: StickSource) -> Self {
        assert!(send_frequency_hz > 0.0, "send frequency must be positive");
        Self {
            send_frequency_hz,
            start_us: 0,
            ticks: 0,
            frame_limit: None,
            next_frame_id: 0,
            stick,
            cc_log_tx: Vec::new(),
        }
    }

    /// Stop after `n` frames.
    pub fn with_frame_limit(mut self, n: u64) -> Self {
        self.frame_limit = Some(n);
        self
    }

    pub fn with_start(mut self, t: Micros) -> Self {
        self.start_us = t;
        self
    }

    pub fn send_frequency_hz(&self) -> f64 {
        self.send_frequency_hz
    }

    /// True time of tick `n`. Computed from the start rather than by
    /// accumulation, so non-integer periods do not drift.
    pub fn tick_time(&self, n: u64) -> Micros {
        self.start_us + (n as f64 * MICROS_PER_SEC as f64 / self.send_frequency_hz).round() as Micros
    }

    pub fn first_tick(&self) -> Micros {
        self.tick_time(0)
    }

    pub fn next_frame_id(&self) -> u32 {
        self.next_frame_id
    }

    pub fn log(&self) -> &[CcLogEntry] {
        &self.cc_log_tx
    }

    pub fn into_log(self) -> Vec<CcLogEntry> {
        self.cc_log_tx
    }

    /// One iteration of the send loop at true time `t`: read the stick,
    /// normalize, encode, log `(frame_id, T_Ct)`. Returns `None` when the
    /// stick source is exhausted or the frame limit is reached.
    pub fn sender_tick(&mut self, t: Micros, clock: &NodeClock) -> Option<SenderEmission> {
        if self.frame_limit.is_some_and(|n| self.ticks >= n) {
            return None;
        }
        let axes = self.stick.next_axes(t)?;
        let [roll, pitch, yaw, thrust] = axes.map(wire::normalize_stick);
        let frame = CcFrame {
            frame_id: self.next_frame_id,
            roll,
            pitch,
            yaw,
            thrust,
        };
        let datagram = wire::encode_cc(&frame).expect("normalized values are in range");
        self.cc_log_tx.push(CcLogEntry {
            frame_id: frame.frame_id,
            timestamp_us: clock.local_now(t),
        });
        self.next_frame_id = self.next_frame_id.wrapping_add(1);
        self.ticks += 1;
        let done = self.frame_limit.is_some_and(|n| self.ticks >= n);
        Some(SenderEmission {
            frame,
            datagram,
            next_tick: (!done).then(|| self.tick_time(self.ticks)),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReceiverConfig {
    pub capacity_frames: usize,
    pub poll_period_us: Micros,
    pub processing_time_us: Micros,
    /// First poll instant relative to session start.
    pub start_offset_us: Micros,
}

impl Default for ReceiverConfig {
    fn default() -> Self {
        Self {
            capacity_frames: 54,
            poll_period_us: 20_000,
            processing_time_us: 5_000,
            start_offset_us: 0,
        }
    }
}

impl ReceiverConfig {
    /// Time between consecutive polls.
    pub fn cycle_us(&self) -> Micros {
        self.poll_period_us + self.processing_time_us
    }

    /// Frames per second the receive loop can drain.
    pub fn drain_rate_hz(&self) -> f64 {
        MICROS_PER_SEC as f64 / self.cycle_us() as f64
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.capacity_frames == 0 {
            return Err("receiver capacity_frames must be >= 1".into());
        }
        if self.poll_period_us < 0 || self.processing_time_us < 0 || self.cycle_us() == 0 {
            return Err("receiver poll_period_us + processing_time_us must be positive".into());
        }
        if self.start_offset_us < 0 {
            return Err("receiver start_offset_us must be >= 0".into());
        }
        Ok(())
    }
}

/// Command applied to the flight controller after one poll.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlAction {
    pub roll: f32,
    pub pitch: f32,
    pub yaw: f32,
    pub thrust: f32,
    pub is_failsafe: bool,
}

impl ControlAction {
    pub const FAILSAFE: ControlAction = ControlAction {
        roll: 0.0,
        pitch: 0.0,
        yaw: 0.0,
        thrust: 0.0,
        is_failsafe: true,
    };

    fn from_frame(f: &CcFrame) -> Self {
        ControlAction {
            roll: f.roll,
            pitch: f.pitch,
            yaw: f.yaw,
            thrust: f.thrust,
            is_failsafe: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Enqueue {
    Queued { len: usize },
    Overflow,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReceiverCounters {
    pub enqueued: u64,
    pub overflow_drops: u64,
    pub polls: u64,
    pub failsafe_polls: u64,
    pub corrupt: u64,
    pub max_occupancy: usize,
}

#[derive(Debug, Clone)]
pub struct ReceiverState {
    cfg: ReceiverConfig,
    rx_buffer: VecDeque<Vec<u8>>,
    counters: ReceiverCounters,
    last_action: ControlAction,
    cc_log_rx: Vec<CcLogEntry>,
}

impl ReceiverState {
    pub fn new(cfg: ReceiverConfig) -> Self {
        Self {
            rx_buffer: VecDeque::with_capacity(cfg.capacity_frames),
            cfg,
            counters: ReceiverCounters::default(),
            last_action: ControlAction::FAILSAFE,
            cc_log_rx: Vec::new(),
        }
    }

    pub fn config(&self) -> &ReceiverConfig {
        &self.cfg
    }

    pub fn buffer_len(&self) -> usize {
        self.rx_buffer.len()
    }

    pub fn counters(&self) -> &ReceiverCounters {
        &self.counters
    }

    pub fn last_action(&self) -> ControlAction {
        self.last_action
    }

    pub fn log(&self) -> &[CcLogEntry] {
        &self.cc_log_rx
    }

    pub fn into_log(self) -> Vec<CcLogEntry> {
        self.cc_log_rx
    }

    /// Socket-buffer admission with tail drop.
    pub fn enqueue_rx(&mut self, datagram: Vec<u8>) -> Enqueue {
        if self.rx_buffer.len() >= self.cfg.capacity_frames {
            self.counters.overflow_drops += 1;
            return Enqueue::Overflow;
        }
        self.rx_buffer.push_back(datagram);
        self.counters.enqueued += 1;
        self.counters.max_occupancy = self.counters.max_occupancy.max(self.rx_buffer.len());
        Enqueue::Queued {
            len: self.rx_buffer.len(),
        }
    }

    /// One receive-loop iteration at true time `t`. Returns the applied
    /// action and the time of the next poll.
    pub fn receiver_poll(&mut self, t: Micros, clock: &NodeClock) -> (ControlAction, Micros) {
        self.counters.polls += 1;
        let decoded = self.rx_buffer.pop_front().map(|d| wire::decode_cc(&d));
        let action = match decoded {
            Some(Ok(frame)) => {
                self.cc_log_rx.push(CcLogEntry {
                    frame_id: frame.frame_id,
                    timestamp_us: clock.local_now(t),
                });
                ControlAction::from_frame(&frame)
            }
            Some(Err(_)) => {
                self.counters.corrupt += 1;
                self.counters.failsafe_polls += 1;
                ControlAction::FAILSAFE
            }
            None => {
                self.counters.failsafe_polls += 1;
                ControlAction::FAILSAFE
            }
        };
        self.last_action = action;
        (action, t + self.cfg.cycle_us())
    }
}
