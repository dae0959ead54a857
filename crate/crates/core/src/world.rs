//! One self-contained emulation run: the event loop that wires clocks, the
//! network and the CC and video endpoints together.
//!
//! The ground station (EPC side) sends CC frames on the downlink and
//! displays video; the UAV receives CC and captures video for the uplink.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cc::{CcLog, ControlAction, ReceiverConfig, ReceiverCounters, ReceiverState, SenderState};
use crate::netem::{Delivery, Direction, FlightPath, GainCapacityModel, LinkConfig, Netem, PathCounters, Position};
use crate::sim::{EventQueue, Micros, NodeClock, SeededRng, MICROS_PER_SEC};
use crate::video::{
    self, EncoderModel, FpsController, FpsControllerConfig, FrameRecord, Reassembler, SegmentOutcome, SegmentRecord,
    VideoFrame, VideoLog, WindowFeedback,
};
use crate::wire::{self, SEGMENT_HEADER_LEN};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClockConfig {
    pub sync_interval_s: f64,
    pub max_residual_us: Micros,
    pub ground_drift_ppm: f64,
    pub uav_drift_ppm: f64,
    /// Constant added to node-local readings so wire timestamps are positive.
    pub epoch_us: Micros,
}

impl Default for ClockConfig {
    fn default() -> Self {
        Self {
            sync_interval_s: 10.0,
            max_residual_us: 1_000,
            ground_drift_ppm: 0.0,
            uav_drift_ppm: 0.0,
            epoch_us: 1_000_000_000,
        }
    }
}

impl ClockConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.sync_interval_s > 0.0) || self.max_residual_us < 0 {
            return Err("clock sync_interval_s must be > 0 and max_residual_us >= 0".into());
        }
        if !(self.ground_drift_ppm.abs() < 1e6 && self.uav_drift_ppm.abs() < 1e6) {
            return Err("clock drift must be within ±1e6 ppm".into());
        }
        Ok(())
    }

    fn clock(&self, drift_ppm: f64) -> NodeClock {
        NodeClock {
            epoch_us: self.epoch_us,
            true_offset_us: 0,
            drift_ppm,
            last_sync_us: 0,
            sync_interval_us: (self.sync_interval_s * 1e6).round() as Micros,
            max_residual_error_us: self.max_residual_us,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CcSetup {
    pub sender: SenderState,
    pub receiver: ReceiverConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VideoSetup {
    pub encoder: EncoderModel,
    pub controller: FpsControllerConfig,
    /// Disables the controller and captures at this rate.
    pub fixed_fps: Option<f64>,
    pub mtu_payload: u16,
    pub gap_timeout_us: Micros,
    pub display_latency_us: Micros,
}

impl Default for VideoSetup {
    fn default() -> Self {
        Self {
            encoder: EncoderModel::default(),
            controller: FpsControllerConfig::default(),
            fixed_fps: None,
            mtu_payload: 1_400,
            gap_timeout_us: 500_000,
            display_latency_us: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct WorldSetup {
    pub seed: u64,
    pub duration_us: Micros,
    /// Extra time after the senders stop, for in-flight traffic to land.
    pub drain_us: Micros,
    pub link: LinkConfig,
    pub gain: GainCapacityModel,
    pub flight: FlightPath,
    pub bs_position: Position,
    pub clocks: ClockConfig,
    pub cc: Option<CcSetup>,
    pub video: Option<VideoSetup>,
    pub trace: bool,
}

impl WorldSetup {
    pub fn new(seed: u64, duration_us: Micros) -> Self {
        Self {
            seed,
            duration_us,
            drain_us: 2 * MICROS_PER_SEC,
            link: LinkConfig::default(),
            gain: GainCapacityModel::default(),
            flight: FlightPath::default(),
            bs_position: [0.0, 0.0, 0.0],
            clocks: ClockConfig::default(),
            cc: None,
            video: None,
            trace: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Node {
    Ground,
    Uav,
}

#[derive(Debug, Clone)]
enum Event {
    Sync(Node),
    CcTick,
    CcArrive(Vec<u8>),
    CcPoll,
    VideoCapture,
    SegmentArrive {
        header: [u8; SEGMENT_HEADER_LEN],
        record: usize,
    },
    GapTimeout(u32),
    FeedbackWindow,
}

const STREAM_SYNC_GROUND: u64 = 1;
const STREAM_SYNC_UAV: u64 = 2;
const STREAM_DOWNLINK: u64 = 3;
const STREAM_UPLINK: u64 = 4;
const STREAM_ENCODER: u64 = 5;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CcOutput {
    pub log: CcLog,
    pub receiver: ReceiverCounters,
    pub netem: PathCounters,
    /// Frames still on the network at cut-off.
    pub in_flight: u64,
    /// Frames still in the receive buffer at cut-off.
    pub in_buffer: u64,
    /// Buffer occupancy after each poll.
    pub occupancy: Vec<u16>,
    pub last_action: ControlAction,
}

impl CcOutput {
    pub fn transmitted(&self) -> u64 {
        self.log.tx.len() as u64
    }
}

/// Context of one controller window, with geometry sampled at its midpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowContext {
    pub start_us: Micros,
    pub elevation_deg: f64,
    pub capacity_bps: f64,
    pub fps: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VideoOutput {
    pub log: VideoLog,
    pub netem: PathCounters,
    pub windows: Vec<WindowContext>,
    pub in_flight_segments: u64,
    pub duplicates: u64,
    pub corrupt_headers: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct WorldOutput {
    pub cc: Option<CcOutput>,
    pub video: Option<VideoOutput>,
    pub events: u64,
    /// SHA-256 of the dispatched `(time, sequence)` trace, when traced.
    pub trace_digest: Option<String>,
    pub end_us: Micros,
}

struct CcState {
    sender: SenderState,
    receiver: ReceiverState,
    occupancy: Vec<u16>,
}

struct VideoState {
    setup: VideoSetup,
    controller: FpsController,
    reassembler: Reassembler,
    next_seq: u32,
    frames: Vec<FrameRecord>,
    frame_index: HashMap<u32, usize>,
    segments: Vec<SegmentRecord>,
    windows: Vec<WindowContext>,
    win_sent: u64,
    win_dropped: u64,
    win_delay_sum: i128,
    win_delay_n: u64,
    corrupt_headers: u64,
    rng: SeededRng,
}

impl VideoState {
    fn fps(&self) -> f64 {
        self.setup.fixed_fps.unwrap_or_else(|| self.controller.fps())
    }

    fn window_us(&self) -> Micros {
        self.setup.controller.window_ms as Micros * 1_000
    }
}

pub struct World {
    queue: EventQueue<Event>,
    netem: Netem,
    ground_clock: NodeClock,
    uav_clock: NodeClock,
    rng_sync_ground: SeededRng,
    rng_sync_uav: SeededRng,
    rng_down: SeededRng,
    rng_up: SeededRng,
    duration_us: Micros,
    end_us: Micros,
    cc: Option<CcState>,
    video: Option<VideoState>,
}

impl World {
    pub fn new(setup: WorldSetup) -> Self {
        let root = SeededRng::new(setup.seed);
        let mut queue = EventQueue::new();
        if setup.trace {
            queue = queue.with_trace();
        }
        let end_us = setup.duration_us + setup.drain_us;
        let cc = setup.cc.map(|c| CcState {
            sender: c.sender,
            receiver: ReceiverState::new(c.receiver),
            occupancy: Vec::new(),
        });
        let video = setup.video.map(|v| VideoState {
            controller: FpsController::new(v.controller),
            reassembler: Reassembler::new(v.display_latency_us),
            setup: v,
            next_seq: 0,
            frames: Vec::new(),
            frame_index: HashMap::new(),
            segments: Vec::new(),
            windows: Vec::new(),
            win_sent: 0,
            win_dropped: 0,
            win_delay_sum: 0,
            win_delay_n: 0,
            corrupt_headers: 0,
            rng: root.fork(STREAM_ENCODER),
        });
        let mut world = World {
            queue,
            netem: Netem::new(setup.link, setup.gain, setup.flight).with_bs_position(setup.bs_position),
            ground_clock: setup.clocks.clock(setup.clocks.ground_drift_ppm),
            uav_clock: setup.clocks.clock(setup.clocks.uav_drift_ppm),
            rng_sync_ground: root.fork(STREAM_SYNC_GROUND),
            rng_sync_uav: root.fork(STREAM_SYNC_UAV),
            rng_down: root.fork(STREAM_DOWNLINK),
            rng_up: root.fork(STREAM_UPLINK),
            duration_us: setup.duration_us,
            end_us,
            cc,
            video,
        };
        world.prime();
        world
    }

    fn at(&mut self, t: Micros, e: Event) {
        if t <= self.end_us {
            self.queue.schedule(t, e).expect("events are scheduled forward in time");
        }
    }

    fn prime(&mut self) {
        self.at(0, Event::Sync(Node::Ground));
        self.at(0, Event::Sync(Node::Uav));
        if let Some(cc) = &self.cc {
            let first = cc.sender.first_tick();
            let poll = cc.receiver.config().start_offset_us;
            if first < self.duration_us {
                self.at(first, Event::CcTick);
            }
            self.at(poll, Event::CcPoll);
        }
        if let Some(v) = &self.video {
            let w = v.window_us();
            if self.duration_us > 0 {
                self.at(0, Event::VideoCapture);
            }
            self.at(w, Event::FeedbackWindow);
        }
    }

    pub fn netem(&self) -> &Netem {
        &self.netem
    }

    pub fn ground_clock(&self) -> &NodeClock {
        &self.ground_clock
    }

    pub fn uav_clock(&self) -> &NodeClock {
        &self.uav_clock
    }

    pub fn now(&self) -> Micros {
        self.queue.now()
    }

    /// Advances to `t` (bounded by the end of the run).
    pub fn run_until(&mut self, t: Micros) -> usize {
        let horizon = t.min(self.end_us);
        let mut n = 0;
        while let Some((t, ev)) = self.next_event(horizon) {
            self.dispatch(t, ev);
            n += 1;
        }
        n
    }

    fn next_event(&mut self, horizon: Micros) -> Option<(Micros, Event)> {
        let earliest = self.queue.pending().map(|(t, _)| t).min()?;
        if earliest > horizon {
            return None;
        }
        self.queue.pop()
    }

    pub fn run(mut self) -> WorldOutput {
        let end = self.end_us;
        self.run_until(end);
        self.finish()
    }

    fn dispatch(&mut self, t: Micros, ev: Event) {
        match ev {
            Event::Sync(node) => {
                let (clock, rng) = match node {
                    Node::Ground => (&mut self.ground_clock, &mut self.rng_sync_ground),
                    Node::Uav => (&mut self.uav_clock, &mut self.rng_sync_uav),
                };
                *clock = clock.ntp_sync(t, rng);
                let next = clock.next_sync_at();
                self.at(next, Event::Sync(node));
            }
            Event::CcTick => self.on_cc_tick(t),
            Event::CcArrive(datagram) => {
                if let Some(cc) = self.cc.as_mut() {
                    cc.receiver.enqueue_rx(datagram);
                }
            }
            Event::CcPoll => {
                let Some(cc) = self.cc.as_mut() else { return };
                let (_, next) = cc.receiver.receiver_poll(t, &self.uav_clock);
                cc.occupancy.push(cc.receiver.buffer_len() as u16);
                self.at(next, Event::CcPoll);
            }
            Event::VideoCapture => self.on_capture(t),
            Event::SegmentArrive { header, record } => self.on_segment(t, header, record),
            Event::GapTimeout(seq) => {
                if let Some(v) = self.video.as_mut() {
                    v.reassembler.on_gap_timeout(seq);
                }
            }
            Event::FeedbackWindow => self.on_window(t),
        }
    }

    fn on_cc_tick(&mut self, t: Micros) {
        let Some(cc) = self.cc.as_mut() else { return };
        let Some(emission) = cc.sender.sender_tick(t, &self.ground_clock) else {
            return;
        };
        let delivery = self
            .netem
            .deliver(Direction::Downlink, wire::CC_FRAME_LEN as u64, t, &mut self.rng_down);
        if let Delivery::Arrives(at) = delivery {
            self.at(at, Event::CcArrive(emission.datagram.to_vec()));
        }
        if let Some(next) = emission.next_tick.filter(|&n| n < self.duration_us) {
            self.at(next, Event::CcTick);
        }
    }

    fn on_capture(&mut self, t: Micros) {
        let Some(v) = self.video.as_mut() else { return };
        let fps = v.fps();
        let seq = v.next_seq;
        v.next_seq += 1;
        let frame: VideoFrame = video::capture_frame(&v.setup.encoder, seq, t, &self.uav_clock, &mut v.rng);
        let headers = video::segmentize(&frame, v.setup.mtu_payload, 0);
        let mut arrivals = Vec::with_capacity(headers.len());
        for h in &headers {
            let bytes = (SEGMENT_HEADER_LEN + usize::from(h.payload_len)) as u64;
            let delivery = self.netem.deliver(Direction::Uplink, bytes, t, &mut self.rng_up);
            let record = v.segments.len();
            v.segments.push(SegmentRecord {
                frame_seq: seq,
                segment_index: h.segment_index,
                payload_bytes: h.payload_len,
                t_send_us: t,
                t_arrive_us: None,
            });
            v.win_sent += 1;
            match delivery {
                Delivery::Arrives(at) => {
                    let header = wire::encode_segment_header(h).expect("segmentize emits valid headers");
                    arrivals.push((at, Event::SegmentArrive { header, record }));
                }
                Delivery::Dropped(_) => v.win_dropped += 1,
            }
        }
        v.frame_index.insert(seq, v.frames.len());
        v.frames.push(FrameRecord {
            frame_seq: seq,
            t_vt_us: frame.capture_ts,
            t_vr_us: None,
            size_bits: frame.size_bits(),
            segs_sent: headers.len() as u32,
            segs_lost: 0,
            fps_at_capture_milli: (fps * 1e3).round() as u32,
            capture_true_us: t,
        });
        let next = t + (MICROS_PER_SEC as f64 / fps).round() as Micros;
        for (at, ev) in arrivals {
            self.at(at, ev);
        }
        if next < self.duration_us {
            self.at(next, Event::VideoCapture);
        }
    }

    fn on_segment(&mut self, t: Micros, header: [u8; SEGMENT_HEADER_LEN], record: usize) {
        let Some(v) = self.video.as_mut() else { return };
        v.segments[record].t_arrive_us = Some(t);
        let h = match wire::decode_segment_header(&header) {
            Ok(h) => h,
            Err(_) => {
                v.corrupt_headers += 1;
                return;
            }
        };
        let local = self.ground_clock.local_now(t);
        let r = v.reassembler.reassemble(&h, local);
        if let SegmentOutcome::Completed(c) = r.outcome {
            if let Some(&i) = v.frame_index.get(&c.frame.frame_seq) {
                v.frames[i].t_vr_us = Some(c.display_ts);
            }
            v.win_delay_sum += i128::from(c.display_ts - c.frame.capture_ts);
            v.win_delay_n += 1;
        }
        let timeout = v.setup.gap_timeout_us;
        for seq in r.arm_gap_timers {
            self.at(t + timeout, Event::GapTimeout(seq));
        }
    }

    fn on_window(&mut self, t: Micros) {
        let Some(w) = self.video.as_ref().map(VideoState::window_us) else {
            return;
        };
        let mid = t - w / 2;
        let elevation = self.netem.elevation_at(mid);
        let capacity = self.netem.uplink_capacity_at(mid);
        let local = self.ground_clock.local_now(t);
        let Some(v) = self.video.as_mut() else { return };
        let mean_delay_us = if v.win_delay_n > 0 {
            (v.win_delay_sum / i128::from(v.win_delay_n)) as Micros
        } else {
            // Nothing completed: the age of the oldest outstanding frame is
            // the best available delay signal.
            v.reassembler.oldest_pending_capture().map_or(0, |c| local - c)
        };
        let loss_fraction = if v.win_sent > 0 {
            v.win_dropped as f64 / v.win_sent as f64
        } else {
            0.0
        };
        let fps_before = v.fps();
        if v.setup.fixed_fps.is_none() {
            v.controller.adapt_fps(WindowFeedback {
                loss_fraction,
                mean_delay_us,
            });
        }
        v.windows.push(WindowContext {
            start_us: t - w,
            elevation_deg: elevation,
            capacity_bps: capacity,
            fps: fps_before,
        });
        v.win_sent = 0;
        v.win_dropped = 0;
        v.win_delay_sum = 0;
        v.win_delay_n = 0;
        if t + w <= self.duration_us {
            self.at(t + w, Event::FeedbackWindow);
        }
    }

    fn finish(mut self) -> WorldOutput {
        let mut cc_in_flight = 0;
        let mut seg_in_flight = 0;
        for (_, e) in self.queue.pending() {
            match e {
                Event::CcArrive(_) => cc_in_flight += 1,
                Event::SegmentArrive { .. } => seg_in_flight += 1,
                _ => {}
            }
        }
        let cc = self.cc.take().map(|c| CcOutput {
            netem: *self.netem.counters(Direction::Downlink),
            receiver: *c.receiver.counters(),
            in_flight: cc_in_flight,
            in_buffer: c.receiver.buffer_len() as u64,
            last_action: c.receiver.last_action(),
            occupancy: c.occupancy,
            log: CcLog {
                tx: c.sender.into_log(),
                rx: c.receiver.into_log(),
            },
        });
        let video = self.video.take().map(|mut v| {
            let mut delivered = vec![0u32; v.frames.len()];
            for s in &v.segments {
                if s.t_arrive_us.is_some() {
                    delivered[v.frame_index[&s.frame_seq]] += 1;
                }
            }
            for (f, d) in v.frames.iter_mut().zip(delivered) {
                f.segs_lost = f.segs_sent - d;
                if f.segs_lost > 0 {
                    f.t_vr_us = None;
                }
            }
            VideoOutput {
                netem: *self.netem.counters(Direction::Uplink),
                windows: v.windows,
                in_flight_segments: seg_in_flight,
                duplicates: v.reassembler.duplicates(),
                corrupt_headers: v.corrupt_headers,
                log: VideoLog {
                    frames: v.frames,
                    segments: v.segments,
                },
            }
        });
        let trace_digest = self.queue.trace().map(|trace| {
            let mut h = Sha256::new();
            for (t, seq) in trace {
                h.update(t.to_be_bytes());
                h.update(seq.to_be_bytes());
            }
            hex::encode(h.finalize())
        });
        WorldOutput {
            cc,
            video,
            events: self.queue.dispatched(),
            trace_digest,
            end_us: self.end_us,
        }
    }
}
