//! Uplink video path: frame-size process, segmentation, reassembly and the
//! frame-rate controller.
//!
//! There is no pixel content. A frame is its sequence number, capture
//! timestamp and encoded size; segments carry a real wire header and a
//! payload length.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::sim::{Micros, NodeClock, SeededRng};
use crate::wire::VideoSegmentHeader;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Resolution {
    R320x240,
    R640x480,
    R1280x720,
}

impl Resolution {
    pub const ALL: [Resolution; 3] = [Resolution::R320x240, Resolution::R640x480, Resolution::R1280x720];

    pub fn dimensions(self) -> (u32, u32) {
        match self {
            Resolution::R320x240 => (320, 240),
            Resolution::R640x480 => (640, 480),
            Resolution::R1280x720 => (1280, 720),
        }
    }

    /// Encoder output at the reference frame rate. 320x240 is the measured
    /// unconstrained rate; the larger two are calibration values chosen above
    /// the 25-PRB uplink cap.
    pub fn nominal_bitrate_bps(self) -> f64 {
        match self {
            Resolution::R320x240 => 7.08e6,
            Resolution::R640x480 => 12.0e6,
            Resolution::R1280x720 => 20.0e6,
        }
    }
}

impl fmt::Display for Resolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (w, h) = self.dimensions();
        write!(f, "{w}x{h}")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unsupported resolution {0:?} (expected 320x240, 640x480 or 1280x720)")]
pub struct UnsupportedResolution(pub String);

impl FromStr for Resolution {
    type Err = UnsupportedResolution;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('×', "x");
        Resolution::ALL
            .into_iter()
            .find(|r| r.to_string() == norm)
            .ok_or_else(|| UnsupportedResolution(s.to_string()))
    }
}

impl TryFrom<String> for Resolution {
    type Error = UnsupportedResolution;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Resolution> for String {
    fn from(r: Resolution) -> String {
        r.to_string()
    }
}

/// Encoded frame-size process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderModel {
    pub nominal_bitrate_bps: f64,
    pub size_jitter_cv: f64,
    pub reference_fps: f64,
}

impl Default for EncoderModel {
    fn default() -> Self {
        Self::for_resolution(Resolution::R320x240)
    }
}

impl EncoderModel {
    pub fn for_resolution(r: Resolution) -> Self {
        Self {
            nominal_bitrate_bps: r.nominal_bitrate_bps(),
            size_jitter_cv: 0.2,
            reference_fps: 30.0,
        }
    }

    /// Mean encoded frame size in bits. Frame size is set by resolution and
    /// content, so the stream bitrate scales with the frame rate.
    pub fn mean_frame_bits(&self) -> f64 {
        self.nominal_bitrate_bps / self.reference_fps
    }

    /// Stream bitrate at `fps`.
    pub fn bitrate_at(&self, fps: f64) -> f64 {
        self.mean_frame_bits() * fps
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.nominal_bitrate_bps > 0.0 && self.reference_fps > 0.0 && self.size_jitter_cv >= 0.0) {
            return Err("encoder needs positive bitrate and reference fps, and cv >= 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoFrame {
    pub frame_seq: u32,
    /// Sender-local capture time (T_Vt).
    pub capture_ts: Micros,
    pub size_bytes: u32,
}

impl VideoFrame {
    pub fn size_bits(&self) -> u64 {
        u64::from(self.size_bytes) * 8
    }
}

/// Draws one frame captured at true time `t`. Sizes are log-normal around
/// [`EncoderModel::mean_frame_bits`] and rounded up to whole bytes.
pub fn capture_frame(
    encoder: &EncoderModel,
    frame_seq: u32,
    t: Micros,
    clock: &NodeClock,
    rng: &mut SeededRng,
) -> VideoFrame {
    let bits = rng.lognormal_mean_cv(encoder.mean_frame_bits(), encoder.size_jitter_cv);
    let size_bytes = (bits / 8.0).ceil().clamp(1.0, f64::from(u32::MAX)) as u32;
    VideoFrame {
        frame_seq,
        capture_ts: clock.local_now(t),
        size_bytes,
    }
}

/// Splits a frame into `ceil(size / mtu_payload)` segments.
pub fn segmentize(frame: &VideoFrame, mtu_payload: u16, stream_epoch: u16) -> Vec<VideoSegmentHeader> {
    assert!(mtu_payload > 0, "mtu_payload must be positive");
    let mtu = u32::from(mtu_payload);
    let count = frame.size_bytes.div_ceil(mtu).max(1);
    let count = u16::try_from(count).expect("frame exceeds 65535 segments");
    (0..count)
        .map(|i| {
            let offset = u32::from(i) * mtu;
            let len = (frame.size_bytes - offset).min(mtu) as u16;
            VideoSegmentHeader {
                stream_epoch,
                frame_seq: frame.frame_seq,
                segment_index: i,
                segment_count: count,
                capture_ts: frame.capture_ts as u64,
                payload_len: len,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletedFrame {
    pub frame: VideoFrame,
    /// Receiver-local display time (T_Vr).
    pub display_ts: Micros,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LostFrame {
    pub frame_seq: u32,
    pub segments_received: u16,
    pub segment_count: u16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentOutcome {
    Completed(CompletedFrame),
    Pending,
    /// Already-received segment, or a segment of a finished frame.
    Duplicate,
}

#[derive(Debug, Clone)]
struct PendingFrame {
    received: Vec<bool>,
    received_count: u16,
    bytes: u32,
    capture_ts: Micros,
    superseded: bool,
}

/// Receiver-side frame reassembly.
///
/// Segments of one frame arrive in order on the FIFO path, so once a newer
/// frame shows up an incomplete older frame can only be finished by late
/// segments. It is declared lost when its gap timer fires.
#[derive(Debug, Clone, Default)]
pub struct Reassembler {
    pending: BTreeMap<u32, PendingFrame>,
    finished: BTreeSet<u32>,
    duplicates: u64,
    display_latency_us: Micros,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reassembly {
    pub outcome: SegmentOutcome,
    /// Older frames that just became superseded; arm a gap timer for each.
    pub arm_gap_timers: Vec<u32>,
}

impl Reassembler {
    pub fn new(display_latency_us: Micros) -> Self {
        Self {
            display_latency_us,
            ..Self::default()
        }
    }

    pub fn duplicates(&self) -> u64 {
        self.duplicates
    }

    pub fn pending_frames(&self) -> impl Iterator<Item = u32> + '_ {
        self.pending.keys().copied()
    }

    /// Capture timestamp of the oldest incomplete frame.
    pub fn oldest_pending_capture(&self) -> Option<Micros> {
        self.pending.values().map(|p| p.capture_ts).min()
    }

    /// Handles one arriving segment; `local_now` is the receiver clock.
    pub fn reassemble(&mut self, h: &VideoSegmentHeader, local_now: Micros) -> Reassembly {
        let mut arm = Vec::new();
        for (&seq, p) in self.pending.range_mut(..h.frame_seq) {
            if !p.superseded {
                p.superseded = true;
                arm.push(seq);
            }
        }
        if self.finished.contains(&h.frame_seq) {
            self.duplicates += 1;
            return Reassembly {
                outcome: SegmentOutcome::Duplicate,
                arm_gap_timers: arm,
            };
        }
        let p = self.pending.entry(h.frame_seq).or_insert_with(|| PendingFrame {
            received: vec![false; usize::from(h.segment_count)],
            received_count: 0,
            bytes: 0,
            capture_ts: h.capture_ts as Micros,
            superseded: false,
        });
        let idx = usize::from(h.segment_index);
        if idx >= p.received.len() || p.received[idx] {
            self.duplicates += 1;
            return Reassembly {
                outcome: SegmentOutcome::Duplicate,
                arm_gap_timers: arm,
            };
        }
        p.received[idx] = true;
        p.received_count += 1;
        p.bytes += u32::from(h.payload_len);
        let outcome = if usize::from(p.received_count) == p.received.len() {
            let p = self.pending.remove(&h.frame_seq).expect("present");
            self.finished.insert(h.frame_seq);
            SegmentOutcome::Completed(CompletedFrame {
                frame: VideoFrame {
                    frame_seq: h.frame_seq,
                    capture_ts: p.capture_ts,
                    size_bytes: p.bytes,
                },
                display_ts: local_now + self.display_latency_us,
            })
        } else {
            SegmentOutcome::Pending
        };
        Reassembly {
            outcome,
            arm_gap_timers: arm,
        }
    }

    /// Gap timer expiry: declares `frame_seq` lost if still incomplete.
    pub fn on_gap_timeout(&mut self, frame_seq: u32) -> Option<LostFrame> {
        let p = self.pending.remove(&frame_seq)?;
        self.finished.insert(frame_seq);
        Some(LostFrame {
            frame_seq,
            segments_received: p.received_count,
            segment_count: p.received.len() as u16,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FpsControllerConfig {
    pub min_fps: f64,
    pub max_fps: f64,
    pub initial_fps: f64,
    pub increase_step: f64,
    pub decrease_factor: f64,
    pub loss_threshold: f64,
    pub delay_threshold_us: Micros,
    pub window_ms: u64,
}

impl Default for FpsControllerConfig {
    fn default() -> Self {
        Self {
            min_fps: 1.0,
            max_fps: 30.0,
            initial_fps: 30.0,
            increase_step: 1.0,
            decrease_factor: 0.85,
            loss_threshold: 0.02,
            delay_threshold_us: 250_000,
            window_ms: 1_000,
        }
    }
}

impl FpsControllerConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.min_fps > 0.0 && self.min_fps <= self.max_fps) {
            return Err("controller needs 0 < min_fps <= max_fps".into());
        }
        if !(self.min_fps..=self.max_fps).contains(&self.initial_fps) {
            return Err("initial_fps outside [min_fps, max_fps]".into());
        }
        if !(self.decrease_factor > 0.0 && self.decrease_factor < 1.0) {
            return Err("decrease_factor must be in (0, 1)".into());
        }
        if self.increase_step < 0.0 || self.window_ms == 0 {
            return Err("increase_step must be >= 0 and window_ms > 0".into());
        }
        Ok(())
    }
}

/// One window of receiver feedback.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WindowFeedback {
    pub loss_fraction: f64,
    pub mean_delay_us: Micros,
}

/// Additive-increase, multiplicative-decrease frame-rate control.
#[derive(Debug, Clone, PartialEq)]
pub struct FpsController {
    cfg: FpsControllerConfig,
    fps: f64,
}

impl FpsController {
    pub fn new(cfg: FpsControllerConfig) -> Self {
        Self {
            fps: cfg.initial_fps.clamp(cfg.min_fps, cfg.max_fps),
            cfg,
        }
    }

    pub fn with_fps(mut self, fps: f64) -> Self {
        self.fps = fps.clamp(self.cfg.min_fps, self.cfg.max_fps);
        self
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn config(&self) -> &FpsControllerConfig {
        &self.cfg
    }

    pub fn adapt_fps(&mut self, fb: WindowFeedback) -> f64 {
        let congested = fb.loss_fraction > self.cfg.loss_threshold || fb.mean_delay_us > self.cfg.delay_threshold_us;
        self.fps = if congested {
            (self.fps * self.cfg.decrease_factor).max(self.cfg.min_fps)
        } else {
            (self.fps + self.cfg.increase_step).min(self.cfg.max_fps)
        };
        self.fps
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame_seq: u32,
    pub t_vt_us: Micros,
    pub t_vr_us: Option<Micros>,
    pub size_bits: u64,
    pub segs_sent: u32,
    pub segs_lost: u32,
    /// Frame rate in effect at capture, in milli-fps.
    pub fps_at_capture_milli: u32,
    pub capture_true_us: Micros,
}

impl FrameRecord {
    pub fn fps_at_capture(&self) -> f64 {
        f64::from(self.fps_at_capture_milli) / 1e3
    }

    pub fn delay_us(&self) -> Option<Micros> {
        self.t_vr_us.map(|r| r - self.t_vt_us)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub frame_seq: u32,
    pub segment_index: u16,
    pub payload_bytes: u16,
    pub t_send_us: Micros,
    /// True arrival time; `None` if dropped or still in flight at cut-off.
    pub t_arrive_us: Option<Micros>,
}

/// Per-frame and per-segment records of one video session.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VideoLog {
    pub frames: Vec<FrameRecord>,
    pub segments: Vec<SegmentRecord>,
}

impl VideoLog {
    /// CSV with columns
    /// `frame_seq,t_vt_us,t_vr_us,size_bits,segs_sent,segs_lost,fps_at_capture`.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "frame_seq",
            "t_vt_us",
            "t_vr_us",
            "size_bits",
            "segs_sent",
            "segs_lost",
            "fps_at_capture",
        ])?;
        for f in &self.frames {
            w.write_record([
                f.frame_seq.to_string(),
                f.t_vt_us.to_string(),
                f.t_vr_us.map(|v| v.to_string()).unwrap_or_default(),
                f.size_bits.to_string(),
                f.segs_sent.to_string(),
                f.segs_lost.to_string(),
                format!("{:.3}", f.fps_at_capture()),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
