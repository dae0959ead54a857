//! Bit-exact wire formats.
//!
//! All multi-byte fields are big-endian.
//!
//! CC frame, 20 bytes:
//!
//! ```text
//! 0       4       8       12      16      20
//! +-------+-------+-------+-------+-------+
//! | id    | roll  | pitch | yaw   | thrust|
//! +-------+-------+-------+-------+-------+
//!  u32     f32     f32     f32     f32
//! ```
//!
//! Video segment header, 20 bytes: `stream_epoch: u16, frame_seq: u32,
//! segment_index: u16, segment_count: u16, capture_ts: u64, payload_len: u16`.
//!
//! Timestamp beacon, 12 bytes: `beacon_ts: u64, refresh_seq: u32`.

use serde::{Deserialize, Serialize};

pub const CC_FRAME_LEN: usize = 20;
pub const SEGMENT_HEADER_LEN: usize = 20;
pub const BEACON_LEN: usize = 12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WireError {
    #[error("malformed {kind}: expected {expected} bytes, got {actual}")]
    Malformed {
        kind: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("corrupt {kind}: {reason}")]
    Corrupt { kind: &'static str, reason: String },
    #[error("invalid {kind}: {reason}")]
    Invalid { kind: &'static str, reason: String },
}

/// Maps a raw signed 16-bit joystick axis onto `[-1, 1]`.
///
/// The two half-ranges are scaled separately so that both extremes map to
/// exactly ±1 and the center to 0.
pub fn normalize_stick(raw: i16) -> f32 {
    let v = if raw >= 0 {
        f32::from(raw) / f32::from(i16::MAX)
    } else {
        -(f32::from(raw) / f32::from(i16::MIN))
    };
    v.clamp(-1.0, 1.0)
}

/// One command-and-control sample.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CcFrame {
    pub frame_id: u32,
    pub roll: f32,
    pub pitch: f32,
    pub yaw: f32,
    pub thrust: f32,
}

impl CcFrame {
    pub fn movement(&self) -> [f32; 4] {
        [self.roll, self.pitch, self.yaw, self.thrust]
    }

    fn check(&self, on_fail: fn(String) -> WireError) -> Result<(), WireError> {
        const NAMES: [&str; 4] = ["roll", "pitch", "yaw", "thrust"];
        for (name, v) in NAMES.iter().zip(self.movement()) {
            if !v.is_finite() || !(-1.0..=1.0).contains(&v) {
                return Err(on_fail(format!("{name} = {v} outside [-1, 1]")));
            }
        }
        Ok(())
    }
}

pub fn encode_cc(frame: &CcFrame) -> Result<[u8; CC_FRAME_LEN], WireError> {
    frame.check(|reason| WireError::Invalid {
        kind: "cc frame",
        reason,
    })?;
    let mut out = [0u8; CC_FRAME_LEN];
    out[0..4].copy_from_slice(&frame.frame_id.to_be_bytes());
    for (i, v) in frame.movement().into_iter().enumerate() {
        let at = 4 + 4 * i;
        out[at..at + 4].copy_from_slice(&v.to_be_bytes());
    }
    Ok(out)
}

pub fn decode_cc(bytes: &[u8]) -> Result<CcFrame, WireError> {
    let bytes: &[u8; CC_FRAME_LEN] = bytes.try_into().map_err(|_| WireError::Malformed {
        kind: "cc frame",
        expected: CC_FRAME_LEN,
        actual: bytes.len(),
    })?;
    let word = |i: usize| -> [u8; 4] { bytes[i..i + 4].try_into().unwrap() };
    let frame = CcFrame {
        frame_id: u32::from_be_bytes(word(0)),
        roll: f32::from_be_bytes(word(4)),
        pitch: f32::from_be_bytes(word(8)),
        yaw: f32::from_be_bytes(word(12)),
        thrust: f32::from_be_bytes(word(16)),
    };
    frame.check(|reason| WireError::Corrupt {
        kind: "cc frame",
        reason,
    })?;
    Ok(frame)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct VideoSegmentHeader {
    pub stream_epoch: u16,
    pub frame_seq: u32,
    pub segment_index: u16,
    pub segment_count: u16,
    /// Node-local capture time of the frame, microseconds.
    pub capture_ts: u64,
    pub payload_len: u16,
}

impl VideoSegmentHeader {
    pub fn is_last(&self) -> bool {
        self.segment_index + 1 == self.segment_count
    }

    fn check(&self, on_fail: fn(String) -> WireError) -> Result<(), WireError> {
        if self.segment_count == 0 {
            return Err(on_fail("segment_count is 0".into()));
        }
        if self.segment_index >= self.segment_count {
            return Err(on_fail(format!(
                "segment_index {} >= segment_count {}",
                self.segment_index, self.segment_count
            )));
        }
        if self.payload_len == 0 && !self.is_last() {
            return Err(on_fail(format!(
                "empty payload in non-final segment {}",
                self.segment_index
            )));
        }
        Ok(())
    }
}

pub fn encode_segment_header(h: &VideoSegmentHeader) -> Result<[u8; SEGMENT_HEADER_LEN], WireError> {
    h.check(|reason| WireError::Invalid {
        kind: "segment header",
        reason,
    })?;
    let mut out = [0u8; SEGMENT_HEADER_LEN];
    out[0..2].copy_from_slice(&h.stream_epoch.to_be_bytes());
    out[2..6].copy_from_slice(&h.frame_seq.to_be_bytes());
    out[6..8].copy_from_slice(&h.segment_index.to_be_bytes());
    out[8..10].copy_from_slice(&h.segment_count.to_be_bytes());
    out[10..18].copy_from_slice(&h.capture_ts.to_be_bytes());
    out[18..20].copy_from_slice(&h.payload_len.to_be_bytes());
    Ok(out)
}

pub fn decode_segment_header(bytes: &[u8]) -> Result<VideoSegmentHeader, WireError> {
    let b: &[u8; SEGMENT_HEADER_LEN] = bytes.try_into().map_err(|_| WireError::Malformed {
        kind: "segment header",
        expected: SEGMENT_HEADER_LEN,
        actual: bytes.len(),
    })?;
    let u16_at = |i: usize| u16::from_be_bytes([b[i], b[i + 1]]);
    let h = VideoSegmentHeader {
        stream_epoch: u16_at(0),
        frame_seq: u32::from_be_bytes(b[2..6].try_into().unwrap()),
        segment_index: u16_at(6),
        segment_count: u16_at(8),
        capture_ts: u64::from_be_bytes(b[10..18].try_into().unwrap()),
        payload_len: u16_at(18),
    };
    h.check(|reason| WireError::Corrupt {
        kind: "segment header",
        reason,
    })?;
    Ok(h)
}

/// The on-screen timestamp beacon (the QR code of the measurement chain).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TimestampBeacon {
    pub beacon_ts: u64,
    pub refresh_seq: u32,
}

pub fn encode_beacon(b: &TimestampBeacon) -> [u8; BEACON_LEN] {
    let mut out = [0u8; BEACON_LEN];
    out[0..8].copy_from_slice(&b.beacon_ts.to_be_bytes());
    out[8..12].copy_from_slice(&b.refresh_seq.to_be_bytes());
    out
}

pub fn decode_beacon(bytes: &[u8]) -> Result<TimestampBeacon, WireError> {
    let b: &[u8; BEACON_LEN] = bytes.try_into().map_err(|_| WireError::Malformed {
        kind: "beacon",
        expected: BEACON_LEN,
        actual: bytes.len(),
    })?;
    Ok(TimestampBeacon {
        beacon_ts: u64::from_be_bytes(b[0..8].try_into().unwrap()),
        refresh_seq: u32::from_be_bytes(b[8..12].try_into().unwrap()),
    })
}
