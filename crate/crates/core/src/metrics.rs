//! End-to-end metrics over completed session logs: CC delay and reliability,
//! video frame delay and throughput, min/avg/max aggregation, and the
//! screen-beacon delay estimator.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::cc::CcLog;
use crate::sim::Micros;
use crate::video::VideoLog;

/// Combined clock error of two synchronized nodes (1 ms each).
pub const SYNC_BOUND_US: Micros = 2_000;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("metric undefined: {0}")]
    Undefined(&'static str),
    #[error("clock anomaly: delay {delay_us} us is negative beyond the sync bound")]
    ClockAnomaly { delay_us: Micros },
}

/// One CC frame's delay, `T_Cr - T_Ct`.
///
/// Negative delays are tolerated down to the combined sync bound; anything
/// below that is a clock anomaly.
pub fn cc_delay(t_ct: Micros, t_cr: Micros) -> Result<Micros, MetricError> {
    let d = t_cr - t_ct;
    if d < -SYNC_BOUND_US {
        Err(MetricError::ClockAnomaly { delay_us: d })
    } else {
        Ok(d)
    }
}

/// `n_rece / n_trans`. An `f64` division is correctly rounded, so
/// `r * n_trans` recovers `n_rece` to within one ulp.
pub fn reliability(n_rece: u64, n_trans: u64) -> Result<f64, MetricError> {
    if n_trans == 0 {
        return Err(MetricError::Undefined("reliability with zero transmitted frames"));
    }
    if n_rece > n_trans {
        return Err(MetricError::Undefined("more frames received than transmitted"));
    }
    Ok(n_rece as f64 / n_trans as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub min: Micros,
    pub avg: f64,
    pub max: Micros,
}

pub fn aggregate(delays: &[Micros]) -> Result<Aggregate, MetricError> {
    let (&first, rest) = delays
        .split_first()
        .ok_or(MetricError::Undefined("aggregate of an empty delay series"))?;
    let mut min = first;
    let mut max = first;
    let mut sum = i128::from(first);
    for &d in rest {
        min = min.min(d);
        max = max.max(d);
        sum += i128::from(d);
    }
    Ok(Aggregate {
        min,
        avg: sum as f64 / delays.len() as f64,
        max,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcStats {
    /// `(frame_id, delay)` for each matched, non-anomalous frame, in
    /// receive order.
    pub delays: Vec<(u32, Micros)>,
    pub aggregate: Option<Aggregate>,
    pub reliability: f64,
    pub n_rece: u64,
    pub n_trans: u64,
    pub anomalies: u64,
    /// Receive entries with no transmit entry, or repeated ids.
    pub unmatched: u64,
}

impl CcStats {
    pub fn from_log(log: &CcLog) -> Result<CcStats, MetricError> {
        let tx: HashMap<u32, Micros> = log.tx.iter().map(|e| (e.frame_id, e.timestamp_us)).collect();
        let mut seen = HashMap::with_capacity(log.rx.len());
        let mut delays = Vec::with_capacity(log.rx.len());
        let mut anomalies = 0;
        let mut unmatched = 0;
        for e in &log.rx {
            let Some(&t_ct) = tx.get(&e.frame_id) else {
                unmatched += 1;
                continue;
            };
            if seen.insert(e.frame_id, ()).is_some() {
                unmatched += 1;
                continue;
            }
            match cc_delay(t_ct, e.timestamp_us) {
                Ok(d) => delays.push((e.frame_id, d)),
                Err(_) => anomalies += 1,
            }
        }
        let n_trans = log.tx.len() as u64;
        let n_rece = seen.len() as u64;
        let series: Vec<Micros> = delays.iter().map(|&(_, d)| d).collect();
        Ok(CcStats {
            aggregate: aggregate(&series).ok(),
            reliability: reliability(n_rece, n_trans)?,
            delays,
            n_rece,
            n_trans,
            anomalies,
            unmatched,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameStat {
    pub frame_seq: u32,
    pub size_bits: u64,
    pub delay_us: Micros,
    /// `size_bits / delay`, in bits per second.
    pub throughput_bps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowStat {
    pub start_us: Micros,
    /// Segment payload bits that arrived within the window.
    pub delivered_bits: u64,
    pub throughput_bps: f64,
    /// Segments sent within the window, and how many of them were lost.
    pub segs_sent: u64,
    pub segs_lost: u64,
    pub loss_frac: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoStats {
    pub frames: Vec<FrameStat>,
    pub delay: Option<Aggregate>,
    pub windows: Vec<WindowStat>,
    pub frames_total: u64,
    pub frames_completed: u64,
    /// Bits of completed frames over the session length.
    pub aggregate_throughput_bps: f64,
    /// Mean of the windowed delivered throughput.
    pub delivered_throughput_bps: f64,
    pub segments_sent: u64,
    pub segments_lost: u64,
    pub segment_loss_frac: f64,
}

/// Per-frame delay and throughput plus windowed series over
/// `[0, session_us)` of true time.
pub fn video_delay_and_throughput(
    log: &VideoLog,
    window_us: Micros,
    session_us: Micros,
) -> Result<VideoStats, MetricError> {
    if log.frames.is_empty() {
        return Err(MetricError::Undefined("video log has no frames"));
    }
    if window_us <= 0 || session_us <= 0 {
        return Err(MetricError::Undefined("window and session length must be positive"));
    }
    let frames: Vec<FrameStat> = log
        .frames
        .iter()
        .filter_map(|f| {
            let d = f.delay_us()?;
            Some(FrameStat {
                frame_seq: f.frame_seq,
                size_bits: f.size_bits,
                delay_us: d,
                throughput_bps: if d > 0 {
                    f.size_bits as f64 * 1e6 / d as f64
                } else {
                    f64::INFINITY
                },
            })
        })
        .collect();
    let delays: Vec<Micros> = frames.iter().map(|f| f.delay_us).collect();
    let completed_bits: u64 = frames.iter().map(|f| f.size_bits).sum();

    let n_windows = ((session_us + window_us - 1) / window_us) as usize;
    let mut windows: Vec<WindowStat> = (0..n_windows)
        .map(|i| WindowStat {
            start_us: i as Micros * window_us,
            delivered_bits: 0,
            throughput_bps: 0.0,
            segs_sent: 0,
            segs_lost: 0,
            loss_frac: 0.0,
        })
        .collect();
    let index = |t: Micros| -> Option<usize> { (0..session_us).contains(&t).then(|| (t / window_us) as usize) };
    let mut sent = 0;
    let mut lost = 0;
    for s in &log.segments {
        sent += 1;
        if s.t_arrive_us.is_none() {
            lost += 1;
        }
        if let Some(i) = index(s.t_send_us) {
            windows[i].segs_sent += 1;
            windows[i].segs_lost += u64::from(s.t_arrive_us.is_none());
        }
        if let Some(i) = s.t_arrive_us.and_then(index) {
            windows[i].delivered_bits += u64::from(s.payload_bytes) * 8;
        }
    }
    for w in &mut windows {
        let len = window_us.min(session_us - w.start_us);
        w.throughput_bps = w.delivered_bits as f64 * 1e6 / len as f64;
        if w.segs_sent > 0 {
            w.loss_frac = w.segs_lost as f64 / w.segs_sent as f64;
        }
    }
    let delivered_bits: u64 = windows.iter().map(|w| w.delivered_bits).sum();
    Ok(VideoStats {
        delay: aggregate(&delays).ok(),
        frames_total: log.frames.len() as u64,
        frames_completed: frames.len() as u64,
        aggregate_throughput_bps: completed_bits as f64 * 1e6 / session_us as f64,
        delivered_throughput_bps: delivered_bits as f64 * 1e6 / session_us as f64,
        segments_sent: sent,
        segments_lost: lost,
        segment_loss_frac: if sent > 0 { lost as f64 / sent as f64 } else { 0.0 },
        frames,
        windows,
    })
}

/// Screen-beacon measurement chain.
///
/// The sender's screen shows its local clock, refreshed at
/// `display_refresh_hz`; the camera latches whatever the screen showed at
/// the last refresh strictly before the capture instant. The receiver
/// screenshots its display at `sampler_rate_hz`. Clock errors are fixed
/// offsets over the probe's span.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BeaconProbe {
    pub display_refresh_hz: f64,
    pub sampler_rate_hz: f64,
    pub refresh_phase_us: Micros,
    pub sampler_phase_us: Micros,
    pub tx_clock_error_us: Micros,
    pub rx_clock_error_us: Micros,
}

impl Default for BeaconProbe {
    fn default() -> Self {
        Self {
            display_refresh_hz: 60.0,
            sampler_rate_hz: 60.0,
            refresh_phase_us: 0,
            sampler_phase_us: 0,
            tx_clock_error_us: 0,
            rx_clock_error_us: 0,
        }
    }
}

/// A periodic tick train on the integer microsecond grid:
/// `phase + round(k * 1e6 / hz)` for `k >= 0`.
#[derive(Debug, Clone, Copy)]
struct Ticker {
    hz: f64,
    phase: Micros,
}

impl Ticker {
    fn at(&self, k: i64) -> Micros {
        self.phase + (k as f64 * 1e6 / self.hz).round() as Micros
    }

    fn guess(&self, t: Micros) -> i64 {
        (((t - self.phase) as f64) * self.hz / 1e6).floor() as i64
    }

    /// Last tick strictly before `t`.
    fn last_before(&self, t: Micros) -> Micros {
        let mut k = self.guess(t) + 1;
        while self.at(k) >= t {
            k -= 1;
        }
        self.at(k)
    }

    /// First tick at or after `t`.
    fn first_at_or_after(&self, t: Micros) -> Micros {
        let mut k = self.guess(t) - 1;
        while self.at(k) < t {
            k += 1;
        }
        self.at(k)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BeaconEstimate {
    /// Sender-local time shown on the captured screen.
    pub beacon_us: Micros,
    pub screenshot_true_us: Micros,
    pub estimate_us: Micros,
    /// True delay of the frame the screenshot read.
    pub true_delay_us: Micros,
}

impl BeaconEstimate {
    pub fn error_us(&self) -> Micros {
        self.estimate_us - self.true_delay_us
    }
}

impl BeaconProbe {
    pub fn error_bound_us(&self) -> Micros {
        let q = 1e6 / self.display_refresh_hz + 1e6 / self.sampler_rate_hz;
        q.ceil() as Micros + self.tx_clock_error_us.abs() + self.rx_clock_error_us.abs()
    }
}

/// Estimates per-frame delay from beacon readings.
///
/// `trace` holds `(capture_true_us, true_delay_us)` for each captured frame;
/// frame `i` is displayed at `capture + delay`. Each screenshot reads the
/// most recently displayed frame; only the first screenshot of each distinct
/// beacon yields an estimate.
pub fn beacon_estimate(probe: &BeaconProbe, trace: &[(Micros, Micros)]) -> Vec<BeaconEstimate> {
    let refresh = Ticker {
        hz: probe.display_refresh_hz,
        phase: probe.refresh_phase_us,
    };
    let sampler = Ticker {
        hz: probe.sampler_rate_hz,
        phase: probe.sampler_phase_us,
    };
    // Displayed frames keyed by display time; a later frame displayed at the
    // same instant replaces an earlier one.
    let mut displays: BTreeMap<Micros, (Micros, Micros)> = BTreeMap::new();
    for &(capture, delay) in trace {
        let beacon = refresh.last_before(capture) + probe.tx_clock_error_us;
        displays.insert(capture + delay, (beacon, delay));
    }
    let mut out: Vec<BeaconEstimate> = Vec::new();
    let mut screenshots: Vec<Micros> = displays.keys().map(|&d| sampler.first_at_or_after(d)).collect();
    screenshots.dedup();
    for s in screenshots {
        let Some((_, &(beacon, delay))) = displays.range(..=s).next_back() else {
            continue;
        };
        if out.last().is_some_and(|e| e.beacon_us == beacon) {
            continue;
        }
        out.push(BeaconEstimate {
            beacon_us: beacon,
            screenshot_true_us: s,
            estimate_us: s + probe.rx_clock_error_us - beacon,
            true_delay_us: delay,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cc::CcLogEntry;
    use crate::video::{FrameRecord, SegmentRecord};

    #[test]
    fn cc_delay_examples() {
        assert_eq!(cc_delay(1_000, 21_000), Ok(20_000));
        assert_eq!(cc_delay(5, 5), Ok(0));
        assert_eq!(cc_delay(3_000, 1_000), Ok(-2_000));
        assert_eq!(
            cc_delay(3_001, 1_000),
            Err(MetricError::ClockAnomaly { delay_us: -2_001 })
        );
    }

    #[test]
    fn reliability_examples() {
        assert_eq!(reliability(10_000, 10_000), Ok(1.0));
        assert_eq!(reliability(0, 10_000), Ok(0.0));
        assert!(reliability(0, 0).is_err());
        assert!(reliability(2, 1).is_err());
    }

    #[test]
    fn aggregate_examples() {
        let a = aggregate(&[10, 20, 30]).unwrap();
        assert_eq!((a.min, a.avg, a.max), (10, 20.0, 30));
        let a = aggregate(&[7]).unwrap();
        assert_eq!((a.min, a.avg, a.max), (7, 7.0, 7));
        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn aggregate_mean_of_uniform_draws() {
        let mut rng = crate::sim::SeededRng::new(11);
        let xs: Vec<Micros> = (0..10_000).map(|_| rng.uniform_i64(0, 1_000_000)).collect();
        let a = aggregate(&xs).unwrap();
        assert!((a.avg - 500_000.0).abs() < 5_000.0, "{}", a.avg);
    }

    #[test]
    fn cc_stats_join() {
        let e = |frame_id, timestamp_us| CcLogEntry { frame_id, timestamp_us };
        let log = CcLog {
            tx: vec![e(0, 0), e(1, 100), e(2, 200), e(3, 300)],
            // 2 never arrives, 9 was never sent, 1 shows up twice, 3 is
            // anomalous.
            rx: vec![e(0, 50), e(1, 170), e(9, 400), e(1, 180), e(3, -1_800)],
        };
        let s = CcStats::from_log(&log).unwrap();
        assert_eq!(s.delays, vec![(0, 50), (1, 70)]);
        assert_eq!((s.n_rece, s.n_trans), (3, 4));
        assert_eq!(s.reliability, 0.75);
        assert_eq!((s.anomalies, s.unmatched), (1, 2));
    }

    #[test]
    fn eq4_arithmetic() {
        let log = VideoLog {
            frames: vec![FrameRecord {
                frame_seq: 0,
                t_vt_us: 0,
                t_vr_us: Some(200_000),
                size_bits: 1_500_000,
                segs_sent: 1,
                segs_lost: 0,
                fps_at_capture_milli: 30_000,
                capture_true_us: 0,
            }],
            segments: vec![],
        };
        let s = video_delay_and_throughput(&log, 1_000_000, 1_000_000).unwrap();
        assert_eq!(s.frames[0].throughput_bps, 7.5e6);
    }

    fn seg(frame_seq: u32, payload_bytes: u16, t_send_us: Micros, t_arrive_us: Option<Micros>) -> SegmentRecord {
        SegmentRecord {
            frame_seq,
            segment_index: 0,
            payload_bytes,
            t_send_us,
            t_arrive_us,
        }
    }

    fn frame(frame_seq: u32, t_vr_us: Option<Micros>, size_bits: u64) -> FrameRecord {
        FrameRecord {
            frame_seq,
            t_vt_us: i64::from(frame_seq) * 500_000,
            t_vr_us,
            size_bits,
            segs_sent: 1,
            segs_lost: u32::from(t_vr_us.is_none()),
            fps_at_capture_milli: 2_000,
            capture_true_us: i64::from(frame_seq) * 500_000,
        }
    }

    #[test]
    fn all_lost_gives_zero_series() {
        let log = VideoLog {
            frames: vec![frame(0, None, 8_000), frame(1, None, 8_000)],
            segments: vec![seg(0, 1_000, 0, None), seg(1, 1_000, 500_000, None)],
        };
        let s = video_delay_and_throughput(&log, 500_000, 1_000_000).unwrap();
        assert!(s.frames.is_empty() && s.delay.is_none());
        assert!(s.windows.iter().all(|w| w.throughput_bps == 0.0));
        assert_eq!(s.segment_loss_frac, 1.0);
    }

    #[test]
    fn synthetic_log_matches_hand_computation() {
        // Four frames at 2 fps, one segment each; frame 2 is lost.
        let log = VideoLog {
            frames: vec![
                frame(0, Some(100_000), 8_000),
                frame(1, Some(700_000), 16_000),
                frame(2, None, 8_000),
                frame(3, Some(1_900_000), 4_000),
            ],
            segments: vec![
                seg(0, 1_000, 0, Some(100_000)),
                seg(1, 2_000, 500_000, Some(700_000)),
                seg(2, 1_000, 1_000_000, None),
                seg(3, 500, 1_500_000, Some(1_900_000)),
            ],
        };
        let s = video_delay_and_throughput(&log, 1_000_000, 2_000_000).unwrap();
        let delays: Vec<_> = s.frames.iter().map(|f| f.delay_us).collect();
        assert_eq!(delays, vec![100_000, 200_000, 400_000]);
        let tput: Vec<_> = s.frames.iter().map(|f| f.throughput_bps).collect();
        assert_eq!(tput, vec![80_000.0, 80_000.0, 10_000.0]);
        let a = s.delay.unwrap();
        assert_eq!((a.min, a.max), (100_000, 400_000));
        assert!((a.avg - 700_000.0 / 3.0).abs() < 1e-9);
        assert_eq!(s.windows.len(), 2);
        assert_eq!(s.windows[0].delivered_bits, 24_000);
        assert_eq!(s.windows[1].delivered_bits, 4_000);
        assert_eq!((s.windows[1].segs_sent, s.windows[1].segs_lost), (2, 1));
        assert_eq!(s.windows[1].loss_frac, 0.5);
        assert_eq!(s.aggregate_throughput_bps, 14_000.0);
        assert_eq!(s.delivered_throughput_bps, 14_000.0);
        assert_eq!(s.segment_loss_frac, 0.25);
    }

    #[test]
    fn ticker_edges() {
        let t = Ticker { hz: 60.0, phase: 0 };
        assert_eq!(t.last_before(16_667), 0);
        assert_eq!(t.last_before(16_668), 16_667);
        assert_eq!(t.first_at_or_after(16_667), 16_667);
        assert_eq!(t.first_at_or_after(16_668), 33_333);
        assert_eq!(t.first_at_or_after(-5), 0);
    }

    /// Brute-force oracle: scan every microsecond for the refresh and
    /// screenshot instants instead of solving for them.
    fn brute_estimate(capture: Micros, delay: Micros, refresh_phase: Micros, sampler_phase: Micros) -> Micros {
        let refresh = |k: i64| refresh_phase + (k as f64 * 1e6 / 60.0).round() as Micros;
        let mut beacon = Micros::MIN;
        let mut k = -2;
        while refresh(k) < capture {
            beacon = refresh(k);
            k += 1;
        }
        let display = capture + delay;
        let s = (0..)
            .map(|k: i64| sampler_phase + (k as f64 * 1e6 / 60.0).round() as Micros)
            .find(|&x| x >= display)
            .unwrap();
        s - beacon
    }

    #[test]
    fn constant_delay_bound_over_all_phases() {
        let probe_at = |rp, sp| BeaconProbe {
            refresh_phase_us: rp,
            sampler_phase_us: sp,
            ..BeaconProbe::default()
        };
        // A single 100 ms frame captured at 50 ms, against phase offsets
        // across a whole refresh period on both sides.
        for rp in (0..16_667).step_by(397) {
            for sp in (0..16_667).step_by(401) {
                let est = beacon_estimate(&probe_at(rp, sp), &[(50_000, 100_000)]);
                assert_eq!(est.len(), 1);
                let e = est[0].estimate_us;
                assert!((100_000..=133_400).contains(&e), "rp={rp} sp={sp} e={e}");
                assert_eq!(e, brute_estimate(50_000, 100_000, rp, sp));
            }
        }
    }

    #[test]
    fn aligned_phases_add_one_refresh() {
        // Capture on a refresh edge and a display landing on a screenshot:
        // the beacon is one full refresh old and the screenshot waits zero.
        let probe = BeaconProbe::default();
        let trace: Vec<_> = (1..30)
            .map(|k| ((k as f64 * 1e6 / 60.0).round() as Micros, 100_000))
            .collect();
        for e in beacon_estimate(&probe, &trace) {
            let period = e.estimate_us - e.true_delay_us;
            assert!((16_666..=16_667).contains(&period), "{period}");
        }
    }

    #[test]
    fn fast_chain_tracks_clock_error() {
        let probe = BeaconProbe {
            display_refresh_hz: 1e6,
            sampler_rate_hz: 1e6,
            tx_clock_error_us: 400,
            rx_clock_error_us: -300,
            ..BeaconProbe::default()
        };
        let trace: Vec<_> = (0..100).map(|k| (k * 33_333 + 7, 80_000 + k)).collect();
        let est = beacon_estimate(&probe, &trace);
        assert_eq!(est.len(), 100);
        for e in est {
            // One microsecond of quantization on each side.
            assert!((e.error_us() - -700).abs() <= 1, "{}", e.error_us());
        }
    }
}
