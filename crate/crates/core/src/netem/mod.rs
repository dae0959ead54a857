//! Emulated radio/network path.
//!
//! Each direction is a FIFO path: random loss, then a rate shaper with a
//! tail-drop queue, then a fixed propagation delay plus jitter. The uplink
//! rate is additionally capped by an elevation-angle capacity model driven
//! by the UAV's flight path.

mod geometry;
mod shaper;

use serde::{Deserialize, Serialize};

pub use geometry::{elevation_angle, FlightPath, Geometry, Position, Waypoint};
pub use shaper::{Admission, Shaper};

use crate::sim::{Micros, SeededRng};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NetemError {
    #[error("undefined geometry: UAV and BS antenna are co-located")]
    UndefinedGeometry,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// UAV to ground (video).
    Uplink,
    /// Ground to UAV (CC).
    Downlink,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JitterDist {
    None,
    /// Zero-mean normal truncated at `±truncate_sigmas * sigma_us`.
    TruncatedNormal {
        sigma_us: f64,
        truncate_sigmas: f64,
    },
    Uniform {
        half_width_us: f64,
    },
}

impl Default for JitterDist {
    fn default() -> Self {
        JitterDist::TruncatedNormal {
            sigma_us: 1_000.0,
            truncate_sigmas: 3.0,
        }
    }
}

impl JitterDist {
    pub fn sample(&self, rng: &mut SeededRng) -> Micros {
        match *self {
            JitterDist::None => 0,
            JitterDist::TruncatedNormal {
                sigma_us,
                truncate_sigmas,
            } => rng.truncated_normal(sigma_us, truncate_sigmas).round() as Micros,
            JitterDist::Uniform { half_width_us } => ((rng.uniform() * 2.0 - 1.0) * half_width_us).round() as Micros,
        }
    }

    fn validate(&self) -> Result<(), String> {
        let ok = match *self {
            JitterDist::None => true,
            JitterDist::TruncatedNormal {
                sigma_us,
                truncate_sigmas,
            } => sigma_us >= 0.0 && truncate_sigmas > 0.0 && sigma_us.is_finite(),
            JitterDist::Uniform { half_width_us } => half_width_us >= 0.0 && half_width_us.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(format!("invalid jitter distribution {self:?}"))
        }
    }
}

/// Random loss probability by flight height. These are calibration values
/// for the height effect, not measured data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeightLoss {
    pub height_m: f64,
    pub loss_prob: f64,
}

pub fn default_height_loss_table() -> Vec<HeightLoss> {
    vec![
        HeightLoss {
            height_m: 0.0,
            loss_prob: 0.002,
        },
        HeightLoss {
            height_m: 1.0,
            loss_prob: 0.004,
        },
        HeightLoss {
            height_m: 2.0,
            loss_prob: 0.001,
        },
    ]
}

/// A change of the nominal uplink capacity from `at_s` onwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapacityStep {
    pub at_s: f64,
    pub uplink_bps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkConfig {
    pub base_one_way_delay_us: Micros,
    pub jitter: JitterDist,
    pub random_loss_prob: f64,
    pub uplink_capacity_bps: f64,
    pub downlink_capacity_bps: f64,
    pub queue_limit_bytes: u64,
    /// Optional per-height extra loss; nearest listed height applies.
    pub height_loss: Vec<HeightLoss>,
    pub uplink_capacity_schedule: Vec<CapacityStep>,
}

impl Default for LinkConfig {
    /// The 25-PRB LTE profile: 8.78 Mb/s up, 16.57 Mb/s down, 27.66 ms RTT.
    fn default() -> Self {
        Self {
            base_one_way_delay_us: 13_830,
            jitter: JitterDist::default(),
            random_loss_prob: 0.0,
            uplink_capacity_bps: 8.78e6,
            downlink_capacity_bps: 16.57e6,
            queue_limit_bytes: 300_000,
            height_loss: Vec::new(),
            uplink_capacity_schedule: Vec::new(),
        }
    }
}

impl LinkConfig {
    /// The 50-PRB profile: 18.77 Mb/s up, 34.3 Mb/s down, 29 ms RTT.
    pub fn prb50() -> Self {
        Self {
            base_one_way_delay_us: 14_500,
            uplink_capacity_bps: 18.77e6,
            downlink_capacity_bps: 34.3e6,
            ..Self::default()
        }
    }

    pub fn lossless() -> Self {
        Self {
            random_loss_prob: 0.0,
            height_loss: Vec::new(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.base_one_way_delay_us < 0 {
            return Err("base_one_way_delay_us must be >= 0".into());
        }
        if !(0.0..=1.0).contains(&self.random_loss_prob) {
            return Err(format!("random_loss_prob {} outside [0, 1]", self.random_loss_prob));
        }
        if !(self.uplink_capacity_bps > 0.0 && self.uplink_capacity_bps.is_finite()) {
            return Err("uplink_capacity_bps must be positive".into());
        }
        if !(self.downlink_capacity_bps > 0.0 && self.downlink_capacity_bps.is_finite()) {
            return Err("downlink_capacity_bps must be positive".into());
        }
        if self.queue_limit_bytes == 0 {
            return Err("queue_limit_bytes must be positive".into());
        }
        for h in &self.height_loss {
            if !(0.0..=1.0).contains(&h.loss_prob) {
                return Err(format!("height loss {} outside [0, 1]", h.loss_prob));
            }
        }
        for s in &self.uplink_capacity_schedule {
            if !(s.uplink_bps >= 0.0 && s.at_s.is_finite()) {
                return Err(format!("invalid capacity step {s:?}"));
            }
        }
        self.jitter.validate()
    }

    fn height_loss_at(&self, height_m: f64) -> f64 {
        self.height_loss
            .iter()
            .min_by(|a, b| {
                let da = (a.height_m - height_m).abs();
                let db = (b.height_m - height_m).abs();
                da.total_cmp(&db)
            })
            .map_or(0.0, |h| h.loss_prob)
    }

    fn nominal_uplink_at(&self, t: Micros) -> f64 {
        let t_s = t as f64 / 1e6;
        self.uplink_capacity_schedule
            .iter()
            .rfind(|s| s.at_s <= t_s)
            .map_or(self.uplink_capacity_bps, |s| s.uplink_bps)
    }
}

/// Uplink capacity as a function of elevation angle: full capacity at low
/// angles, rolling off logistically around `theta_edge_deg` to `cap_min_bps`
/// near the BS zenith, where the down-tilted antenna gives little gain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GainCapacityModel {
    /// When off, the uplink runs at the nominal link capacity at any angle.
    pub enabled: bool,
    pub theta_edge_deg: f64,
    /// Angular span over which capacity moves from 90% to 10% of the drop.
    pub rolloff_width_deg: f64,
    pub cap_min_bps: f64,
    pub cap_max_bps: f64,
    /// Extra segment loss probability reached at `cap_min_bps`, scaled by
    /// the fraction of the capacity drop.
    pub floor_loss_prob: f64,
}

impl Default for GainCapacityModel {
    fn default() -> Self {
        Self {
            enabled: true,
            theta_edge_deg: 60.0,
            rolloff_width_deg: 8.0,
            cap_min_bps: 2.0e6,
            cap_max_bps: 8.5e6,
            floor_loss_prob: 0.0,
        }
    }
}

impl GainCapacityModel {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.cap_min_bps < self.cap_max_bps) || self.cap_min_bps < 0.0 {
            return Err("gain model needs 0 <= cap_min_bps < cap_max_bps".into());
        }
        if !(self.rolloff_width_deg > 0.0) {
            return Err("rolloff_width_deg must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.floor_loss_prob) {
            return Err("floor_loss_prob outside [0, 1]".into());
        }
        Ok(())
    }

    /// Logistic scale parameter: a 10% to 90% transition spans `2 ln 9` scales.
    pub fn rolloff_scale_deg(&self) -> f64 {
        self.rolloff_width_deg / (2.0 * 9f64.ln())
    }

    /// Fraction of the capacity drop realized at `angle_deg`, in `[0, 1]`.
    pub fn drop_fraction(&self, angle_deg: f64) -> f64 {
        let cap = effective_capacity(angle_deg, self);
        (self.cap_max_bps - cap) / (self.cap_max_bps - self.cap_min_bps)
    }
}

pub fn effective_capacity(angle_deg: f64, model: &GainCapacityModel) -> f64 {
    let z = (angle_deg - model.theta_edge_deg) / model.rolloff_scale_deg();
    model.cap_min_bps + (model.cap_max_bps - model.cap_min_bps) / (1.0 + z.exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropReason {
    Random,
    Queue,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Delivery {
    Arrives(Micros),
    Dropped(DropReason),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathCounters {
    pub sent: u64,
    pub admitted: u64,
    pub dropped_random: u64,
    pub dropped_queue: u64,
    pub admitted_bytes: u64,
}

impl PathCounters {
    pub fn is_conserved(&self) -> bool {
        self.sent == self.admitted + self.dropped_random + self.dropped_queue
    }
}

#[derive(Debug, Clone)]
struct Path {
    shaper: Shaper,
    last_arrival: Micros,
    counters: PathCounters,
}

/// The time-varying channel: configuration plus geometry.
#[derive(Debug, Clone)]
struct Channel {
    link: LinkConfig,
    gain: GainCapacityModel,
    flight: FlightPath,
    bs_position: Position,
    antenna_tilt_deg: f64,
}

impl Channel {
    fn geometry_at(&self, t: Micros) -> Geometry {
        Geometry {
            uav_position: self.flight.position_at(t),
            bs_position: self.bs_position,
            antenna_tilt_deg: self.antenna_tilt_deg,
        }
    }

    fn elevation_at(&self, t: Micros) -> f64 {
        elevation_angle(&self.geometry_at(t)).unwrap_or(90.0)
    }

    fn capacity_at(&self, dir: Direction, t: Micros) -> f64 {
        match dir {
            Direction::Uplink if self.gain.enabled => {
                let eff = effective_capacity(self.elevation_at(t), &self.gain);
                self.link.nominal_uplink_at(t).min(eff)
            }
            Direction::Uplink => self.link.nominal_uplink_at(t),
            Direction::Downlink => self.link.downlink_capacity_bps,
        }
    }

    fn loss_prob_at(&self, dir: Direction, t: Micros) -> f64 {
        let mut keep = 1.0 - self.link.random_loss_prob;
        keep *= 1.0 - self.link.height_loss_at(self.flight.height_at(t));
        if dir == Direction::Uplink && self.gain.enabled && self.gain.floor_loss_prob > 0.0 {
            let frac = self.gain.drop_fraction(self.elevation_at(t));
            keep *= 1.0 - self.gain.floor_loss_prob * frac;
        }
        1.0 - keep
    }
}

/// Both directions of the emulated link plus the geometry that drives the
/// uplink capacity.
#[derive(Debug, Clone)]
pub struct Netem {
    channel: Channel,
    uplink: Path,
    downlink: Path,
}

impl Netem {
    pub fn new(link: LinkConfig, gain: GainCapacityModel, flight: FlightPath) -> Self {
        let path = |rate| Path {
            shaper: Shaper::new(rate, link.queue_limit_bytes),
            last_arrival: Micros::MIN,
            counters: PathCounters::default(),
        };
        Self {
            uplink: path(link.uplink_capacity_bps),
            downlink: path(link.downlink_capacity_bps),
            channel: Channel {
                link,
                gain,
                flight,
                bs_position: [0.0, 0.0, 0.0],
                antenna_tilt_deg: 10.0,
            },
        }
    }

    pub fn with_bs_position(mut self, bs: Position) -> Self {
        self.channel.bs_position = bs;
        self
    }

    pub fn link(&self) -> &LinkConfig {
        &self.channel.link
    }

    pub fn gain_model(&self) -> &GainCapacityModel {
        &self.channel.gain
    }

    pub fn flight(&self) -> &FlightPath {
        &self.channel.flight
    }

    pub fn geometry_at(&self, t: Micros) -> Geometry {
        self.channel.geometry_at(t)
    }

    /// Elevation angle at `t`; a co-located UAV is treated as overhead.
    pub fn elevation_at(&self, t: Micros) -> f64 {
        self.channel.elevation_at(t)
    }

    /// `min(nominal uplink capacity, elevation-limited capacity)` at `t`.
    pub fn uplink_capacity_at(&self, t: Micros) -> f64 {
        self.channel.capacity_at(Direction::Uplink, t)
    }

    pub fn capacity_at(&self, dir: Direction, t: Micros) -> f64 {
        self.channel.capacity_at(dir, t)
    }

    /// Combined random loss probability for a packet sent at `t`.
    pub fn loss_prob_at(&self, dir: Direction, t: Micros) -> f64 {
        self.channel.loss_prob_at(dir, t)
    }

    pub fn counters(&self, dir: Direction) -> &PathCounters {
        match dir {
            Direction::Uplink => &self.uplink.counters,
            Direction::Downlink => &self.downlink.counters,
        }
    }

    /// Sends `bytes` at `t_send` in direction `dir`. Arrivals within one
    /// direction never reorder.
    pub fn deliver(&mut self, dir: Direction, bytes: u64, t_send: Micros, rng: &mut SeededRng) -> Delivery {
        let Netem {
            channel,
            uplink,
            downlink,
        } = self;
        let path = match dir {
            Direction::Uplink => uplink,
            Direction::Downlink => downlink,
        };
        path.counters.sent += 1;
        if rng.bernoulli(channel.loss_prob_at(dir, t_send)) {
            path.counters.dropped_random += 1;
            return Delivery::Dropped(DropReason::Random);
        }
        match path.shaper.admit_with(bytes, t_send, |t| channel.capacity_at(dir, t)) {
            Admission::Dropped => {
                path.counters.dropped_queue += 1;
                Delivery::Dropped(DropReason::Queue)
            }
            Admission::Departs(departure) => {
                path.counters.admitted += 1;
                path.counters.admitted_bytes += bytes;
                let jitter = channel.link.jitter.sample(rng);
                let arrival = (departure + channel.link.base_one_way_delay_us + jitter)
                    .max(departure)
                    .max(path.last_arrival);
                path.last_arrival = arrival;
                Delivery::Arrives(arrival)
            }
        }
    }
}
