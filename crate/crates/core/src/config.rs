//! Scenario configuration: one TOML (or JSON) document describing a run or a
//! sweep, with every field defaulted to the 25-PRB calibration set.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cc::{ReceiverConfig, SenderState, StickSource};
use crate::netem::{FlightPath, GainCapacityModel, LinkConfig, Position};
use crate::sim::{mix_seed, Micros};
use crate::video::{EncoderModel, FpsControllerConfig, Resolution};
use crate::world::{CcSetup, ClockConfig, VideoSetup, WorldSetup};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config file {path} not readable: {source}")]
    Missing {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config file {path} does not parse: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// A single value or a sweep list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn values(&self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CcConfig {
    pub enabled: bool,
    pub send_frequency_hz: OneOrMany<f64>,
    /// When set, each run sends exactly this many frames and the run length
    /// follows from the frequency.
    pub frames: Option<u64>,
    pub stick: StickSource,
    pub receiver: ReceiverConfig,
}

impl Default for CcConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            send_frequency_hz: OneOrMany::One(10.0),
            frames: None,
            stick: StickSource::default(),
            receiver: ReceiverConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VideoConfig {
    pub enabled: bool,
    /// One of 320x240, 640x480, 1280x720, or a list of them.
    pub resolution: OneOrMany<String>,
    /// Overrides the resolution's nominal bitrate.
    pub nominal_bitrate_bps: Option<f64>,
    pub size_jitter_cv: f64,
    pub reference_fps: f64,
    /// Capture at this rate with the controller off.
    pub fixed_fps: Option<f64>,
    pub controller: FpsControllerConfig,
    pub mtu_payload: u16,
    pub gap_timeout_us: Micros,
    pub display_latency_us: Micros,
}

impl Default for VideoConfig {
    fn default() -> Self {
        let v = VideoSetup::default();
        Self {
            enabled: false,
            resolution: OneOrMany::One(Resolution::R320x240.to_string()),
            nominal_bitrate_bps: None,
            size_jitter_cv: v.encoder.size_jitter_cv,
            reference_fps: v.encoder.reference_fps,
            fixed_fps: None,
            controller: v.controller,
            mtu_payload: v.mtu_payload,
            gap_timeout_us: v.gap_timeout_us,
            display_latency_us: v.display_latency_us,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Replaces the flight path's height, one run per value.
    pub heights_m: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Metrics window for the throughput and loss series.
    pub window_ms: u64,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("results"),
            window_ms: 1_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub seed: u64,
    pub duration_s: f64,
    pub drain_s: f64,
    pub link: LinkConfig,
    pub gain_model: GainCapacityModel,
    pub flight_path: FlightPath,
    pub bs_position: Position,
    pub clocks: ClockConfig,
    pub cc: CcConfig,
    pub video: VideoConfig,
    pub sweep: SweepConfig,
    pub outputs: OutputConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            name: "scenario".into(),
            seed: 1,
            duration_s: 10.0,
            drain_s: 2.0,
            link: LinkConfig::default(),
            gain_model: GainCapacityModel::default(),
            flight_path: FlightPath::default(),
            bs_position: [0.0, 0.0, 0.0],
            clocks: ClockConfig::default(),
            cc: CcConfig::default(),
            video: VideoConfig::default(),
            sweep: SweepConfig::default(),
            outputs: OutputConfig::default(),
        }
    }
}

/// Reads and validates a config; `.json` files are parsed as JSON,
/// anything else as TOML.
pub fn load_config(path: &Path) -> Result<ScenarioConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Missing {
        path: path.to_path_buf(),
        source,
    })?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let cfg = if is_json { parse_json(&text) } else { parse_toml(&text) }.map_err(|message| ConfigError::Parse {
        path: path.to_path_buf(),
        message,
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_toml(text: &str) -> Result<ScenarioConfig, String> {
    toml::from_str(text).map_err(|e| e.to_string())
}

pub fn parse_json(text: &str) -> Result<ScenarioConfig, String> {
    serde_json::from_str(text).map_err(|e| e.to_string())
}

fn nonempty<T>(what: &str, v: &[T]) -> Result<(), ConfigError> {
    if v.is_empty() {
        Err(ConfigError::Invalid(format!("sweep list {what} is empty")))
    } else {
        Ok(())
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let inv = |m: String| ConfigError::Invalid(m);
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(inv(format!("duration_s {} must be positive", self.duration_s)));
        }
        if !(self.drain_s >= 0.0 && self.drain_s.is_finite()) {
            return Err(inv(format!("drain_s {} must be >= 0", self.drain_s)));
        }
        self.link.validate().map_err(inv)?;
        self.gain_model.validate().map_err(inv)?;
        self.flight_path.validate().map_err(inv)?;
        self.clocks.validate().map_err(inv)?;
        if !self.bs_position.iter().all(|v| v.is_finite()) {
            return Err(inv("bs_position must be finite".into()));
        }
        if !self.cc.enabled && !self.video.enabled {
            return Err(inv("at least one of cc and video must be enabled".into()));
        }
        let freqs = self.cc.send_frequency_hz.values();
        nonempty("cc.send_frequency_hz", &freqs)?;
        if let Some(f) = freqs.iter().find(|f| !(**f > 0.0 && f.is_finite())) {
            return Err(inv(format!("send frequency {f} Hz must be positive")));
        }
        if self.cc.frames == Some(0) {
            return Err(inv("cc.frames must be >= 1".into()));
        }
        self.cc.receiver.validate().map_err(inv)?;
        let resolutions = self.video.resolution.values();
        nonempty("video.resolution", &resolutions)?;
        for r in &resolutions {
            r.parse::<Resolution>().map_err(|e| inv(e.to_string()))?;
        }
        self.video.controller.validate().map_err(inv)?;
        if let Some(f) = self.video.fixed_fps {
            if !(f > 0.0 && f.is_finite()) {
                return Err(inv(format!("video.fixed_fps {f} must be positive")));
            }
        }
        if self.video.mtu_payload == 0 || self.video.gap_timeout_us <= 0 || self.video.display_latency_us < 0 {
            return Err(inv(
                "video needs mtu_payload > 0, gap_timeout_us > 0, display_latency_us >= 0".into(),
            ));
        }
        self.encoder_for(Resolution::R320x240).validate().map_err(inv)?;
        if let Some(hs) = &self.sweep.heights_m {
            nonempty("sweep.heights_m", hs)?;
            if matches!(self.flight_path, FlightPath::Waypoints { .. }) {
                return Err(inv("sweep.heights_m cannot override a waypoint flight path".into()));
            }
            if let Some(h) = hs.iter().find(|h| !(**h >= 0.0 && h.is_finite())) {
                return Err(inv(format!("sweep height {h} m must be finite and >= 0")));
            }
        }
        if self.outputs.window_ms == 0 {
            return Err(inv("outputs.window_ms must be positive".into()));
        }
        Ok(())
    }

    fn encoder_for(&self, r: Resolution) -> EncoderModel {
        EncoderModel {
            nominal_bitrate_bps: self.video.nominal_bitrate_bps.unwrap_or(r.nominal_bitrate_bps()),
            size_jitter_cv: self.video.size_jitter_cv,
            reference_fps: self.video.reference_fps,
        }
    }

    /// Canonical JSON of every simulation input, defaults included. The
    /// output directory is left out so moving results does not change it.
    pub fn canonical_json(&self) -> String {
        let mut c = self.clone();
        c.outputs.dir = PathBuf::new();
        serde_json::to_string(&c).expect("config serializes")
    }

    /// Expands sweep axes into concrete scenarios, heights outermost, then
    /// frequencies, then resolutions.
    ///
    /// With `derive_seeds`, each scenario's seed is the master seed mixed
    /// with a 64-bit key hashed from its axis values, so extending an axis
    /// leaves existing combinations' seeds alone.
    pub fn expand(&self, derive_seeds: bool) -> Vec<Scenario> {
        let heights: Vec<Option<f64>> = match &self.sweep.heights_m {
            Some(hs) => hs.iter().copied().map(Some).collect(),
            None => vec![None],
        };
        let freqs: Vec<Option<f64>> = if self.cc.enabled {
            self.cc.send_frequency_hz.values().into_iter().map(Some).collect()
        } else {
            vec![None]
        };
        let resolutions: Vec<Option<Resolution>> = if self.video.enabled {
            self.video
                .resolution
                .values()
                .iter()
                .map(|r| Some(r.parse().expect("validated resolution")))
                .collect()
        } else {
            vec![None]
        };
        let mut out = Vec::new();
        for &h in &heights {
            for &f in &freqs {
                for &r in &resolutions {
                    let axes = Axes {
                        height_m: h,
                        freq_hz: f,
                        resolution: r,
                    };
                    let key = axes.key();
                    let seed = if derive_seeds {
                        mix_seed(self.seed, key)
                    } else {
                        self.seed
                    };
                    let mut cfg = self.clone();
                    cfg.seed = seed;
                    cfg.sweep = SweepConfig::default();
                    if let Some(h) = h {
                        cfg.flight_path = with_height(&cfg.flight_path, h);
                    }
                    if let Some(f) = f {
                        cfg.cc.send_frequency_hz = OneOrMany::One(f);
                    }
                    if let Some(r) = r {
                        cfg.video.resolution = OneOrMany::One(r.to_string());
                    }
                    let id = axes.id(out.len());
                    let hash = hex::encode(Sha256::digest(cfg.canonical_json().as_bytes()));
                    out.push(Scenario {
                        index: out.len(),
                        id,
                        axes,
                        config_hash: hash,
                        config: cfg,
                    });
                }
            }
        }
        out
    }
}

fn with_height(path: &FlightPath, h: f64) -> FlightPath {
    match path.clone() {
        FlightPath::Fixed {
            horizontal_distance_m, ..
        } => FlightPath::Fixed {
            height_m: h,
            horizontal_distance_m,
        },
        FlightPath::FlyOver {
            lateral_offset_m,
            speed_mps,
            closest_approach_s,
            ..
        } => FlightPath::FlyOver {
            height_m: h,
            lateral_offset_m,
            speed_mps,
            closest_approach_s,
        },
        other => other,
    }
}

/// Sweep coordinates of one scenario; `None` where the axis is not swept
/// or its stream is disabled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axes {
    pub height_m: Option<f64>,
    pub freq_hz: Option<f64>,
    pub resolution: Option<Resolution>,
}

impl Axes {
    fn label(&self) -> String {
        let mut parts = Vec::new();
        if let Some(h) = self.height_m {
            parts.push(format!("h{h}"));
        }
        if let Some(f) = self.freq_hz {
            parts.push(format!("f{f}"));
        }
        if let Some(r) = self.resolution {
            parts.push(format!("r{r}"));
        }
        parts.join("_")
    }

    fn key(&self) -> u64 {
        let d = Sha256::digest(self.label().as_bytes());
        u64::from_be_bytes(d[..8].try_into().expect("digest is 32 bytes"))
    }

    fn id(&self, index: usize) -> String {
        let label = self.label();
        if label.is_empty() {
            format!("run{index}")
        } else {
            label
        }
    }
}

impl fmt::Display for Axes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// One concrete run: every sweep axis fixed to a single value.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub index: usize,
    pub id: String,
    pub axes: Axes,
    pub config_hash: String,
    pub config: ScenarioConfig,
}

impl Scenario {
    pub fn frequency_hz(&self) -> f64 {
        self.config.cc.send_frequency_hz.values()[0]
    }

    pub fn resolution(&self) -> Resolution {
        self.config.video.resolution.values()[0]
            .parse()
            .expect("validated resolution")
    }

    /// Flight height at the start of the run.
    pub fn height_m(&self) -> f64 {
        self.config.flight_path.height_at(0)
    }

    /// Run length in microseconds: from `cc.frames` when set, otherwise
    /// `duration_s`.
    pub fn duration_us(&self) -> Micros {
        match (self.config.cc.enabled, self.config.cc.frames) {
            (true, Some(n)) => (n as f64 * 1e6 / self.frequency_hz()).ceil() as Micros,
            _ => (self.config.duration_s * 1e6).round() as Micros,
        }
    }

    pub fn world_setup(&self) -> WorldSetup {
        let c = &self.config;
        let mut w = WorldSetup::new(c.seed, self.duration_us());
        w.drain_us = (c.drain_s * 1e6).round() as Micros;
        w.link = c.link.clone();
        w.gain = c.gain_model.clone();
        w.flight = c.flight_path.clone();
        w.bs_position = c.bs_position;
        w.clocks = c.clocks;
        if c.cc.enabled {
            let mut sender = SenderState::new(self.frequency_hz(), c.cc.stick.clone());
            if let Some(n) = c.cc.frames {
                sender = sender.with_frame_limit(n);
            }
            w.cc = Some(CcSetup {
                sender,
                receiver: c.cc.receiver,
            });
        }
        if c.video.enabled {
            w.video = Some(VideoSetup {
                encoder: c.encoder_for(self.resolution()),
                controller: c.video.controller,
                fixed_fps: c.video.fixed_fps,
                mtu_payload: c.video.mtu_payload,
                gap_timeout_us: c.video.gap_timeout_us,
                display_latency_us: c.video.display_latency_us,
            });
        }
        w
    }
}
