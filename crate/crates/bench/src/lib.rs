//! Fixtures shared by the benchmarks in `benches/`.

use uavlink_core::config::{OneOrMany, ScenarioConfig};
use uavlink_core::{Scenario, WorldSetup};

/// A CC-only session sending `frames` frames at `freq_hz`.
pub fn cc_session(freq_hz: f64, frames: u64) -> WorldSetup {
    let mut cfg = ScenarioConfig::default();
    cfg.cc.send_frequency_hz = OneOrMany::One(freq_hz);
    cfg.cc.frames = Some(frames);
    single(cfg).world_setup()
}

/// A video-only session of `seconds` at the given resolution label.
pub fn video_session(resolution: &str, seconds: f64) -> WorldSetup {
    let mut cfg = ScenarioConfig {
        duration_s: seconds,
        ..ScenarioConfig::default()
    };
    cfg.cc.enabled = false;
    cfg.video.enabled = true;
    cfg.video.resolution = OneOrMany::One(resolution.to_string());
    single(cfg).world_setup()
}

fn single(cfg: ScenarioConfig) -> Scenario {
    cfg.validate().expect("bench config is valid");
    cfg.expand(false).remove(0)
}
