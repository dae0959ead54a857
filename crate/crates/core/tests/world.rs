use std::collections::HashMap;

use uavlink_core::config::{OneOrMany, ScenarioConfig};
use uavlink_core::harness::{run_scenario, sweep};
use uavlink_core::{Micros, World};

fn traced(seed: u64) -> Option<String> {
    let mut cfg = ScenarioConfig {
        seed,
        duration_s: 5.0,
        ..ScenarioConfig::default()
    };
    cfg.cc.send_frequency_hz = OneOrMany::One(55.0);
    cfg.video.enabled = true;
    let mut setup = cfg.expand(false)[0].world_setup();
    setup.trace = true;
    World::new(setup).run().trace_digest
}

#[test]
fn event_traces_repeat_per_seed() {
    let a = traced(9).expect("trace requested");
    assert_eq!(Some(a.clone()), traced(9));
    assert_ne!(Some(a), traced(10));
}

#[test]
fn sweep_members_match_solo_runs() {
    let mut cfg = ScenarioConfig {
        seed: 77,
        duration_s: 4.0,
        ..ScenarioConfig::default()
    };
    cfg.cc.send_frequency_hz = OneOrMany::Many(vec![15.0, 45.0, 65.0]);
    cfg.video.enabled = true;
    cfg.video.resolution = OneOrMany::Many(vec!["320x240".into(), "1280x720".into()]);
    let swept = sweep(&cfg, None).unwrap();
    let mut scenarios = cfg.expand(true);
    scenarios.reverse();
    let solo: HashMap<String, _> = scenarios
        .iter()
        .map(|s| (s.id.clone(), run_scenario(s).unwrap()))
        .collect();
    assert_eq!(swept.len(), 6);
    for r in &swept {
        let s = &solo[&r.scenario.id];
        assert_eq!(r.summary_row(), s.summary_row());
        assert_eq!(r.output.cc.as_ref().unwrap().log, s.output.cc.as_ref().unwrap().log);
        assert_eq!(
            r.output.video.as_ref().unwrap().log,
            s.output.video.as_ref().unwrap().log
        );
    }
}

// The clock streams are separate from the network streams, so toggling the
// sync residual changes timestamps but not the network outcome.
#[test]
fn sync_residual_moves_delays_by_at_most_two_ms() {
    let run = |residual: Micros| {
        let mut cfg = ScenarioConfig {
            seed: 5,
            duration_s: 60.0,
            ..ScenarioConfig::default()
        };
        cfg.cc.send_frequency_hz = OneOrMany::One(30.0);
        cfg.clocks.max_residual_us = residual;
        run_scenario(&cfg.expand(false)[0]).unwrap().cc.unwrap()
    };
    let truth = run(0);
    let measured = run(1_000);
    assert_eq!(truth.n_rece, measured.n_rece);
    let mut moved = 0;
    for (t, m) in truth.delays.iter().zip(&measured.delays) {
        assert_eq!(t.0, m.0);
        assert!((t.1 - m.1).abs() <= 2_000, "frame {}: {} vs {}", t.0, t.1, m.1);
        moved += usize::from(t.1 != m.1);
    }
    assert!(moved > 0);
}

// More uplink never means less delivered video, seed held fixed.
#[test]
fn delivered_video_grows_with_capacity() {
    let mut last = 0.0;
    for cap in [2e6, 4e6, 6e6, 8e6, 10e6, 14e6] {
        let mut cfg = ScenarioConfig {
            seed: 12,
            duration_s: 60.0,
            ..ScenarioConfig::default()
        };
        cfg.cc.enabled = false;
        cfg.video.enabled = true;
        cfg.video.resolution = OneOrMany::One("1280x720".into());
        cfg.gain_model.enabled = false;
        cfg.link.uplink_capacity_bps = cap;
        let v = run_scenario(&cfg.expand(false)[0]).unwrap().video.unwrap();
        assert!(
            v.delivered_throughput_bps >= last,
            "{cap}: {} < {last}",
            v.delivered_throughput_bps
        );
        assert!(v.delivered_throughput_bps <= cap);
        last = v.delivered_throughput_bps;
    }
}
