//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use uavlink_core::config::{load_config, parse_toml, ScenarioConfig};
use uavlink_core::harness::{self, RunResult};
use uavlink_core::metrics::{beacon_estimate, BeaconProbe};
use uavlink_core::netem::{Delivery, Direction, FlightPath, GainCapacityModel, JitterDist, LinkConfig, Netem};
use uavlink_core::wire::{
    decode_beacon, decode_cc, decode_segment_header, encode_beacon, encode_cc, encode_segment_header, normalize_stick,
    CcFrame, TimestampBeacon, VideoSegmentHeader,
};
use uavlink_core::{Micros, NodeClock, SeededRng};

const SEC: Micros = 1_000_000;

struct Verdict {
    ok: bool,
    detail: String,
}

impl Verdict {
    fn new(ok: bool, detail: impl Into<String>) -> Self {
        Self {
            ok,
            detail: detail.into(),
        }
    }
}

fn within(x: f64, target: f64, rel: f64) -> bool {
    (x - target).abs() <= rel * target
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn toml_config(text: &str) -> ScenarioConfig {
    parse_toml(text).expect("acceptance config parses")
}

// Every run of criteria 1-5 in one place so conservation and determinism can
// revisit them.
struct Runs {
    fig3: Vec<RunResult>,
    table1: Table1,
    fixed320: RunResult,
    aimd720: RunResult,
    step720: RunResult,
    flyover: RunResult,
}

fn fixed320_config() -> ScenarioConfig {
    toml_config(
        r#"
seed = 41
duration_s = 60.0
[cc]
enabled = false
[video]
enabled = true
resolution = "320x240"
fixed_fps = 30.0
"#,
    )
}

fn aimd720_config() -> ScenarioConfig {
    toml_config(
        r#"
seed = 42
duration_s = 120.0
[gain_model]
enabled = false
[cc]
enabled = false
[video]
enabled = true
resolution = "1280x720"
"#,
    )
}

// Down to 4 Mb/s at 60 s, back to the full uplink at 120 s.
fn step720_config() -> ScenarioConfig {
    toml_config(
        r#"
seed = 43
duration_s = 180.0
[gain_model]
enabled = false
[[link.uplink_capacity_schedule]]
at_s = 60.0
uplink_bps = 4.0e6
[[link.uplink_capacity_schedule]]
at_s = 120.0
uplink_bps = 8.78e6
[cc]
enabled = false
[video]
enabled = true
resolution = "1280x720"
"#,
    )
}

fn run_all(out: &Path) -> Runs {
    let fig3 = load_config(&configs_dir().join("fig3.toml")).expect("fig3 config");
    let fig3 = harness::sweep(&fig3, Some(&out.join("fig3"))).expect("fig3 sweep");
    let table1 = table1_runs(out);
    let single = |name: &str, cfg: ScenarioConfig| {
        let dir = out.join(name);
        harness::run_config(&cfg, Some(&dir)).expect(name)
    };
    let fig5 = load_config(&configs_dir().join("fig5.toml")).expect("fig5 config");
    Runs {
        fig3,
        table1,
        fixed320: single("fixed320", fixed320_config()),
        aimd720: single("aimd720", aimd720_config()),
        step720: single("step720", step720_config()),
        flyover: single("flyover", fig5),
    }
}

fn run(runs: &[RunResult], freq: f64) -> &RunResult {
    runs.iter()
        .find(|r| r.scenario.frequency_hz() == freq)
        .expect("frequency in sweep")
}

fn criterion1(runs: &Runs) -> Verdict {
    let cfg = &runs.fig3[0].scenario.config;
    let rx = &cfg.cc.receiver;
    let expected = cfg.link.base_one_way_delay_us as f64 + (rx.poll_period_us + rx.processing_time_us) as f64 / 2.0;
    let freqs = [10.0, 20.0, 30.0, 40.0];
    let mut avgs = Vec::new();
    let mut ok = true;
    for f in freqs {
        let s = run(&runs.fig3, f).cc.as_ref().unwrap();
        ok &= s.reliability == 1.0 && s.n_trans == 10_000;
        let avg = s.aggregate.unwrap().avg;
        ok &= (avg - expected).abs() <= 2_000.0;
        avgs.push(avg);
    }
    let mean = avgs.iter().sum::<f64>() / avgs.len() as f64;
    ok &= avgs.iter().all(|a| (a - mean).abs() <= 2_000.0);
    let shown: Vec<String> = avgs.iter().map(|a| format!("{:.2}", a / 1e3)).collect();
    Verdict::new(
        ok,
        format!(
            "avg delay ms at 10/20/30/40 Hz = [{}], expected {:.2} +/- 2, reliability 1.0",
            shown.join(", "),
            expected / 1e3
        ),
    )
}

fn criterion2(runs: &Runs) -> Verdict {
    let cap_ms = runs.fig3[0].scenario.config.cc.receiver.capacity_frames as f64 * 25.0;
    let mut ok = true;
    let mut parts = Vec::new();
    for f in [50.0, 60.0, 70.0] {
        let s = run(&runs.fig3, f).cc.as_ref().unwrap();
        let max_ms = s.aggregate.unwrap().max as f64 / 1e3;
        ok &= (s.reliability - 40.0 / f).abs() <= 0.03;
        ok &= within(max_ms, cap_ms, 0.05);
        parts.push(format!(
            "{f} Hz rel {:.3} (40/f {:.3}) max {:.0} ms",
            s.reliability,
            40.0 / f,
            max_ms
        ));
    }
    Verdict::new(ok, format!("{}; bound {cap_ms:.0} ms +/- 5%", parts.join("; ")))
}

struct Table1 {
    up_bps: f64,
    down_bps: f64,
    conserved: bool,
}

// Drives one direction at twice its capacity with 1400-byte packets and
// counts bits arriving within the offered span.
fn saturate(netem: &mut Netem, dir: Direction, rng: &mut SeededRng, rows: &mut Vec<(Micros, Micros)>) -> (f64, bool) {
    const PKT: u64 = 1400;
    let cap = netem.capacity_at(dir, 0);
    let span = 10 * SEC;
    let interval = PKT as f64 * 8.0 / (2.0 * cap) * 1e6;
    let mut delivered = 0u64;
    let mut arrivals = 0u64;
    let mut k = 0u64;
    loop {
        let t = (k as f64 * interval).round() as Micros;
        if t >= span {
            break;
        }
        if let Delivery::Arrives(at) = netem.deliver(dir, PKT, t, rng) {
            arrivals += 1;
            rows.push((t, at));
            if at < span {
                delivered += PKT * 8;
            }
        }
        k += 1;
    }
    let c = netem.counters(dir);
    (
        delivered as f64 * 1e6 / span as f64,
        c.is_conserved() && c.admitted == arrivals,
    )
}

fn table1_runs(out: &Path) -> Table1 {
    let mut netem = Netem::new(
        LinkConfig::default(),
        GainCapacityModel::disabled(),
        FlightPath::default(),
    );
    let mut rng = SeededRng::new(17);
    let mut up_rows = Vec::new();
    let mut down_rows = Vec::new();
    let (up_bps, up_ok) = saturate(&mut netem, Direction::Uplink, &mut rng, &mut up_rows);
    let (down_bps, down_ok) = saturate(&mut netem, Direction::Downlink, &mut rng, &mut down_rows);
    let dir = out.join("table1");
    fs::create_dir_all(&dir).unwrap();
    for (name, rows) in [("uplink.csv", up_rows), ("downlink.csv", down_rows)] {
        let mut w = csv::Writer::from_path(dir.join(name)).unwrap();
        w.write_record(["t_send_us", "t_arrive_us"]).unwrap();
        for (s, a) in rows {
            w.write_record([s.to_string(), a.to_string()]).unwrap();
        }
        w.flush().unwrap();
    }
    Table1 {
        up_bps,
        down_bps,
        conserved: up_ok && down_ok,
    }
}

fn criterion3(runs: &Runs) -> Verdict {
    let link = LinkConfig::default();
    let t = &runs.table1;
    let ok = within(t.up_bps, link.uplink_capacity_bps, 0.02) && within(t.down_bps, link.downlink_capacity_bps, 0.02);
    Verdict::new(
        ok,
        format!(
            "uplink {:.3} Mb/s vs {:.2}, downlink {:.3} Mb/s vs {:.2} (+/- 2%)",
            t.up_bps / 1e6,
            link.uplink_capacity_bps / 1e6,
            t.down_bps / 1e6,
            link.downlink_capacity_bps / 1e6
        ),
    )
}

// Bits that may legitimately land in one window at a constant rate: the
// window itself, the arrival-jitter spread and one maximal segment.
fn window_ceiling(r: &RunResult, cap_bps: f64) -> f64 {
    let cfg = &r.scenario.config;
    let spread = match cfg.link.jitter {
        JitterDist::None => 0.0,
        JitterDist::TruncatedNormal {
            sigma_us,
            truncate_sigmas,
        } => 2.0 * sigma_us * truncate_sigmas,
        JitterDist::Uniform { half_width_us } => 2.0 * half_width_us,
    };
    let w = cfg.outputs.window_ms as f64 * 1e3;
    let seg_bits = (cfg.video.mtu_payload as f64 + 20.0) * 8.0;
    cap_bps * (w + spread) / w + seg_bits * 1e6 / w
}

fn criterion4(runs: &Runs) -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();

    let agg = runs.fixed320.video.as_ref().unwrap().aggregate_throughput_bps;
    ok &= within(agg, 7.08e6, 0.05);
    parts.push(format!("320x240@30 aggregate {:.3} Mb/s vs 7.08", agg / 1e6));

    let cap = LinkConfig::default().uplink_capacity_bps;
    let delivered = runs.aimd720.video.as_ref().unwrap().delivered_throughput_bps;
    ok &= delivered >= 0.9 * cap && delivered <= cap;
    parts.push(format!(
        "1280x720 AIMD delivered {:.3} Mb/s = {:.3} x cap",
        delivered / 1e6,
        delivered / cap
    ));

    let mut worst = 0.0f64;
    for r in [&runs.aimd720, &runs.step720] {
        let stats = r.video.as_ref().unwrap();
        let ctx = &r.output.video.as_ref().unwrap().windows;
        for (w, c) in stats.windows.iter().zip(ctx) {
            let ceiling = window_ceiling(r, c.capacity_bps);
            ok &= w.throughput_bps <= ceiling;
            worst = worst.max(w.throughput_bps / c.capacity_bps);
        }
    }
    parts.push(format!("max window/cap {worst:.4}"));

    // Offered load is the controller's rate times the mean frame size.
    let r = &runs.step720;
    let encoder = r.scenario.world_setup().video.expect("video on").encoder;
    let mean_frame_bits = encoder.nominal_bitrate_bps / encoder.reference_fps;
    let stats = r.video.as_ref().unwrap();
    let ctx = &r.output.video.as_ref().unwrap().windows;
    let down = (60..=70).find(|&i| ctx[i].fps * mean_frame_bits <= ctx[i].capacity_bps);
    let up = (120..=130).find(|&i| stats.windows[i].throughput_bps >= 0.9 * ctx[i].capacity_bps);
    ok &= down.is_some() && up.is_some();
    let lag = |x: Option<usize>, at: usize| x.map_or("none".to_string(), |i| (i - at).to_string());
    parts.push(format!(
        "step to 4 Mb/s: offered under cap after {} windows; step back: >= 0.9 cap after {} windows",
        lag(down, 60),
        lag(up, 120)
    ));
    Verdict::new(ok, parts.join("; "))
}

fn argmin_by(xs: impl Iterator<Item = f64>) -> usize {
    xs.enumerate()
        .fold((0, f64::INFINITY), |b, (i, x)| if x < b.1 { (i, x) } else { b })
        .0
}

fn argmax_by(xs: impl Iterator<Item = f64>) -> usize {
    xs.enumerate()
        .fold((0, f64::NEG_INFINITY), |b, (i, x)| if x > b.1 { (i, x) } else { b })
        .0
}

fn criterion5(runs: &Runs) -> Verdict {
    let stats = runs.flyover.video.as_ref().unwrap();
    let ctx = &runs.flyover.output.video.as_ref().unwrap().windows;
    let w = &stats.windows;
    let i_min = argmin_by(w.iter().map(|x| x.throughput_bps));
    let max = w.iter().map(|x| x.throughput_bps).fold(0.0, f64::max);
    let i_elev = argmax_by(ctx.iter().map(|c| c.elevation_deg));
    let i_loss = argmax_by(w.iter().map(|x| x.loss_frac));
    let min = w[i_min].throughput_bps;
    let ok = within(min, 2e6, 0.10)
        && within(max, 8.5e6, 0.10)
        && i_min.abs_diff(i_elev) <= 1
        && i_loss.abs_diff(i_elev) <= 1;
    Verdict::new(
        ok,
        format!(
            "min {:.3} Mb/s in window {i_min}, max {:.3} Mb/s, peak elevation {:.1} deg in window {i_elev}, \
             loss peak {:.3} in window {i_loss}",
            min / 1e6,
            max / 1e6,
            ctx[i_elev].elevation_deg,
            w[i_loss].loss_frac
        ),
    )
}

fn criterion6() -> Verdict {
    let mut rng = SeededRng::new(6);
    let mut ok = true;
    let mut worst = 0;
    let mut estimates = 0usize;
    for _ in 0..1_000 {
        let probe = BeaconProbe {
            refresh_phase_us: rng.uniform_i64(0, 16_666),
            sampler_phase_us: rng.uniform_i64(0, 16_666),
            tx_clock_error_us: rng.uniform_i64(-1_000, 1_000),
            rx_clock_error_us: rng.uniform_i64(-1_000, 1_000),
            ..BeaconProbe::default()
        };
        let capture = SEC + rng.uniform_i64(0, SEC);
        let delay = rng.uniform_i64(10_000, 1_500_000);
        let bound = 1_000_000 / 60 + 1_000_000 / 60 + 2_000;
        for e in beacon_estimate(&probe, &[(capture, delay)]) {
            estimates += 1;
            worst = worst.max(e.error_us().abs());
            ok &= e.error_us().abs() <= bound;
        }
    }
    ok &= estimates == 1_000;

    // At a microsecond grid the quantization vanishes and only the clock
    // residual remains, up to one tick on each side.
    let mut fine_ok = true;
    for _ in 0..1_000 {
        let probe = BeaconProbe {
            display_refresh_hz: 1e6,
            sampler_rate_hz: 1e6,
            refresh_phase_us: 0,
            sampler_phase_us: 0,
            tx_clock_error_us: rng.uniform_i64(-1_000, 1_000),
            rx_clock_error_us: rng.uniform_i64(-1_000, 1_000),
        };
        let residual = (probe.rx_clock_error_us - probe.tx_clock_error_us).abs();
        let capture = SEC + rng.uniform_i64(0, SEC);
        let delay = rng.uniform_i64(10_000, 1_500_000);
        for e in beacon_estimate(&probe, &[(capture, delay)]) {
            fine_ok &= e.error_us().abs() <= residual + 2;
        }
    }
    Verdict::new(
        ok && fine_ok,
        format!("{estimates} estimates, worst |error| {worst} us <= 35333 us; 1 MHz grid error within clock residual"),
    )
}

fn criterion7() -> Verdict {
    let mut ok = true;
    let mut worst = 0;
    let mut worst_post = 0;
    for (seed, drift) in [(1, 50.0), (2, -50.0), (3, 50.0), (4, -50.0)] {
        let mut rng = SeededRng::new(seed);
        let mut clock = NodeClock::default().with_drift(drift).ntp_sync(0, &mut rng);
        let mut t = 0;
        while t <= 300 * SEC {
            if t >= clock.next_sync_at() {
                clock = clock.ntp_sync(t, &mut rng);
                let post = clock.error_at(t).abs();
                worst_post = worst_post.max(post);
                ok &= post <= 1_000;
            }
            let e = clock.error_at(t).abs();
            worst = worst.max(e);
            ok &= e <= 1_500;
            t += 100_000;
        }
    }
    Verdict::new(
        ok,
        format!("worst |local - true| {worst} us (<= 1500), worst post-sync {worst_post} us (<= 1000)"),
    )
}

fn codec_roundtrips() -> Result<(), String> {
    let mut rng = SeededRng::new(8);
    let i16r = |rng: &mut SeededRng| rng.uniform_i64(i16::MIN as i64, i16::MAX as i64) as i16;
    for _ in 0..10_000 {
        let f = CcFrame {
            frame_id: rng.next_u64() as u32,
            roll: normalize_stick(i16r(&mut rng)),
            pitch: normalize_stick(i16r(&mut rng)),
            yaw: normalize_stick(i16r(&mut rng)),
            thrust: normalize_stick(i16r(&mut rng)),
        };
        let bytes = encode_cc(&f).map_err(|e| e.to_string())?;
        if decode_cc(&bytes).map_err(|e| e.to_string())? != f {
            return Err(format!("cc frame {f:?} changed"));
        }
    }
    for _ in 0..10_000 {
        let count = rng.uniform_i64(1, u16::MAX as i64) as u16;
        let index = rng.uniform_i64(0, count as i64 - 1) as u16;
        let h = VideoSegmentHeader {
            stream_epoch: rng.next_u64() as u16,
            frame_seq: rng.next_u64() as u32,
            segment_index: index,
            segment_count: count,
            capture_ts: rng.next_u64(),
            payload_len: rng.uniform_i64(1, u16::MAX as i64) as u16,
        };
        let bytes = encode_segment_header(&h).map_err(|e| e.to_string())?;
        if decode_segment_header(&bytes).map_err(|e| e.to_string())? != h {
            return Err(format!("segment header {h:?} changed"));
        }
    }
    for _ in 0..10_000 {
        let b = TimestampBeacon {
            beacon_ts: rng.next_u64(),
            refresh_seq: rng.next_u64() as u32,
        };
        if decode_beacon(&encode_beacon(&b)).map_err(|e| e.to_string())? != b {
            return Err(format!("beacon {b:?} changed"));
        }
    }
    Ok(())
}

fn criterion8(runs: &Runs) -> Verdict {
    let mut ok = runs.table1.conserved;
    let mut checked = 2;
    let mut broken = Vec::new();
    let all = runs
        .fig3
        .iter()
        .chain([&runs.fixed320, &runs.aimd720, &runs.step720, &runs.flyover]);
    for r in all {
        for c in [r.cc_conservation(), r.video_conservation()].into_iter().flatten() {
            checked += 1;
            if !c.holds() {
                ok = false;
                broken.push(format!("{}: {c:?}", r.scenario.id));
            }
        }
        let (cc_path, video_path) = r.netem_counters();
        for p in [cc_path, video_path].into_iter().flatten() {
            ok &= p.is_conserved();
        }
    }
    let codec = codec_roundtrips();
    ok &= codec.is_ok();
    let mut detail = format!("{checked} flows conserved; 3 x 10000 codec round trips");
    if !broken.is_empty() {
        detail = format!("broken: {}", broken.join("; "));
    }
    if let Err(e) = codec {
        detail.push_str(&format!("; codec: {e}"));
    }
    Verdict::new(ok, detail)
}

fn csv_files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|e| e == "csv") {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn criterion9(first: &Path) -> Verdict {
    let second = tempfile::tempdir().unwrap();
    run_all(second.path());
    let a = csv_files(first);
    let b = csv_files(second.path());
    let differing: Vec<String> = a
        .iter()
        .filter(|(k, v)| b.get(*k) != Some(*v))
        .map(|(k, _)| k.display().to_string())
        .collect();
    let ok = !a.is_empty() && a.len() == b.len() && differing.is_empty();
    Verdict::new(
        ok,
        if differing.is_empty() {
            format!("{} CSV files byte-identical across reruns", a.len())
        } else {
            format!("differing: {}", differing.join(", "))
        },
    )
}

fn main() -> ExitCode {
    let first = tempfile::tempdir().unwrap();
    let runs = run_all(first.path());
    let verdicts = [
        ("CC plateau 10-40 Hz", criterion1(&runs)),
        ("CC knee and blow-up 50-70 Hz", criterion2(&runs)),
        ("link capacity cap", criterion3(&runs)),
        ("video throughput", criterion4(&runs)),
        ("fly-over", criterion5(&runs)),
        ("beacon estimator bound", criterion6()),
        ("clock sync", criterion7()),
        ("conservation", criterion8(&runs)),
        ("determinism", criterion9(first.path())),
    ];
    let mut failed = 0;
    for (i, (name, v)) in verdicts.iter().enumerate() {
        println!("{} {} {name}: {}", if v.ok { "PASS" } else { "FAIL" }, i + 1, v.detail);
        failed += usize::from(!v.ok);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
