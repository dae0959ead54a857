//! Runs scenarios, writes their CSV outputs and turns result directories
//! into plot-ready series.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ConfigError, Scenario, ScenarioConfig};
use crate::metrics::{self, CcStats, MetricError, VideoStats};
use crate::netem::PathCounters;
use crate::world::{World, WorldOutput};

pub const SUMMARY_FILE: &str = "summary.csv";
pub const CC_LOG_FILE: &str = "cc_log.csv";
pub const VIDEO_LOG_FILE: &str = "video_log.csv";
pub const WINDOWS_FILE: &str = "windows.csv";
pub const META_FILE: &str = "meta.json";

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot read results in {path}: {message}")]
    Results { path: PathBuf, message: String },
    #[error("scenario {scenario}: {source}")]
    Metric {
        scenario: String,
        #[source]
        source: MetricError,
    },
    #[error("{0}")]
    Plot(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> HarnessError + '_ {
    move |e| HarnessError::Io {
        path: path.to_path_buf(),
        source: e.into(),
    }
}

/// Send/delivery accounting for one flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conservation {
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
    /// Still in the network or a receive buffer at cut-off.
    pub residue: u64,
}

impl Conservation {
    pub fn holds(&self) -> bool {
        self.sent == self.delivered + self.dropped + self.residue
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub scenario: Scenario,
    pub output: WorldOutput,
    pub cc: Option<CcStats>,
    pub video: Option<VideoStats>,
}

impl RunResult {
    /// CC frames: delivered means logged by the receiver; dropped covers
    /// network loss, buffer overflow and undecodable datagrams.
    pub fn cc_conservation(&self) -> Option<Conservation> {
        let c = self.output.cc.as_ref()?;
        Some(Conservation {
            sent: c.transmitted(),
            delivered: c.log.rx.len() as u64,
            dropped: c.netem.dropped_random + c.netem.dropped_queue + c.receiver.overflow_drops + c.receiver.corrupt,
            residue: c.in_flight + c.in_buffer,
        })
    }

    pub fn video_conservation(&self) -> Option<Conservation> {
        let v = self.output.video.as_ref()?;
        let delivered = v.log.segments.iter().filter(|s| s.t_arrive_us.is_some()).count() as u64;
        Some(Conservation {
            sent: v.log.segments.len() as u64,
            delivered,
            dropped: v.netem.dropped_random + v.netem.dropped_queue,
            residue: v.in_flight_segments,
        })
    }

    pub fn netem_counters(&self) -> (Option<PathCounters>, Option<PathCounters>) {
        (
            self.output.cc.as_ref().map(|c| c.netem),
            self.output.video.as_ref().map(|v| v.netem),
        )
    }

    pub fn summary_row(&self) -> SummaryRow {
        let s = &self.scenario;
        let delay = match (&self.cc, &self.video) {
            (Some(c), _) => c.aggregate,
            (None, Some(v)) => v.delay,
            _ => None,
        };
        SummaryRow {
            scenario_id: s.id.clone(),
            freq_hz: self.cc.as_ref().map(|_| s.frequency_hz()),
            height_m: s.height_m(),
            resolution: self.video.as_ref().map(|_| s.resolution().to_string()),
            delay_min_us: delay.map(|a| a.min),
            delay_avg_us: delay.map(|a| a.avg),
            delay_max_us: delay.map(|a| a.max),
            reliability: self.cc.as_ref().map(|c| c.reliability),
            throughput_avg_bps: self.video.as_ref().map(|v| v.aggregate_throughput_bps),
            segment_loss_frac: self.video.as_ref().map(|v| v.segment_loss_frac),
            seed: s.config.seed,
            config_hash: s.config_hash.clone(),
        }
    }
}

/// One summary CSV row. Delay columns describe CC frames when the CC stream
/// is on, otherwise video frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scenario_id: String,
    pub freq_hz: Option<f64>,
    pub height_m: f64,
    pub resolution: Option<String>,
    pub delay_min_us: Option<i64>,
    pub delay_avg_us: Option<f64>,
    pub delay_max_us: Option<i64>,
    pub reliability: Option<f64>,
    pub throughput_avg_bps: Option<f64>,
    pub segment_loss_frac: Option<f64>,
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct WindowRow {
    window_start_s: f64,
    throughput_bps: f64,
    segment_loss_frac: f64,
    segs_sent: u64,
    segs_lost: u64,
    elevation_deg: f64,
    capacity_bps: f64,
    fps: f64,
}

#[derive(Serialize)]
struct RunMeta<'a> {
    scenario_id: &'a str,
    seed: u64,
    config_hash: &'a str,
    version: &'a str,
    cc_conservation: Option<Conservation>,
    video_conservation: Option<Conservation>,
    cc_netem: Option<PathCounters>,
    video_netem: Option<PathCounters>,
    events: u64,
    config: &'a ScenarioConfig,
}

/// Runs one scenario in a fresh world and computes its metrics.
pub fn run_scenario(scenario: &Scenario) -> Result<RunResult, HarnessError> {
    let output = World::new(scenario.world_setup()).run();
    let metric = |source| HarnessError::Metric {
        scenario: scenario.id.clone(),
        source,
    };
    let cc = output
        .cc
        .as_ref()
        .map(|c| CcStats::from_log(&c.log))
        .transpose()
        .map_err(metric)?;
    let window_us = scenario.config.outputs.window_ms as i64 * 1_000;
    let video = output
        .video
        .as_ref()
        .map(|v| metrics::video_delay_and_throughput(&v.log, window_us, scenario.duration_us()))
        .transpose()
        .map_err(metric)?;
    Ok(RunResult {
        scenario: scenario.clone(),
        output,
        cc,
        video,
    })
}

/// Writes one run's logs, window series and metadata under `dir/<id>/`.
pub fn write_run(result: &RunResult, dir: &Path) -> Result<(), HarnessError> {
    let run_dir = dir.join(&result.scenario.id);
    fs::create_dir_all(&run_dir).map_err(io_err(&run_dir))?;
    if let Some(c) = &result.output.cc {
        let path = run_dir.join(CC_LOG_FILE);
        let f = File::create(&path).map_err(io_err(&path))?;
        c.log.write_csv(BufWriter::new(f)).map_err(csv_err(&path))?;
    }
    if let (Some(v), Some(stats)) = (&result.output.video, &result.video) {
        let path = run_dir.join(VIDEO_LOG_FILE);
        let f = File::create(&path).map_err(io_err(&path))?;
        v.log.write_csv(BufWriter::new(f)).map_err(csv_err(&path))?;

        let path = run_dir.join(WINDOWS_FILE);
        let f = File::create(&path).map_err(io_err(&path))?;
        let mut w = csv::Writer::from_writer(BufWriter::new(f));
        for (i, s) in stats.windows.iter().enumerate() {
            let ctx = v.windows.get(i);
            w.serialize(WindowRow {
                window_start_s: s.start_us as f64 / 1e6,
                throughput_bps: s.throughput_bps,
                segment_loss_frac: s.loss_frac,
                segs_sent: s.segs_sent,
                segs_lost: s.segs_lost,
                elevation_deg: ctx.map_or(f64::NAN, |c| c.elevation_deg),
                capacity_bps: ctx.map_or(f64::NAN, |c| c.capacity_bps),
                fps: ctx.map_or(f64::NAN, |c| c.fps),
            })
            .map_err(csv_err(&path))?;
        }
        w.flush().map_err(io_err(&path))?;
    }
    let (cc_netem, video_netem) = result.netem_counters();
    let meta = RunMeta {
        scenario_id: &result.scenario.id,
        seed: result.scenario.config.seed,
        config_hash: &result.scenario.config_hash,
        version: env!("CARGO_PKG_VERSION"),
        cc_conservation: result.cc_conservation(),
        video_conservation: result.video_conservation(),
        cc_netem,
        video_netem,
        events: result.output.events,
        config: &result.scenario.config,
    };
    let path = run_dir.join(META_FILE);
    let text = serde_json::to_string_pretty(&meta).expect("metadata serializes");
    fs::write(&path, text + "\n").map_err(io_err(&path))
}

pub fn write_summary(results: &[RunResult], dir: &Path) -> Result<PathBuf, HarnessError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join(SUMMARY_FILE);
    let f = File::create(&path).map_err(io_err(&path))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(f));
    for r in results {
        w.serialize(r.summary_row()).map_err(csv_err(&path))?;
    }
    w.flush().map_err(io_err(&path))?;
    Ok(path)
}

/// Runs every combination of the config's sweep axes in parallel. Each
/// scenario seed is derived from the master seed and its axis values.
/// Results come back in expansion order whatever the execution order.
pub fn sweep(cfg: &ScenarioConfig, out: Option<&Path>) -> Result<Vec<RunResult>, HarnessError> {
    cfg.validate()?;
    let scenarios = cfg.expand(true);
    let results = scenarios
        .par_iter()
        .map(|s| {
            let r = run_scenario(s)?;
            if let Some(dir) = out {
                write_run(&r, dir)?;
            }
            Ok(r)
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    if let Some(dir) = out {
        write_summary(&results, dir)?;
    }
    Ok(results)
}

/// Runs a config that names exactly one scenario, with the master seed.
pub fn run_config(cfg: &ScenarioConfig, out: Option<&Path>) -> Result<RunResult, HarnessError> {
    cfg.validate()?;
    let mut scenarios = cfg.expand(false);
    if scenarios.len() != 1 {
        return Err(ConfigError::Invalid(format!(
            "config defines {} scenarios; use sweep for lists",
            scenarios.len()
        ))
        .into());
    }
    let r = run_scenario(&scenarios.remove(0))?;
    if let Some(dir) = out {
        write_run(&r, dir)?;
        write_summary(std::slice::from_ref(&r), dir)?;
    }
    Ok(r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    Fig3,
    Fig4,
    Fig5,
}

impl std::str::FromStr for PlotKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "fig3" => Ok(PlotKind::Fig3),
            "fig4" => Ok(PlotKind::Fig4),
            "fig5" => Ok(PlotKind::Fig5),
            _ => Err(format!("unknown plot kind {s:?} (expected fig3, fig4 or fig5)")),
        }
    }
}

impl PlotKind {
    fn file_name(self) -> &'static str {
        match self {
            PlotKind::Fig3 => "fig3.csv",
            PlotKind::Fig4 => "fig4.csv",
            PlotKind::Fig5 => "fig5.csv",
        }
    }
}

pub fn read_summary(dir: &Path) -> Result<Vec<SummaryRow>, HarnessError> {
    let path = dir.join(SUMMARY_FILE);
    let results_err = |message: String| HarnessError::Results {
        path: path.clone(),
        message,
    };
    let mut r = csv::Reader::from_path(&path).map_err(|e| results_err(e.to_string()))?;
    r.deserialize()
        .collect::<Result<Vec<SummaryRow>, _>>()
        .map_err(|e| results_err(e.to_string()))
}

fn fmt_opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Writes `<dir>/fig{3,4,5}.csv` from a results directory and returns its
/// path. Nothing is written when the required axis is absent.
pub fn emit_plotdata(dir: &Path, kind: PlotKind) -> Result<PathBuf, HarnessError> {
    let rows = read_summary(dir)?;
    if rows.is_empty() {
        return Err(HarnessError::Plot(format!(
            "{} has no result rows",
            dir.join(SUMMARY_FILE).display()
        )));
    }
    let mut lines: Vec<String> = Vec::new();
    match kind {
        PlotKind::Fig3 => {
            let mut rows: Vec<_> = rows.iter().filter(|r| r.freq_hz.is_some()).collect();
            if rows.is_empty() {
                return Err(HarnessError::Plot(
                    "fig3 needs a CC frequency sweep; no row has freq_hz".into(),
                ));
            }
            rows.sort_by(|a, b| {
                a.height_m
                    .total_cmp(&b.height_m)
                    .then(a.freq_hz.unwrap().total_cmp(&b.freq_hz.unwrap()))
            });
            lines.push("height_m,freq_hz,delay_min_ms,delay_avg_ms,delay_max_ms,reliability".into());
            for r in rows {
                lines.push(format!(
                    "{},{},{},{},{},{}",
                    r.height_m,
                    fmt_opt(r.freq_hz),
                    fmt_opt(r.delay_min_us.map(|d| d as f64 / 1e3)),
                    fmt_opt(r.delay_avg_us.map(|d| d / 1e3)),
                    fmt_opt(r.delay_max_us.map(|d| d as f64 / 1e3)),
                    fmt_opt(r.reliability),
                ));
            }
        }
        PlotKind::Fig4 => {
            let mut rows: Vec<_> = rows.iter().filter(|r| r.resolution.is_some()).collect();
            if rows.is_empty() {
                return Err(HarnessError::Plot(
                    "fig4 needs a video resolution sweep; no row has a resolution".into(),
                ));
            }
            rows.sort_by(|a, b| {
                let pixels = |r: &SummaryRow| {
                    r.resolution
                        .as_deref()
                        .and_then(|s| s.parse::<crate::video::Resolution>().ok())
                };
                pixels(a).cmp(&pixels(b)).then(a.height_m.total_cmp(&b.height_m))
            });
            lines.push("resolution,height_m,delay_avg_ms,throughput_bps,segment_loss_frac".into());
            for r in rows {
                lines.push(format!(
                    "{},{},{},{},{}",
                    r.resolution.as_deref().unwrap_or_default(),
                    r.height_m,
                    fmt_opt(r.delay_avg_us.map(|d| d / 1e3)),
                    fmt_opt(r.throughput_avg_bps),
                    fmt_opt(r.segment_loss_frac),
                ));
            }
        }
        PlotKind::Fig5 => {
            lines.push("scenario_id,t_s,throughput_bps,segment_loss_frac,elevation_deg".into());
            for r in rows.iter().filter(|r| r.resolution.is_some()) {
                let path = dir.join(&r.scenario_id).join(WINDOWS_FILE);
                let mut rd = csv::Reader::from_path(&path).map_err(|e| HarnessError::Results {
                    path: path.clone(),
                    message: e.to_string(),
                })?;
                for w in rd.deserialize::<WindowRow>() {
                    let w = w.map_err(|e| HarnessError::Results {
                        path: path.clone(),
                        message: e.to_string(),
                    })?;
                    lines.push(format!(
                        "{},{},{},{},{}",
                        r.scenario_id, w.window_start_s, w.throughput_bps, w.segment_loss_frac, w.elevation_deg
                    ));
                }
            }
            if lines.len() == 1 {
                return Err(HarnessError::Plot("fig5 needs a video run with a window series".into()));
            }
        }
    }
    let path = dir.join(kind.file_name());
    fs::write(&path, lines.join("\n") + "\n").map_err(io_err(&path))?;
    Ok(path)
}
