//! Deterministic discrete-event emulator of a cellular-connected UAV link:
//! a downlink command-and-control (CC) stream, an uplink video stream, the
//! LTE-like radio path between them, and the end-to-end metrics used to
//! evaluate both.
//!
//! A run is described by a [`ScenarioConfig`], expanded into concrete
//! [`Scenario`]s, executed in a fresh [`World`] each, and reduced to
//! [`CcStats`] and [`VideoStats`] by [`harness::run_scenario`].

// Range checks are written `!(x > lo)` on purpose so NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cc;
pub mod config;
pub mod harness;
pub mod metrics;
pub mod netem;
pub mod sim;
pub mod video;
pub mod wire;
pub mod world;

pub use cc::{CcLog, ControlAction, ReceiverConfig, ReceiverState, SenderState, StickSource};
pub use config::{load_config, ConfigError, Scenario, ScenarioConfig};
pub use harness::{HarnessError, PlotKind, RunResult};
pub use metrics::{BeaconProbe, CcStats, MetricError, VideoStats};
pub use netem::{Direction, FlightPath, GainCapacityModel, LinkConfig, Netem};
pub use sim::{EventQueue, Micros, NodeClock, SeededRng};
pub use video::{EncoderModel, FpsController, Resolution, VideoLog};
pub use wire::{CcFrame, TimestampBeacon, VideoSegmentHeader, WireError};
pub use world::{World, WorldOutput, WorldSetup};
