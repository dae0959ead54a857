use serde::{Deserialize, Serialize};

use super::NetemError;
use crate::sim::Micros;

/// Positions in meters: `[x, y, z]`, with `z` the height above ground.
pub type Position = [f64; 3];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub uav_position: Position,
    pub bs_position: Position,
    /// Degrees below horizontal. Carried for reporting; the capacity model
    /// folds the antenna pattern into its elevation roll-off.
    pub antenna_tilt_deg: f64,
}

impl Geometry {
    pub fn validate(&self) -> Result<(), String> {
        if !self.uav_position.iter().chain(&self.bs_position).all(|v| v.is_finite()) {
            return Err("positions must be finite".into());
        }
        if self.uav_position[2] < 0.0 {
            return Err(format!("flight height {} m is negative", self.uav_position[2]));
        }
        Ok(())
    }
}

/// Angle above the horizontal plane through the BS antenna to the UAV, in
/// degrees. 90° is directly overhead. A UAV below the antenna plane is
/// measured symmetrically (the absolute vertical separation is used).
pub fn elevation_angle(geom: &Geometry) -> Result<f64, NetemError> {
    let [ux, uy, uz] = geom.uav_position;
    let [bx, by, bz] = geom.bs_position;
    let horizontal = (ux - bx).hypot(uy - by);
    let vertical = (uz - bz).abs();
    if horizontal == 0.0 && vertical == 0.0 {
        return Err(NetemError::UndefinedGeometry);
    }
    Ok(vertical.atan2(horizontal).to_degrees())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub t_s: f64,
    pub x: f64,
    pub y: f64,
    pub height_m: f64,
}

/// UAV trajectory. Positions are relative to the ground below the BS.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FlightPath {
    /// Hovering (or parked, at height 0) at a fixed point.
    Fixed {
        height_m: f64,
        #[serde(default = "default_fixed_distance")]
        horizontal_distance_m: f64,
    },
    /// Piecewise-linear interpolation between timestamped waypoints; the
    /// UAV holds the first/last waypoint outside their time span.
    Waypoints { points: Vec<Waypoint> },
    /// Straight line at constant height along x, passing the BS at
    /// `lateral_offset_m` on y at time `closest_approach_s`.
    FlyOver {
        height_m: f64,
        lateral_offset_m: f64,
        speed_mps: f64,
        closest_approach_s: f64,
    },
}

fn default_fixed_distance() -> f64 {
    10.0
}

impl Default for FlightPath {
    fn default() -> Self {
        FlightPath::Fixed {
            height_m: 0.0,
            horizontal_distance_m: default_fixed_distance(),
        }
    }
}

impl FlightPath {
    pub fn default_fly_over() -> Self {
        FlightPath::FlyOver {
            height_m: 2.0,
            lateral_offset_m: 0.5,
            speed_mps: 0.5,
            closest_approach_s: 30.5,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match self {
            FlightPath::Fixed {
                height_m,
                horizontal_distance_m,
            } => {
                if !(height_m.is_finite() && *height_m >= 0.0) {
                    return Err(format!("fixed height {height_m} m must be finite and >= 0"));
                }
                if !horizontal_distance_m.is_finite() {
                    return Err("fixed horizontal distance must be finite".into());
                }
            }
            FlightPath::Waypoints { points } => {
                if points.is_empty() {
                    return Err("waypoint list is empty".into());
                }
                for w in points {
                    if ![w.t_s, w.x, w.y, w.height_m].iter().all(|v| v.is_finite()) || w.height_m < 0.0 {
                        return Err(format!("invalid waypoint {w:?}"));
                    }
                }
                if points.windows(2).any(|p| p[1].t_s <= p[0].t_s) {
                    return Err("waypoint times must be strictly increasing".into());
                }
            }
            FlightPath::FlyOver {
                height_m,
                lateral_offset_m,
                speed_mps,
                closest_approach_s,
            } => {
                if ![*height_m, *lateral_offset_m, *speed_mps, *closest_approach_s]
                    .iter()
                    .all(|v| v.is_finite())
                    || *height_m < 0.0
                {
                    return Err("fly-over parameters must be finite with height >= 0".into());
                }
            }
        }
        Ok(())
    }

    /// UAV position at true time `t`.
    pub fn position_at(&self, t: Micros) -> Position {
        let t_s = t as f64 / 1e6;
        match self {
            FlightPath::Fixed {
                height_m,
                horizontal_distance_m,
            } => [*horizontal_distance_m, 0.0, *height_m],
            FlightPath::Waypoints { points } => {
                let first = points[0];
                let last = points[points.len() - 1];
                if t_s <= first.t_s {
                    return [first.x, first.y, first.height_m];
                }
                if t_s >= last.t_s {
                    return [last.x, last.y, last.height_m];
                }
                let i = points.partition_point(|w| w.t_s <= t_s);
                let (a, b) = (points[i - 1], points[i]);
                let f = (t_s - a.t_s) / (b.t_s - a.t_s);
                let lerp = |p: f64, q: f64| p + (q - p) * f;
                [lerp(a.x, b.x), lerp(a.y, b.y), lerp(a.height_m, b.height_m)]
            }
            FlightPath::FlyOver {
                height_m,
                lateral_offset_m,
                speed_mps,
                closest_approach_s,
            } => [speed_mps * (t_s - closest_approach_s), *lateral_offset_m, *height_m],
        }
    }

    pub fn height_at(&self, t: Micros) -> f64 {
        self.position_at(t)[2]
    }
}
