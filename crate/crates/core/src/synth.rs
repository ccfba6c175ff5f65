//! Synthetic trajectories for tests, benchmarks and demos.
//!
//! Positions are dead-reckoned from speed and heading starting at a fixed
//! origin, one point per second.

use chrono::{DateTime, TimeDelta, TimeZone, Utc};

use crate::heading::{compute_heading_changes, HeadingDiffMode};
use crate::model::{Trajectory, TrajectoryPoint};

pub const MPH_TO_MPS: f64 = 0.44704;
const METERS_PER_DEGREE: f64 = 111_195.079_734_632_2;

pub const ORIGIN: (f64, f64) = (39.9612, -82.9988);

pub fn start_time() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2016, 7, 12, 19, 0, 0).unwrap()
}

/// Builds a trajectory from per-second speeds (mph) and headings (degrees).
/// Heading changes use the circular difference.
///
/// Panics if the slices differ in length or a heading is outside [0, 360).
pub fn from_series(trip_id: &str, speeds: &[f64], headings: &[f64]) -> Trajectory {
    assert_eq!(speeds.len(), headings.len(), "series lengths differ");
    let changes = if headings.is_empty() {
        Vec::new()
    } else {
        compute_heading_changes(headings, HeadingDiffMode::Circular).expect("headings in range")
    };
    let (mut lat, mut lng) = ORIGIN;
    let start = start_time();
    let points = speeds
        .iter()
        .zip(headings)
        .zip(changes)
        .enumerate()
        .map(|(i, ((&speed, &heading), heading_change))| {
            if i > 0 {
                let d = speed * MPH_TO_MPS;
                let h = heading.to_radians();
                lat += d * h.cos() / METERS_PER_DEGREE;
                lng += d * h.sin() / (METERS_PER_DEGREE * lat.to_radians().cos());
            }
            let prev = if i == 0 { speed } else { speeds[i - 1] };
            TrajectoryPoint {
                time_step: i as u32 + 1,
                timestamp: start + TimeDelta::seconds(i as i64),
                speed,
                acceleration: (speed - prev) * MPH_TO_MPS,
                heading,
                heading_change,
                latitude: lat,
                longitude: lng,
            }
        })
        .collect();
    Trajectory::new(trip_id, points)
}

/// Heading fixed at due north.
pub fn trajectory_from_speeds(speeds: &[f64]) -> Trajectory {
    from_series("synthetic", speeds, &vec![0.0; speeds.len()])
}

/// Speed fixed at 30 mph.
pub fn trajectory_from_headings(headings: &[f64]) -> Trajectory {
    from_series("synthetic", &vec![30.0; headings.len()], headings)
}

/// Offsets a point by `north` and `east` meters.
pub fn offset(lat: f64, lng: f64, north: f64, east: f64) -> (f64, f64) {
    let lat2 = lat + north / METERS_PER_DEGREE;
    let lng2 = lng + east / (METERS_PER_DEGREE * lat.to_radians().cos());
    (lat2, lng2)
}
