//! Rule-based automated annotator.
//!
//! Every point is compared with its `k` neighbours on each side. A point
//! can end a speed-up (local speed maximum), a slow-down (local minimum,
//! relabelled traffic-jam below the low-speed threshold), a traffic-light
//! stop, a turn (isolated heading change) or, when enabled, a loop.
//!
//! Index sets returned here are time steps (1-based).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, FlatConfig};
use crate::geo::{haversine_unchecked, EARTH_RADIUS_METERS};
use crate::heading::HEADING_ZERO_TOLERANCE;
use crate::model::{AnnotationLayer, AnnotationType, SegmentType, SegmentTypes, Trajectory};

pub const AUTOANN_AUTHOR: &str = "AutoAnn";

#[derive(Debug, Error, PartialEq)]
pub enum AutoAnnError {
    #[error("invalid AutoAnn config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoAnnConfig {
    /// Neighbourhood radius in points.
    pub k: usize,
    /// mph
    pub low_speed_threshold: f64,
    /// degrees
    pub turn_threshold: f64,
    /// meters
    pub loop_radius: f64,
    /// mph
    pub loop_min_speed: f64,
    pub loop_enabled: bool,
}

impl Default for AutoAnnConfig {
    fn default() -> Self {
        Self {
            k: 5,
            low_speed_threshold: 9.0,
            turn_threshold: 15.0,
            loop_radius: 15.0,
            loop_min_speed: 5.0,
            loop_enabled: false,
        }
    }
}

impl AutoAnnConfig {
    pub const KEYS: [&'static str; 6] = [
        "k",
        "low_speed_threshold",
        "turn_threshold",
        "loop_radius",
        "loop_min_speed",
        "loop_enabled",
    ];

    pub fn validate(&self) -> Result<(), AutoAnnError> {
        if self.k == 0 {
            return Err(AutoAnnError::InvalidConfig("k must be at least 1".into()));
        }
        for (name, v) in [
            ("low_speed_threshold", self.low_speed_threshold),
            ("turn_threshold", self.turn_threshold),
            ("loop_radius", self.loop_radius),
            ("loop_min_speed", self.loop_min_speed),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(AutoAnnError::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Defaults overridden by whichever AutoAnn keys `cfg` carries.
    pub fn from_flat(cfg: &FlatConfig) -> Result<Self, ConfigError> {
        let mut out = Self::default();
        if let Some(v) = cfg.value("k")? {
            out.k = v;
        }
        if let Some(v) = cfg.value("low_speed_threshold")? {
            out.low_speed_threshold = v;
        }
        if let Some(v) = cfg.value("turn_threshold")? {
            out.turn_threshold = v;
        }
        if let Some(v) = cfg.value("loop_radius")? {
            out.loop_radius = v;
        }
        if let Some(v) = cfg.value("loop_min_speed")? {
            out.loop_min_speed = v;
        }
        if let Some(v) = cfg.flag("loop_enabled")? {
            out.loop_enabled = v;
        }
        out.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Extremum {
    Max,
    Min,
}

/// Plateau rule: the last point of a flat top (or bottom) is the extremum,
/// so compare non-strictly with predecessors and strictly with successors.
fn local_extrema(speeds: &[f64], k: usize, kind: Extremum) -> Vec<usize> {
    let n = speeds.len();
    if k == 0 || n < 2 * k + 1 {
        return Vec::new();
    }
    let dominates = |x: f64, y: f64, strict: bool| match (kind, strict) {
        (Extremum::Max, true) => x > y,
        (Extremum::Max, false) => x >= y,
        (Extremum::Min, true) => x < y,
        (Extremum::Min, false) => x <= y,
    };
    (k..n - k)
        .filter(|&i| {
            let s = speeds[i];
            speeds[i - k..i].iter().all(|&p| dominates(s, p, false))
                && speeds[i + 1..=i + k].iter().all(|&q| dominates(s, q, true))
        })
        .collect()
}

fn steps(trajectory: &Trajectory, idx: impl IntoIterator<Item = usize>) -> Vec<u32> {
    idx.into_iter().map(|i| trajectory.points[i].time_step).collect()
}

/// Points that are a local speed maximum among their `k` predecessors and
/// `k` successors.
pub fn detect_speedup_ends(trajectory: &Trajectory, config: &AutoAnnConfig) -> Vec<u32> {
    steps(trajectory, local_extrema(&trajectory.speeds(), config.k, Extremum::Max))
}

/// Mirror of [`detect_speedup_ends`] for local minima.
pub fn detect_slowdown_ends(trajectory: &Trajectory, config: &AutoAnnConfig) -> Vec<u32> {
    steps(trajectory, local_extrema(&trajectory.speeds(), config.k, Extremum::Min))
}

/// Slow-down ends slower than the low-speed threshold become traffic jams.
pub fn classify_slowdowns(
    trajectory: &Trajectory,
    slowdown_ends: &[u32],
    config: &AutoAnnConfig,
) -> BTreeMap<u32, SegmentType> {
    slowdown_ends
        .iter()
        .filter_map(|&s| trajectory.point(s).map(|p| (s, p.speed)))
        .map(|(s, speed)| {
            let t = if speed < config.low_speed_threshold {
                SegmentType::TrafficJam
            } else {
                SegmentType::SlowDown
            };
            (s, t)
        })
        .collect()
}

/// End of a standstill: the point and its `k` predecessors are below the
/// low-speed threshold and the next point is above it.
pub fn detect_traffic_light_ends(trajectory: &Trajectory, config: &AutoAnnConfig) -> Vec<u32> {
    let speeds = trajectory.speeds();
    let (n, k, low) = (speeds.len(), config.k, config.low_speed_threshold);
    if n < k + 2 {
        return Vec::new();
    }
    let idx = (k..n - 1).filter(|&i| {
        speeds[i - k..=i].iter().all(|&s| s < low) && speeds[i + 1] > low
    });
    steps(trajectory, idx)
}

/// An isolated heading change above the turn threshold, with no change
/// (within tolerance) at the `k` points on either side.
pub fn detect_turn_ends(trajectory: &Trajectory, config: &AutoAnnConfig) -> Vec<u32> {
    let hc = trajectory.heading_changes();
    let (n, k) = (hc.len(), config.k);
    if k == 0 || n < 2 * k + 1 {
        return Vec::new();
    }
    let flat = |v: f64| v <= HEADING_ZERO_TOLERANCE;
    let idx = (k..n - k).filter(|&i| {
        hc[i] > config.turn_threshold
            && hc[i - k..i].iter().all(|&v| flat(v))
            && hc[i + 1..=i + k].iter().all(|&v| flat(v))
    });
    steps(trajectory, idx)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopSpan {
    pub begin: u32,
    pub end: u32,
}

/// Returns to an earlier position while moving. For each end point the
/// earliest qualifying return is taken, loops do not overlap, and the begin
/// point is the closest earlier position (earliest on ties).
///
/// Returns nothing unless `loop_enabled` is set.
pub fn detect_loops(trajectory: &Trajectory, config: &AutoAnnConfig) -> Vec<LoopSpan> {
    if !config.loop_enabled {
        return Vec::new();
    }
    let pts = &trajectory.points;
    let gap = 2 * config.k;
    let mut out = Vec::new();
    // first index a new loop may begin at
    let mut floor = 0usize;
    for i in 0..pts.len() {
        if i < floor + gap + 1 || pts[i].speed <= config.loop_min_speed {
            continue;
        }
        // min speed over [j, i], extended leftwards as j decreases
        let mut window_min = pts[i - gap..=i]
            .iter()
            .map(|p| p.speed)
            .fold(f64::INFINITY, f64::min);
        let here = pts[i].position();
        let mut best: Option<(usize, f64)> = None;
        for j in (floor..i - gap).rev() {
            window_min = window_min.min(pts[j].speed);
            if window_min <= config.loop_min_speed {
                break;
            }
            let d = haversine_unchecked(pts[j].position(), here, EARTH_RADIUS_METERS);
            if d < config.loop_radius && best.is_none_or(|(_, bd)| d <= bd) {
                best = Some((j, d));
            }
        }
        if let Some((j, _)) = best {
            out.push(LoopSpan {
                begin: pts[j].time_step,
                end: pts[i].time_step,
            });
            floor = i + 1;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AutoAnnResult {
    /// One Segment mark per index where any heuristic fired.
    pub layer: AnnotationLayer,
    /// Marks per segment type; a mark with two types counts once for each.
    pub type_histogram: BTreeMap<SegmentType, usize>,
    pub loops: Vec<LoopSpan>,
}

impl AutoAnnResult {
    pub fn total_marks(&self) -> usize {
        self.layer.len()
    }

    pub fn total_typed(&self) -> usize {
        self.type_histogram.values().sum()
    }
}

/// Runs every heuristic and merges the results into one layer authored by
/// [`AUTOANN_AUTHOR`]. Heuristics firing at the same index share one mark.
/// A loop contributes a mark at its end point only.
pub fn run_autoann(
    trajectory: &Trajectory,
    config: &AutoAnnConfig,
) -> Result<AutoAnnResult, AutoAnnError> {
    config.validate()?;
    let mut by_step: BTreeMap<u32, SegmentTypes> = BTreeMap::new();
    let mut add = |step: u32, t: SegmentType| {
        by_step.entry(step).or_default().insert(t);
    };
    for s in detect_speedup_ends(trajectory, config) {
        add(s, SegmentType::SpeedUp);
    }
    let slowdowns = detect_slowdown_ends(trajectory, config);
    for (s, t) in classify_slowdowns(trajectory, &slowdowns, config) {
        add(s, t);
    }
    for s in detect_traffic_light_ends(trajectory, config) {
        add(s, SegmentType::TrafficLight);
    }
    for s in detect_turn_ends(trajectory, config) {
        add(s, SegmentType::Turn);
    }
    let loops = detect_loops(trajectory, config);
    for l in &loops {
        add(l.end, SegmentType::Loop);
    }

    let mut layer = AnnotationLayer::new(trajectory.trip_id.clone(), AUTOANN_AUTHOR);
    let mut type_histogram = BTreeMap::new();
    for (step, types) in by_step {
        for t in &types {
            *type_histogram.entry(*t).or_insert(0) += 1;
        }
        layer
            .apply(step, AnnotationType::Segment, types)
            .expect("every mark carries at least one type");
    }
    Ok(AutoAnnResult {
        layer,
        type_histogram,
        loops,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{trajectory_from_headings, trajectory_from_speeds};

    fn cfg() -> AutoAnnConfig {
        AutoAnnConfig::default()
    }

    #[test]
    fn speedup_example() {
        let t = trajectory_from_speeds(&[10., 12., 14., 16., 18., 20., 18., 16., 14., 12., 10., 8., 6.]);
        assert_eq!(detect_speedup_ends(&t, &cfg()), vec![6]);
        assert!(detect_slowdown_ends(&t, &cfg()).is_empty());
    }

    #[test]
    fn slowdown_example() {
        let t = trajectory_from_speeds(&[20., 18., 16., 14., 12., 10., 12., 14., 16., 18., 20., 22., 24.]);
        assert_eq!(detect_slowdown_ends(&t, &cfg()), vec![6]);
    }

    #[test]
    fn mirrored_series_share_extrema() {
        let up = [10., 12., 14., 16., 18., 20., 18., 16., 14., 12., 10., 8., 6.];
        let mirrored: Vec<f64> = up.iter().map(|s| 30.0 - s).collect();
        assert_eq!(
            detect_slowdown_ends(&trajectory_from_speeds(&mirrored), &cfg()),
            detect_speedup_ends(&trajectory_from_speeds(&up), &cfg())
        );
    }

    #[test]
    fn flat_and_monotone_have_no_extrema() {
        let flat = trajectory_from_speeds(&[30.0; 20]);
        assert!(detect_speedup_ends(&flat, &cfg()).is_empty());
        assert!(detect_slowdown_ends(&flat, &cfg()).is_empty());
        let rising: Vec<f64> = (0..20).map(f64::from).collect();
        assert!(detect_speedup_ends(&trajectory_from_speeds(&rising), &cfg()).is_empty());
        let short = trajectory_from_speeds(&[1., 5., 1.]);
        assert!(detect_speedup_ends(&short, &cfg()).is_empty());
    }

    #[test]
    fn plateau_marks_its_last_point() {
        let t = trajectory_from_speeds(&[1., 2., 3., 4., 5., 9., 9., 9., 4., 3., 2., 1., 0., 0.]);
        assert_eq!(detect_speedup_ends(&t, &cfg()), vec![8]);
    }

    #[test]
    fn slowdown_classification() {
        let mut speeds = vec![30.0; 13];
        speeds[6] = 10.0;
        let t = trajectory_from_speeds(&speeds);
        let ends = detect_slowdown_ends(&t, &cfg());
        assert_eq!(ends, vec![7]);
        assert_eq!(classify_slowdowns(&t, &ends, &cfg())[&7], SegmentType::SlowDown);
        speeds[6] = 5.0;
        let t = trajectory_from_speeds(&speeds);
        assert_eq!(classify_slowdowns(&t, &[7], &cfg())[&7], SegmentType::TrafficJam);
        speeds[6] = 9.0;
        let t = trajectory_from_speeds(&speeds);
        assert_eq!(classify_slowdowns(&t, &[7], &cfg())[&7], SegmentType::SlowDown);
    }

    #[test]
    fn traffic_light_examples() {
        let t = trajectory_from_speeds(&[0., 0., 0., 0., 0., 0., 15.]);
        assert_eq!(detect_traffic_light_ends(&t, &cfg()), vec![6]);
        let t = trajectory_from_speeds(&[0., 0., 0., 0., 12., 0., 15.]);
        assert!(detect_traffic_light_ends(&t, &cfg()).is_empty());
        let t = trajectory_from_speeds(&[30.0; 12]);
        assert!(detect_traffic_light_ends(&t, &cfg()).is_empty());
        // successor exactly at the threshold is not "larger"
        let t = trajectory_from_speeds(&[0., 0., 0., 0., 0., 0., 9.]);
        assert!(detect_traffic_light_ends(&t, &cfg()).is_empty());
    }

    #[test]
    fn turn_examples() {
        let with_change = |c: f64| {
            let mut hc = vec![0.0; 11];
            hc[5] = c;
            trajectory_from_headings_changes(&hc)
        };
        assert_eq!(detect_turn_ends(&with_change(20.0), &cfg()), vec![6]);
        assert!(detect_turn_ends(&with_change(10.0), &cfg()).is_empty());
        assert!(detect_turn_ends(&with_change(0.0), &cfg()).is_empty());
        // jitter within tolerance does not block a turn
        let mut hc = vec![0.4; 11];
        hc[0] = 0.0;
        hc[5] = 20.0;
        assert_eq!(detect_turn_ends(&trajectory_from_headings_changes(&hc), &cfg()), vec![6]);
    }

    fn trajectory_from_headings_changes(hc: &[f64]) -> Trajectory {
        let mut heading = 0.0;
        let headings: Vec<f64> = hc
            .iter()
            .map(|c| {
                heading = (heading + c) % 360.0;
                heading
            })
            .collect();
        let t = trajectory_from_headings(&headings);
        for (got, want) in t.heading_changes().iter().zip(hc) {
            assert!((got - want).abs() < 1e-9);
        }
        t
    }

    #[test]
    fn run_merges_and_counts() {
        let t = trajectory_from_speeds(&[10., 12., 14., 16., 18., 20., 18., 16., 14., 12., 10., 8., 6.]);
        let r = run_autoann(&t, &cfg()).unwrap();
        assert_eq!(r.layer.author(), AUTOANN_AUTHOR);
        assert_eq!(r.total_marks(), 1);
        assert_eq!(r.type_histogram[&SegmentType::SpeedUp], 1);
        assert_eq!(r.total_typed(), 1);

        let cruise = trajectory_from_speeds(&[40.0; 60]);
        assert!(run_autoann(&cruise, &cfg()).unwrap().layer.is_empty());

        let bad = AutoAnnConfig { k: 0, ..cfg() };
        assert!(run_autoann(&cruise, &bad).is_err());
    }

    #[test]
    fn config_from_flat() {
        let flat = FlatConfig::parse("k = 3\nloop_enabled = true\nmin_speed_change = 5").unwrap();
        let c = AutoAnnConfig::from_flat(&flat).unwrap();
        assert_eq!(c.k, 3);
        assert!(c.loop_enabled);
        assert_eq!(c.turn_threshold, 15.0);
        let flat = FlatConfig::parse("turn_threshold = -1").unwrap();
        assert!(AutoAnnConfig::from_flat(&flat).is_err());
    }

    #[test]
    fn loops_disabled_by_default() {
        let t = trajectory_from_speeds(&[20.0; 40]);
        assert!(detect_loops(&t, &cfg()).is_empty());
    }
}
