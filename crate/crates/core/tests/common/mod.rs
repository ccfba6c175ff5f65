//! Generators and brute-force reference implementations shared by the
//! integration tests and the acceptance runner.
//!
//! The reference functions evaluate each rule literally at every index
//! with no windowing tricks, so they stay independent of the library's
//! scanning code. Returned indexes are 1-based time steps.

#![allow(dead_code)]

use rand::Rng;
use trajlab_core::autoann::AutoAnnConfig;
use trajlab_core::geo::{haversine, EARTH_RADIUS_METERS};
use trajlab_core::heading::HEADING_ZERO_TOLERANCE;
use trajlab_core::model::{AnnotationLayer, AnnotationType, SegmentType, Trajectory};
use trajlab_core::synth::{from_series, MPH_TO_MPS};

/// Integer-valued speed random walk with stops, and a heading series that
/// is mostly straight with jitter and occasional sharp turns.
pub fn random_trajectory<R: Rng>(rng: &mut R, trip_id: &str, n: usize) -> Trajectory {
    let mut speeds = Vec::with_capacity(n);
    let mut headings = Vec::with_capacity(n);
    let mut s: f64 = rng.random_range(0..40) as f64;
    let mut h: f64 = rng.random_range(0.0..360.0);
    for _ in 0..n {
        if rng.random_bool(0.03) {
            s = 0.0;
        } else {
            s = (s + rng.random_range(-3..=3) as f64).clamp(0.0, 70.0);
        }
        let r: f64 = rng.random();
        let dh = if r < 0.75 {
            0.0
        } else if r < 0.9 {
            rng.random_range(-0.5..0.5)
        } else {
            rng.random_range(-90.0..90.0)
        };
        h = (h + dh).rem_euclid(360.0);
        if h >= 360.0 {
            h = 0.0;
        }
        speeds.push(s);
        headings.push(h);
    }
    from_series(trip_id, &speeds, &headings)
}

/// Random Segment / Maybe-Segment marks on roughly `density` of the points.
pub fn random_layer<R: Rng>(
    rng: &mut R,
    trajectory: &Trajectory,
    author: &str,
    density: f64,
) -> AnnotationLayer {
    let mut layer = AnnotationLayer::new(trajectory.trip_id.clone(), author);
    for p in &trajectory.points {
        if rng.random_bool(density) {
            let kind = if rng.random_bool(0.8) {
                AnnotationType::Segment
            } else {
                AnnotationType::MaybeSegment
            };
            let count = rng.random_range(1..=3);
            let types: Vec<SegmentType> = (0..count)
                .map(|_| SegmentType::ALL[rng.random_range(0..SegmentType::ALL.len())])
                .collect();
            layer.apply(p.time_step, kind, types).unwrap();
        }
    }
    layer
}

/// Circle of `radius` meters driven at constant `mph`, continued for
/// `extra` points past one full lap.
pub fn circle_trajectory(radius: f64, mph: f64, extra: usize) -> Trajectory {
    let step_m = mph * MPH_TO_MPS;
    let deg_per_s = step_m / (2.0 * std::f64::consts::PI * radius) * 360.0;
    let lap = (360.0 / deg_per_s).ceil() as usize;
    let n = lap + extra;
    let headings: Vec<f64> = (0..n).map(|i| (i as f64 * deg_per_s).rem_euclid(360.0)).collect();
    from_series("circle", &vec![mph; n], &headings)
}

fn step(i: usize) -> u32 {
    i as u32 + 1
}

/// Speed-up ends: interior index (k+1..=n-k, 1-based) whose speed is at
/// least every predecessor in the window and above every successor.
pub fn ref_speedup(speeds: &[f64], k: usize) -> Vec<u32> {
    let n = speeds.len();
    let mut out = Vec::new();
    for i in 0..n {
        if i < k || i + k >= n {
            continue;
        }
        let mut ok = true;
        for j in i - k..=i + k {
            if j < i && speeds[i] < speeds[j] {
                ok = false;
            }
            if j > i && speeds[i] <= speeds[j] {
                ok = false;
            }
        }
        if ok {
            out.push(step(i));
        }
    }
    out
}

pub fn ref_slowdown(speeds: &[f64], k: usize) -> Vec<u32> {
    let negated: Vec<f64> = speeds.iter().map(|s| -s).collect();
    ref_speedup(&negated, k)
}

pub fn ref_traffic_light(speeds: &[f64], k: usize, low: f64) -> Vec<u32> {
    let n = speeds.len();
    let mut out = Vec::new();
    for i in 0..n {
        if i < k || i + 1 >= n {
            continue;
        }
        let standing = (i - k..=i).all(|j| speeds[j] < low);
        if standing && speeds[i + 1] > low {
            out.push(step(i));
        }
    }
    out
}

pub fn ref_turn(heading_changes: &[f64], k: usize, threshold: f64) -> Vec<u32> {
    let n = heading_changes.len();
    let mut out = Vec::new();
    for i in 0..n {
        if i < k || i + k >= n {
            continue;
        }
        let quiet = (i - k..=i + k)
            .filter(|&j| j != i)
            .all(|j| heading_changes[j].abs() <= HEADING_ZERO_TOLERANCE);
        if quiet && heading_changes[i] > threshold {
            out.push(step(i));
        }
    }
    out
}

/// Every (j, i) pair satisfying the loop rule, 0-based, with its distance.
pub fn ref_loop_pairs(trajectory: &Trajectory, cfg: &AutoAnnConfig) -> Vec<(usize, usize, f64)> {
    let pts = &trajectory.points;
    let mut pairs = Vec::new();
    for j in 0..pts.len() {
        let mut min_speed = f64::INFINITY;
        for i in j..pts.len() {
            min_speed = min_speed.min(pts[i].speed);
            if i - j <= 2 * cfg.k || min_speed <= cfg.loop_min_speed {
                continue;
            }
            let d = haversine(pts[j].position(), pts[i].position(), EARTH_RADIUS_METERS).unwrap();
            if d < cfg.loop_radius {
                pairs.push((j, i, d));
            }
        }
    }
    pairs
}

/// Loop selection over the full pair set: earliest end first, closest
/// begin (earliest on ties), no overlap with the previous loop.
pub fn ref_loops(trajectory: &Trajectory, cfg: &AutoAnnConfig) -> Vec<(u32, u32)> {
    if !cfg.loop_enabled {
        return Vec::new();
    }
    let pairs = ref_loop_pairs(trajectory, cfg);
    let mut out = Vec::new();
    let mut floor = 0usize;
    for i in 0..trajectory.len() {
        let best = pairs
            .iter()
            .filter(|(j, e, _)| *e == i && *j >= floor)
            .min_by(|x, y| x.2.total_cmp(&y.2).then(x.0.cmp(&y.0)));
        if let Some(&(j, _, _)) = best {
            out.push((step(j), step(i)));
            floor = i + 1;
        }
    }
    out
}

/// Size of a maximum bipartite matching between two point sets under the
/// strict distance threshold (augmenting paths).
pub fn max_matching(pa: &[(f64, f64)], pb: &[(f64, f64)], tau: f64) -> usize {
    use trajlab_core::geo::LatLng;
    let adj: Vec<Vec<usize>> = pa
        .iter()
        .map(|&(la, lo)| {
            pb.iter()
                .enumerate()
                .filter(|(_, &(lb, lob))| {
                    haversine(LatLng::new(la, lo), LatLng::new(lb, lob), EARTH_RADIUS_METERS).unwrap() < tau
                })
                .map(|(j, _)| j)
                .collect()
        })
        .collect();
    fn augment(u: usize, adj: &[Vec<usize>], seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
        for &v in &adj[u] {
            if seen[v] {
                continue;
            }
            seen[v] = true;
            if owner[v].is_none() || augment(owner[v].unwrap(), adj, seen, owner) {
                owner[v] = Some(u);
                return true;
            }
        }
        false
    }
    let mut owner = vec![None; pb.len()];
    (0..pa.len())
        .filter(|&u| augment(u, &adj, &mut vec![false; pb.len()], &mut owner))
        .count()
}

/// Kappa straight from the probability definitions, for cross-checking.
pub fn ref_kappa(a: f64, b: f64, c: f64, d: f64) -> f64 {
    let n = a + b + c + d;
    let p_o = (a + d) / n;
    let yes_a = (a + b) / n;
    let yes_b = (a + c) / n;
    let p_e = yes_a * yes_b + (1.0 - yes_a) * (1.0 - yes_b);
    (p_o - p_e) / (1.0 - p_e)
}
