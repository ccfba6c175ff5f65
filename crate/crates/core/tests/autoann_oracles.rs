mod common;

use std::collections::{BTreeMap, BTreeSet};

use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trajlab_core::autoann::*;
use trajlab_core::model::{AnnotationType, SegmentType};
use trajlab_core::synth::{from_series, trajectory_from_headings, trajectory_from_speeds};

fn config_for(k: usize) -> AutoAnnConfig {
    AutoAnnConfig {
        k,
        loop_enabled: true,
        ..AutoAnnConfig::default()
    }
}

#[test]
fn heuristics_match_brute_force_on_random_trajectories() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..200 {
        let n = rng.random_range(0..=500);
        let t = random_trajectory(&mut rng, "r", n);
        let cfg = config_for(rng.random_range(1..=6));
        let speeds = t.speeds();
        let hc = t.heading_changes();
        assert_eq!(detect_speedup_ends(&t, &cfg), ref_speedup(&speeds, cfg.k), "case {case}");
        assert_eq!(detect_slowdown_ends(&t, &cfg), ref_slowdown(&speeds, cfg.k), "case {case}");
        assert_eq!(
            detect_traffic_light_ends(&t, &cfg),
            ref_traffic_light(&speeds, cfg.k, cfg.low_speed_threshold),
            "case {case}"
        );
        assert_eq!(
            detect_turn_ends(&t, &cfg),
            ref_turn(&hc, cfg.k, cfg.turn_threshold),
            "case {case}"
        );
        let loops: Vec<(u32, u32)> = detect_loops(&t, &cfg).iter().map(|l| (l.begin, l.end)).collect();
        assert_eq!(loops, ref_loops(&t, &cfg), "case {case}");
    }
}

#[test]
fn loops_match_brute_force_on_circles() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..30 {
        let radius = rng.random_range(20.0..150.0);
        let mph = rng.random_range(8.0..30.0);
        let t = circle_trajectory(radius, mph, rng.random_range(0..200));
        let cfg = config_for(rng.random_range(1..=6));
        let loops: Vec<(u32, u32)> = detect_loops(&t, &cfg).iter().map(|l| (l.begin, l.end)).collect();
        assert_eq!(loops, ref_loops(&t, &cfg));
    }
}

#[test]
fn circle_yields_one_spanning_loop() {
    let t = circle_trajectory(100.0, 20.0, 0);
    let cfg = config_for(5);
    let loops = detect_loops(&t, &cfg);
    assert_eq!(loops.len(), 1);
    let l = loops[0];
    use trajlab_core::geo::{haversine, EARTH_RADIUS_METERS};
    let dist = |a: u32, b: u32| {
        haversine(t.point(a).unwrap().position(), t.point(b).unwrap().position(), EARTH_RADIUS_METERS)
            .unwrap()
    };
    // the fixture itself comes back within 10 m of its start
    let closest = (2..=t.len() as u32).skip(t.len() / 2).map(|s| dist(1, s)).fold(f64::INFINITY, f64::min);
    assert!(closest < 10.0, "closest return {closest}");
    // the detected pair spans nearly the whole lap
    assert!(dist(l.begin, l.end) < cfg.loop_radius);
    assert!((l.end - l.begin) as usize > t.len() * 9 / 10);
    // a stationary car never loops
    let still = from_series("still", &[0.0; 60], &[0.0; 60]);
    assert!(detect_loops(&still, &cfg).is_empty());
}

#[test]
fn planted_patterns_are_recovered_exactly() {
    let cfg = AutoAnnConfig::default();
    let peak = [10.0, 12.0, 14.0, 16.0, 18.0, 20.0, 18.0, 16.0, 14.0, 12.0, 10.0, 8.0, 6.0];
    assert_eq!(detect_speedup_ends(&trajectory_from_speeds(&peak), &cfg), vec![6]);
    let trough = [20.0, 18.0, 16.0, 14.0, 12.0, 10.0, 12.0, 14.0, 16.0, 18.0, 20.0, 22.0, 24.0];
    assert_eq!(detect_slowdown_ends(&trajectory_from_speeds(&trough), &cfg), vec![6]);
    let stop = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 15.0];
    assert_eq!(detect_traffic_light_ends(&trajectory_from_speeds(&stop), &cfg), vec![6]);
    let mut headings = vec![90.0; 11];
    for h in &mut headings[5..] {
        *h = 110.0;
    }
    assert_eq!(detect_turn_ends(&trajectory_from_headings(&headings), &cfg), vec![6]);
}

#[test]
fn concatenated_patterns_give_union_of_marks() {
    // cruise padding keeps every window independent
    let pad = vec![30.0; 12];
    let mut speeds = pad.clone();
    let peak_at = speeds.len() + 6;
    speeds.extend([24.0, 25.0, 26.0, 27.0, 28.0, 40.0, 28.0, 27.0, 26.0, 25.0, 24.0]);
    speeds.extend(pad.iter());
    let stop_at = speeds.len() + 6;
    speeds.extend([0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    speeds.extend(pad.iter());
    let turn_at = speeds.len() + 1;
    speeds.extend(pad.iter());
    let mut headings = vec![0.0; speeds.len()];
    for h in &mut headings[turn_at - 1..] {
        *h = 45.0;
    }
    let t = from_series("concat", &speeds, &headings);
    let cfg = AutoAnnConfig::default();

    let expected: BTreeSet<u32> = [peak_at as u32, stop_at as u32, turn_at as u32].into();
    let res = run_autoann(&t, &cfg).unwrap();
    let got: BTreeSet<u32> = res.layer.marks().iter().map(|m| m.time_step).collect();

    // the stop's end is also a speed minimum; both fire there
    let mut want = expected.clone();
    want.extend(ref_slowdown(&t.speeds(), cfg.k));
    want.extend(ref_speedup(&t.speeds(), cfg.k));
    assert_eq!(got, want);
    assert!(got.is_superset(&expected));
    let at = |s: u32| res.layer.get(s).unwrap().segment_types.clone();
    assert!(at(peak_at as u32).contains(&SegmentType::SpeedUp));
    assert!(at(stop_at as u32).contains(&SegmentType::TrafficLight));
    assert_eq!(at(turn_at as u32), BTreeSet::from([SegmentType::Turn]));
}

#[test]
fn run_autoann_invariants_on_random_trajectories() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let n = rng.random_range(0..=300);
        let t = random_trajectory(&mut rng, "r", n);
        let cfg = config_for(rng.random_range(1..=6));
        let up: BTreeSet<u32> = detect_speedup_ends(&t, &cfg).into_iter().collect();
        let down: BTreeSet<u32> = detect_slowdown_ends(&t, &cfg).into_iter().collect();
        assert!(up.is_disjoint(&down));
        for &s in up.iter().chain(&down) {
            assert!(s as usize > cfg.k && s as usize <= n - cfg.k);
        }

        let a = run_autoann(&t, &cfg).unwrap();
        let b = run_autoann(&t, &cfg).unwrap();
        assert_eq!(a, b);
        let mut hist: BTreeMap<SegmentType, usize> = BTreeMap::new();
        for m in a.layer.marks() {
            assert_eq!(m.annotation_type, AnnotationType::Segment);
            assert!(!(m.segment_types.contains(&SegmentType::SlowDown)
                && m.segment_types.contains(&SegmentType::TrafficJam)));
            for t in &m.segment_types {
                *hist.entry(*t).or_default() += 1;
            }
        }
        assert_eq!(hist, a.type_histogram);
        assert_eq!(a.total_typed(), a.layer.marks().iter().map(|m| m.segment_types.len()).sum::<usize>());
        a.layer.validate_against(&t).unwrap();
    }
}
