//! Deterministic inputs shared by the benchmarks.

use trajlab_core::model::{AnnotationLayer, AnnotationType, SegmentType, Trajectory};
use trajlab_core::synth::from_series;

/// A drive of `n` points with periodic speed swings, stops and turns.
pub fn drive(n: usize) -> Trajectory {
    let speeds: Vec<f64> = (0..n)
        .map(|i| {
            let x = i as f64;
            if i % 97 < 8 {
                0.0
            } else {
                (30.0 + 15.0 * (x / 11.0).sin() + 4.0 * (x / 3.0).cos()).round().max(0.0)
            }
        })
        .collect();
    let headings: Vec<f64> = (0..n).map(|i| ((i / 40) as f64 * 35.0) % 360.0).collect();
    from_series("bench", &speeds, &headings)
}

/// Marks every `stride` steps starting at `offset`.
pub fn layer(t: &Trajectory, author: &str, stride: usize, offset: usize) -> AnnotationLayer {
    let mut l = AnnotationLayer::new(&t.trip_id, author);
    for step in (1 + offset..=t.len()).step_by(stride) {
        l.apply(step as u32, AnnotationType::Segment, [SegmentType::SlowDown])
            .expect("step within trajectory");
    }
    l
}
