//! Inter-annotator agreement.
//!
//! Two layers on the same trajectory are compared by position: marks closer
//! than `tau` meters (haversine) are matched one-to-one, greedily by
//! ascending distance. The matching yields the 2×2 contingency counts
//!
//! ```text
//!              B: yes   B: no
//!   A: yes       a        b
//!   A: no        c        d      d = |T| − (a + b + c)
//! ```
//!
//! from which Cohen's kappa and the overlap `a / (a + b + c)` follow.

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::geo::{haversine, GeoError, LatLng, EARTH_RADIUS_METERS};
use crate::model::{AnnotationLayer, ModelError, Phase, Trajectory};

pub const DEFAULT_TAU_SWEEP: [f64; 5] = [10.0, 25.0, 50.0, 100.0, 200.0];

#[derive(Debug, Error, PartialEq)]
pub enum AgreementError {
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{marks} unmatched and matched marks exceed the {points} points of trip {trip_id:?}")]
    MarksExceedPoints {
        trip_id: String,
        marks: u64,
        points: u64,
    },
    #[error("all contingency counts are zero")]
    EmptyCounts,
    #[error("degenerate marginals: expected agreement is 1 but observed agreement is {0}")]
    DegenerateMarginals(f64),
    #[error("no annotations to compare")]
    NoAnnotations,
    #[error("tau list is empty")]
    EmptyTauList,
    #[error("tau values must be ascending, found {0} after {1}")]
    UnsortedTau(f64, f64),
    #[error("tau must be a non-negative number, got {0}")]
    BadTau(f64),
    #[error("csv: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct ContingencyCounts {
    pub a: u64,
    pub b: u64,
    pub c: u64,
    pub d: u64,
}

impl ContingencyCounts {
    pub fn new(a: u64, b: u64, c: u64, d: u64) -> Self {
        Self { a, b, c, d }
    }

    pub fn total(&self) -> u64 {
        self.a + self.b + self.c + self.d
    }

    /// Counts with the roles of A and B exchanged.
    pub fn transposed(&self) -> Self {
        Self {
            b: self.c,
            c: self.b,
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AgreementConfig {
    /// Matching threshold in meters; pairs must be strictly closer.
    pub tau: f64,
    pub earth_radius: f64,
}

impl AgreementConfig {
    pub fn new(tau: f64) -> Self {
        Self {
            tau,
            earth_radius: EARTH_RADIUS_METERS,
        }
    }
}

fn positions(layer: &AnnotationLayer, trajectory: &Trajectory) -> Result<Vec<LatLng>, ModelError> {
    layer
        .marks()
        .iter()
        .map(|m| trajectory.require_point(m.time_step).map(|p| p.position()))
        .collect()
}

/// Greedy one-to-one matching of two layers. Ties in distance break by
/// A's mark order, then B's.
pub fn match_annotations(
    layer_a: &AnnotationLayer,
    layer_b: &AnnotationLayer,
    trajectory: &Trajectory,
    config: &AgreementConfig,
) -> Result<ContingencyCounts, AgreementError> {
    if config.tau.is_nan() || config.tau < 0.0 {
        return Err(AgreementError::BadTau(config.tau));
    }
    layer_a.validate_against(trajectory)?;
    layer_b.validate_against(trajectory)?;
    let pa = positions(layer_a, trajectory)?;
    let pb = positions(layer_b, trajectory)?;

    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, &p) in pa.iter().enumerate() {
        for (j, &q) in pb.iter().enumerate() {
            let d = haversine(p, q, config.earth_radius)?;
            if d < config.tau {
                pairs.push((d, i, j));
            }
        }
    }
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));

    let mut used_a = vec![false; pa.len()];
    let mut used_b = vec![false; pb.len()];
    let mut a = 0u64;
    for (_, i, j) in pairs {
        if !used_a[i] && !used_b[j] {
            used_a[i] = true;
            used_b[j] = true;
            a += 1;
        }
    }
    let b = pa.len() as u64 - a;
    let c = pb.len() as u64 - a;
    let n = trajectory.len() as u64;
    let d = n
        .checked_sub(a + b + c)
        .ok_or_else(|| AgreementError::MarksExceedPoints {
            trip_id: trajectory.trip_id.clone(),
            marks: a + b + c,
            points: n,
        })?;
    Ok(ContingencyCounts { a, b, c, d })
}

/// Cohen's kappa `(p_o − p_e) / (1 − p_e)`. Perfect observed agreement is
/// 1 even when `p_e` is also 1.
pub fn cohens_kappa(counts: &ContingencyCounts) -> Result<f64, AgreementError> {
    let ContingencyCounts { a, b, c, d } = *counts;
    let n = counts.total();
    if n == 0 {
        return Err(AgreementError::EmptyCounts);
    }
    if b == 0 && c == 0 {
        return Ok(1.0);
    }
    // exact check for p_e = 1 before going to floating point
    let (a, b, c, d, n) = (a as u128, b as u128, c as u128, d as u128, n as u128);
    let chance = (a + b) * (a + c) + (c + d) * (b + d);
    let nf = n as f64;
    let p_o = (a + d) as f64 / nf;
    if chance == n * n {
        return Err(AgreementError::DegenerateMarginals(p_o));
    }
    let p_e = chance as f64 / (nf * nf);
    Ok((p_o - p_e) / (1.0 - p_e))
}

/// Matched fraction of all placed marks, `a / (a + b + c)`.
pub fn overlap(counts: &ContingencyCounts) -> Result<f64, AgreementError> {
    let placed = counts.a + counts.b + counts.c;
    if placed == 0 {
        return Err(AgreementError::NoAnnotations);
    }
    Ok(counts.a as f64 / placed as f64)
}

/// One trajectory with every layer known for it.
#[derive(Debug, Clone)]
pub struct AnnotatedTrip {
    pub trajectory: Trajectory,
    pub expert_layers: Vec<AnnotationLayer>,
    /// Aggregator output for the strict and easy phases.
    pub finalized: BTreeMap<Phase, AnnotationLayer>,
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub trips: Vec<AnnotatedTrip>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairRecord {
    pub trip_id: String,
    pub author_a: String,
    pub author_b: String,
    pub counts: ContingencyCounts,
    /// `None` where kappa is undefined for the counts.
    pub kappa: Option<f64>,
    /// `None` when neither layer has marks.
    pub overlap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgreementReport {
    pub phase: Phase,
    pub tau: f64,
    pub pairs: Vec<PairRecord>,
    /// Unweighted mean over pairs where the value is defined.
    pub avg_kappa: Option<f64>,
    pub avg_overlap: Option<f64>,
    pub warnings: Vec<String>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Agreement for one phase at one threshold. Expert phase: every pair of
/// expert layers on a trip. Strict/easy: the phase's finalized layer against
/// each expert layer of the trip. Trips without the needed layers are
/// skipped with a warning.
pub fn phase_agreement(
    dataset: &Dataset,
    phase: Phase,
    config: &AgreementConfig,
) -> Result<AgreementReport, AgreementError> {
    if !config.tau.is_finite() || config.tau < 0.0 {
        return Err(AgreementError::BadTau(config.tau));
    }
    let mut trips: Vec<&AnnotatedTrip> = dataset.trips.iter().collect();
    trips.sort_by(|x, y| x.trajectory.trip_id.cmp(&y.trajectory.trip_id));

    let mut pairs = Vec::new();
    let mut warnings = Vec::new();
    for trip in trips {
        let trip_id = &trip.trajectory.trip_id;
        let mut experts: Vec<&AnnotationLayer> = trip.expert_layers.iter().collect();
        experts.sort_by(|x, y| x.author().cmp(y.author()));

        let mut todo: Vec<(&AnnotationLayer, &AnnotationLayer)> = Vec::new();
        match phase {
            Phase::Expert => {
                if experts.len() < 2 {
                    warnings.push(format!(
                        "trip {trip_id}: {} expert layer(s), need 2",
                        experts.len()
                    ));
                    continue;
                }
                for (i, x) in experts.iter().enumerate() {
                    for y in &experts[i + 1..] {
                        todo.push((x, y));
                    }
                }
            }
            Phase::Strict | Phase::Easy => {
                let Some(agg) = trip.finalized.get(&phase) else {
                    warnings.push(format!("trip {trip_id}: no {phase} aggregator layer"));
                    continue;
                };
                let others: Vec<_> = experts.iter().filter(|e| e.author() != agg.author()).collect();
                if others.is_empty() {
                    warnings.push(format!("trip {trip_id}: no expert layers"));
                    continue;
                }
                todo.extend(others.into_iter().map(|e| (agg, *e)));
            }
        }

        for (x, y) in todo {
            match match_annotations(x, y, &trip.trajectory, config) {
                Ok(counts) => pairs.push(PairRecord {
                    trip_id: trip_id.clone(),
                    author_a: x.author().to_string(),
                    author_b: y.author().to_string(),
                    kappa: cohens_kappa(&counts).ok(),
                    overlap: overlap(&counts).ok(),
                    counts,
                }),
                Err(e) => warnings.push(format!(
                    "trip {trip_id}: {} vs {} skipped: {e}",
                    x.author(),
                    y.author()
                )),
            }
        }
    }

    Ok(AgreementReport {
        phase,
        tau: config.tau,
        avg_kappa: mean(pairs.iter().filter_map(|p| p.kappa)),
        avg_overlap: mean(pairs.iter().filter_map(|p| p.overlap)),
        pairs,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub tau: f64,
    pub avg_kappa: Option<f64>,
    pub avg_overlap: Option<f64>,
}

/// One report per threshold, in the given (ascending) order.
pub fn tau_sweep(
    dataset: &Dataset,
    phase: Phase,
    taus: &[f64],
    earth_radius: f64,
) -> Result<Vec<AgreementReport>, AgreementError> {
    if taus.is_empty() {
        return Err(AgreementError::EmptyTauList);
    }
    for w in taus.windows(2) {
        if w[1].partial_cmp(&w[0]).is_none_or(|o| o.is_lt()) {
            return Err(AgreementError::UnsortedTau(w[1], w[0]));
        }
    }
    taus.iter()
        .map(|&tau| phase_agreement(dataset, phase, &AgreementConfig { tau, earth_radius }))
        .collect()
}

pub fn sweep_rows(reports: &[AgreementReport]) -> Vec<SweepRow> {
    reports
        .iter()
        .map(|r| SweepRow {
            tau: r.tau,
            avg_kappa: r.avg_kappa,
            avg_overlap: r.avg_overlap,
        })
        .collect()
}

/// One line of the agreement report. Summary lines use `*` for the trip
/// and authors, leave the counts empty and carry the averages.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub tau: f64,
    pub phase: Phase,
    pub trip_id: String,
    pub author_a: String,
    pub author_b: String,
    pub a: Option<u64>,
    pub b: Option<u64>,
    pub c: Option<u64>,
    pub d: Option<u64>,
    pub kappa: Option<f64>,
    pub overlap: Option<f64>,
}

/// Per-pair rows followed by one summary row per report.
pub fn report_rows(reports: &[AgreementReport]) -> Vec<ReportRow> {
    let mut rows = Vec::new();
    for r in reports {
        for p in &r.pairs {
            rows.push(ReportRow {
                tau: r.tau,
                phase: r.phase,
                trip_id: p.trip_id.clone(),
                author_a: p.author_a.clone(),
                author_b: p.author_b.clone(),
                a: Some(p.counts.a),
                b: Some(p.counts.b),
                c: Some(p.counts.c),
                d: Some(p.counts.d),
                kappa: p.kappa,
                overlap: p.overlap,
            });
        }
        rows.push(ReportRow {
            tau: r.tau,
            phase: r.phase,
            trip_id: "*".into(),
            author_a: "*".into(),
            author_b: "*".into(),
            a: None,
            b: None,
            c: None,
            d: None,
            kappa: r.avg_kappa,
            overlap: r.avg_overlap,
        });
    }
    rows
}

pub fn write_report_csv<W: Write>(
    writer: W,
    reports: &[AgreementReport],
) -> Result<(), AgreementError> {
    let csv_err = |e: csv::Error| AgreementError::Csv(e.to_string());
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    for row in report_rows(reports) {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| AgreementError::Csv(e.to_string()))?;
    Ok(())
}
