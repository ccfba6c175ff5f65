//! DACT CSV reading, writing and data-quality validation.
//!
//! A DACT file holds one row per trajectory point with the columns
//!
//! ```text
//! TripID,TimeStep,TimeStamp,Speed,Acceleration,Heading,HeadingChange,Latitude,Longitude,Annotation,SegmentType
//! ```
//!
//! Rows of several trips may share a file; they are grouped by `TripID` in
//! order of first appearance. `Annotation` is `Segment`, `Maybe-Segment` or
//! empty (`NULL` is read as empty). `SegmentType` lists one or more display
//! names separated by `;`. Timestamps are local wall-clock times
//! (`YYYY-MM-DD hh:mm:ss`) in a configurable zone, US Eastern by default.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{Read, Write};

use chrono::{DateTime, LocalResult, NaiveDateTime, TimeZone, Timelike, Utc};
use chrono_tz::Tz;
use serde::Serialize;
use thiserror::Error;

use crate::model::{
    AnnotationLayer, AnnotationMark, AnnotationType, ModelError, SegmentType, SegmentTypes,
    Trajectory, TrajectoryPoint,
};

pub const DACT_HEADER: [&str; 11] = [
    "TripID",
    "TimeStep",
    "TimeStamp",
    "Speed",
    "Acceleration",
    "Heading",
    "HeadingChange",
    "Latitude",
    "Longitude",
    "Annotation",
    "SegmentType",
];

const TIMESTAMP_FORMAT: &str = "%Y-%m-%d %H:%M:%S";

#[derive(Debug, Error)]
pub enum DactError {
    #[error("malformed header: {0}")]
    Header(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("timestamp at step {0} has sub-second precision")]
    SubsecondTimestamp(u32),
}

#[derive(Debug, Clone)]
pub struct DactOptions {
    /// Zone of the wall-clock timestamps in the file.
    pub timezone: Tz,
    /// Author assigned to the annotation layers read from a file.
    pub author: String,
    pub segment_type_delimiter: char,
}

impl Default for DactOptions {
    fn default() -> Self {
        Self {
            timezone: chrono_tz::America::New_York,
            author: "dact".to_string(),
            segment_type_delimiter: ';',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Fatal,
    Advisory,
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Severity::Fatal => "fatal",
            Severity::Advisory => "advisory",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Accept,
    Reject,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Accept => "accept",
            Verdict::Reject => "reject",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    ColumnCount,
    EmptyTripId,
    NonNumeric,
    BadTimestamp,
    UnknownAnnotation,
    UnknownSegmentType,
    AnnotationMismatch,
    DuplicateStep,
    StepStart,
    StepOrder,
    MissingPoint,
    SamplingInterval,
    SpeedRange,
    AccelerationRange,
    HeadingRange,
    HeadingChangeRange,
    LatitudeRange,
    LongitudeRange,
    FirstHeadingChange,
    EmptyTrajectory,
    ConstantPosition,
}

impl Rule {
    pub fn severity(self) -> Severity {
        match self {
            Rule::FirstHeadingChange | Rule::EmptyTrajectory | Rule::ConstantPosition => {
                Severity::Advisory
            }
            _ => Severity::Fatal,
        }
    }

    pub fn id(self) -> &'static str {
        match self {
            Rule::ColumnCount => "column-count",
            Rule::EmptyTripId => "empty-trip-id",
            Rule::NonNumeric => "non-numeric",
            Rule::BadTimestamp => "bad-timestamp",
            Rule::UnknownAnnotation => "unknown-annotation",
            Rule::UnknownSegmentType => "unknown-segment-type",
            Rule::AnnotationMismatch => "annotation-mismatch",
            Rule::DuplicateStep => "duplicate-step",
            Rule::StepStart => "step-start",
            Rule::StepOrder => "step-order",
            Rule::MissingPoint => "missing-point",
            Rule::SamplingInterval => "sampling-interval",
            Rule::SpeedRange => "speed-range",
            Rule::AccelerationRange => "acceleration-range",
            Rule::HeadingRange => "heading-range",
            Rule::HeadingChangeRange => "heading-change-range",
            Rule::LatitudeRange => "latitude-range",
            Rule::LongitudeRange => "longitude-range",
            Rule::FirstHeadingChange => "first-heading-change",
            Rule::EmptyTrajectory => "empty-trajectory",
            Rule::ConstantPosition => "constant-position",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

/// Where an issue was found.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "at")]
pub enum Location {
    /// 1-based line of the input file (the header is line 1).
    Line(u64),
    /// 1-based position within the trip's point sequence.
    Point(usize),
    Trip,
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Line(l) => write!(f, "line {l}"),
            Location::Point(p) => write!(f, "point {p}"),
            Location::Trip => f.write_str("trip"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Issue {
    pub location: Location,
    pub rule: Rule,
    pub severity: Severity,
    pub message: String,
}

impl Issue {
    fn new(location: Location, rule: Rule, message: impl Into<String>) -> Self {
        Self {
            location,
            rule,
            severity: rule.severity(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} [{}] {}", self.location, self.rule, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub trip_id: String,
    pub issues: Vec<Issue>,
    pub verdict: Verdict,
}

impl ValidationReport {
    pub fn new(trip_id: impl Into<String>, issues: Vec<Issue>) -> Self {
        let verdict = if issues.iter().any(|i| i.severity == Severity::Fatal) {
            Verdict::Reject
        } else {
            Verdict::Accept
        };
        Self {
            trip_id: trip_id.into(),
            issues,
            verdict,
        }
    }

    pub fn is_accepted(&self) -> bool {
        self.verdict == Verdict::Accept
    }

    pub fn fatal_count(&self) -> usize {
        self.issues.iter().filter(|i| i.severity == Severity::Fatal).count()
    }

    pub fn advisory_count(&self) -> usize {
        self.issues.len() - self.fatal_count()
    }
}

#[derive(Debug, Clone)]
pub struct ParsedTrip {
    pub trajectory: Trajectory,
    pub layer: AnnotationLayer,
    pub report: ValidationReport,
}

#[derive(Debug, Clone, Default)]
pub struct ParsedDact {
    pub trips: Vec<ParsedTrip>,
}

impl ParsedDact {
    pub fn trajectories(&self) -> impl Iterator<Item = &Trajectory> {
        self.trips.iter().map(|t| &t.trajectory)
    }

    pub fn layers(&self) -> impl Iterator<Item = &AnnotationLayer> {
        self.trips.iter().map(|t| &t.layer)
    }

    pub fn reports(&self) -> impl Iterator<Item = &ValidationReport> {
        self.trips.iter().map(|t| &t.report)
    }
}

struct TripBuilder {
    trip_id: String,
    points: Vec<TrajectoryPoint>,
    marks: Vec<AnnotationMark>,
    issues: Vec<Issue>,
    seen: HashSet<u32>,
}

fn is_null(cell: &str) -> bool {
    cell.is_empty() || cell.eq_ignore_ascii_case("null")
}

/// Reads a DACT stream. Row-level problems become issues in the owning
/// trip's report and the offending row is skipped; only an unusable header
/// fails the whole parse.
pub fn parse_dact<R: Read>(reader: R, opts: &DactOptions) -> Result<ParsedDact, DactError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    check_header(rdr.headers()?)?;

    let mut trips: Vec<TripBuilder> = Vec::new();
    let mut by_id: HashMap<String, usize> = HashMap::new();
    let mut orphan_issues: Vec<Issue> = Vec::new();

    for record in rdr.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let loc = Location::Line(line);
        let trip_id = record.get(0).unwrap_or("").trim().to_string();
        if trip_id.is_empty() {
            orphan_issues.push(Issue::new(loc, Rule::EmptyTripId, "row has no TripID"));
            continue;
        }
        let idx = *by_id.entry(trip_id.clone()).or_insert_with(|| {
            trips.push(TripBuilder {
                trip_id: trip_id.clone(),
                points: Vec::new(),
                marks: Vec::new(),
                issues: Vec::new(),
                seen: HashSet::new(),
            });
            trips.len() - 1
        });
        let trip = &mut trips[idx];

        if record.len() != DACT_HEADER.len() {
            trip.issues.push(Issue::new(
                loc,
                Rule::ColumnCount,
                format!("expected {} columns, found {}", DACT_HEADER.len(), record.len()),
            ));
            continue;
        }
        let cell = |i: usize| record.get(i).unwrap_or("").trim();

        match parse_row(&trip.trip_id, &cell, trip.points.last(), opts) {
            Err(issue) => trip.issues.push(Issue::new(loc, issue.0, issue.1)),
            Ok((point, mark)) => {
                if !trip.seen.insert(point.time_step) {
                    trip.issues.push(Issue::new(
                        loc,
                        Rule::DuplicateStep,
                        format!("duplicate time step {}", point.time_step),
                    ));
                    continue;
                }
                match mark {
                    Ok(Some((annotation_type, types))) => trip.marks.push(AnnotationMark {
                        trip_id: trip.trip_id.clone(),
                        time_step: point.time_step,
                        annotation_type,
                        segment_types: types,
                        author: opts.author.clone(),
                    }),
                    Ok(None) => {}
                    Err((rule, msg)) => trip.issues.push(Issue::new(loc, rule, msg)),
                }
                trip.points.push(point);
            }
        }
    }

    if !orphan_issues.is_empty() {
        // rows without a TripID still need to surface somewhere
        trips.push(TripBuilder {
            trip_id: String::new(),
            points: Vec::new(),
            marks: Vec::new(),
            issues: orphan_issues,
            seen: HashSet::new(),
        });
    }

    let trips = trips
        .into_iter()
        .map(|mut b| {
            let trajectory = Trajectory::new(b.trip_id.clone(), b.points);
            let mut issues = b.issues;
            issues.extend(validate_quality(&trajectory).issues);
            b.marks.sort_by_key(|m| m.time_step);
            let layer = AnnotationLayer::from_marks(b.trip_id.clone(), opts.author.clone(), b.marks)
                .expect("marks are unique per step and sorted");
            ParsedTrip {
                report: ValidationReport::new(b.trip_id, issues),
                trajectory,
                layer,
            }
        })
        .collect();
    Ok(ParsedDact { trips })
}

fn check_header(header: &csv::StringRecord) -> Result<(), DactError> {
    let names: Vec<&str> = header
        .iter()
        .enumerate()
        .map(|(i, h)| {
            let h = h.trim();
            if i == 0 {
                h.trim_start_matches('\u{feff}')
            } else {
                h
            }
        })
        .collect();
    if names.len() != DACT_HEADER.len() {
        return Err(DactError::Header(format!(
            "expected {} columns, found {}",
            DACT_HEADER.len(),
            names.len()
        )));
    }
    for (i, (found, expected)) in names.iter().zip(DACT_HEADER).enumerate() {
        if *found != expected {
            return Err(DactError::Header(format!(
                "column {} is {found:?}, expected {expected:?}",
                i + 1
            )));
        }
    }
    Ok(())
}

type RowIssue = (Rule, String);
type ParsedMark = Option<(AnnotationType, SegmentTypes)>;

fn parse_row<'a>(
    trip_id: &str,
    cell: &impl Fn(usize) -> &'a str,
    previous: Option<&TrajectoryPoint>,
    opts: &DactOptions,
) -> Result<(TrajectoryPoint, Result<ParsedMark, RowIssue>), RowIssue> {
    let number = |i: usize| -> Result<f64, RowIssue> {
        let raw = cell(i);
        raw.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| (Rule::NonNumeric, format!("{} is not a number: {raw:?}", DACT_HEADER[i])))
    };
    let time_step = cell(1)
        .parse::<u32>()
        .ok()
        .filter(|s| *s > 0)
        .ok_or_else(|| (Rule::NonNumeric, format!("TimeStep is not a positive integer: {:?}", cell(1))))?;
    let timestamp = parse_timestamp(cell(2), opts.timezone, previous.map(|p| p.timestamp))
        .map_err(|m| (Rule::BadTimestamp, m))?;
    let point = TrajectoryPoint {
        time_step,
        timestamp,
        speed: number(3)?,
        acceleration: number(4)?,
        heading: number(5)?,
        heading_change: number(6)?,
        latitude: number(7)?,
        longitude: number(8)?,
    };
    let mark = parse_mark(trip_id, time_step, cell(9), cell(10), opts.segment_type_delimiter);
    Ok((point, mark))
}

fn parse_mark(
    trip_id: &str,
    time_step: u32,
    annotation: &str,
    segment_types: &str,
    delimiter: char,
) -> Result<ParsedMark, RowIssue> {
    match (is_null(annotation), is_null(segment_types)) {
        (true, true) => return Ok(None),
        (true, false) => {
            return Err((
                Rule::AnnotationMismatch,
                format!("SegmentType {segment_types:?} without an Annotation"),
            ))
        }
        (false, true) => {
            return Err((
                Rule::AnnotationMismatch,
                format!("Annotation {annotation:?} without a SegmentType"),
            ))
        }
        (false, false) => {}
    }
    let annotation_type = match annotation.parse::<AnnotationType>() {
        Ok(AnnotationType::NonSegment) | Err(_) => {
            return Err((
                Rule::UnknownAnnotation,
                format!("unknown annotation {annotation:?} in trip {trip_id} step {time_step}"),
            ))
        }
        Ok(t) => t,
    };
    let types = segment_types
        .split(delimiter)
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<SegmentType>()
                .map_err(|_| (Rule::UnknownSegmentType, format!("unknown segment type {s:?}")))
        })
        .collect::<Result<SegmentTypes, _>>()?;
    if types.is_empty() {
        return Err((Rule::AnnotationMismatch, "SegmentType lists no types".to_string()));
    }
    Ok(Some((annotation_type, types)))
}

/// Parses a wall-clock timestamp in `tz`. During a fall-back hour the
/// earlier instant is chosen unless it would not follow `previous`, which
/// keeps continuous per-second trips monotone across the transition.
/// RFC 3339 strings with an explicit offset are accepted as well.
pub fn parse_timestamp(
    raw: &str,
    tz: Tz,
    previous: Option<DateTime<Utc>>,
) -> Result<DateTime<Utc>, String> {
    if let Ok(naive) = NaiveDateTime::parse_from_str(raw, TIMESTAMP_FORMAT) {
        return match tz.from_local_datetime(&naive) {
            LocalResult::Single(t) => Ok(t.with_timezone(&Utc)),
            LocalResult::Ambiguous(early, late) => {
                let early = early.with_timezone(&Utc);
                match previous {
                    Some(prev) if early <= prev => Ok(late.with_timezone(&Utc)),
                    _ => Ok(early),
                }
            }
            LocalResult::None => Err(format!("{raw:?} does not exist in {tz}")),
        };
    }
    DateTime::parse_from_rfc3339(raw)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|_| format!("unparseable timestamp {raw:?} (expected YYYY-MM-DD hh:mm:ss)"))
}

pub fn format_timestamp(ts: DateTime<Utc>, tz: Tz) -> String {
    ts.with_timezone(&tz).format(TIMESTAMP_FORMAT).to_string()
}

/// Streams one or more trips as DACT CSV. The header is written on
/// construction.
pub struct DactWriter<W: Write> {
    inner: csv::Writer<W>,
    opts: DactOptions,
}

impl<W: Write> DactWriter<W> {
    pub fn new(writer: W, opts: DactOptions) -> Result<Self, DactError> {
        let mut inner = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        inner.write_record(DACT_HEADER)?;
        Ok(Self { inner, opts })
    }

    pub fn write_trip(
        &mut self,
        trajectory: &Trajectory,
        layer: &AnnotationLayer,
    ) -> Result<(), DactError> {
        layer.validate_against(trajectory)?;
        let delimiter = self.opts.segment_type_delimiter.to_string();
        for p in &trajectory.points {
            if p.timestamp.nanosecond() != 0 {
                return Err(DactError::SubsecondTimestamp(p.time_step));
            }
            let mark = layer.get(p.time_step);
            let (annotation, types) = match mark {
                Some(m) => (
                    m.annotation_type.as_str().to_string(),
                    m.segment_types
                        .iter()
                        .map(|t| t.as_str())
                        .collect::<Vec<_>>()
                        .join(&delimiter),
                ),
                None => (String::new(), String::new()),
            };
            self.inner.write_record([
                trajectory.trip_id.clone(),
                p.time_step.to_string(),
                format_timestamp(p.timestamp, self.opts.timezone),
                p.speed.to_string(),
                p.acceleration.to_string(),
                p.heading.to_string(),
                p.heading_change.to_string(),
                p.latitude.to_string(),
                p.longitude.to_string(),
                annotation,
                types,
            ])?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<W, DactError> {
        self.inner.flush()?;
        self.inner
            .into_inner()
            .map_err(|e| DactError::Io(std::io::Error::other(e.to_string())))
    }
}

/// Writes a single trip with its layer as a complete DACT document.
pub fn write_dact<W: Write>(
    writer: W,
    trajectory: &Trajectory,
    layer: &AnnotationLayer,
    opts: &DactOptions,
) -> Result<W, DactError> {
    let mut w = DactWriter::new(writer, opts.clone())?;
    w.write_trip(trajectory, layer)?;
    w.finish()
}

/// Data-quality report for one trajectory. Gaps, non-1 s sampling and
/// out-of-range values are fatal; empty or stationary trips are advisory.
pub fn validate_quality(trajectory: &Trajectory) -> ValidationReport {
    let mut issues = Vec::new();
    let pts = &trajectory.points;
    if pts.is_empty() {
        issues.push(Issue::new(Location::Trip, Rule::EmptyTrajectory, "trajectory has no points"));
        return ValidationReport::new(trajectory.trip_id.clone(), issues);
    }

    if pts[0].time_step != 1 {
        issues.push(Issue::new(
            Location::Point(1),
            Rule::StepStart,
            format!("first time step is {}, expected 1", pts[0].time_step),
        ));
    }
    for (i, w) in pts.windows(2).enumerate() {
        let (prev, next) = (&w[0], &w[1]);
        let loc = Location::Point(i + 2);
        if next.time_step <= prev.time_step {
            issues.push(Issue::new(
                loc,
                Rule::StepOrder,
                format!("time step {} follows {}", next.time_step, prev.time_step),
            ));
        } else if next.time_step > prev.time_step + 1 {
            let (first, last) = (prev.time_step + 1, next.time_step - 1);
            let msg = if first == last {
                format!("missing point at step {first}")
            } else {
                format!("missing points at steps {first}-{last}")
            };
            issues.push(Issue::new(loc, Rule::MissingPoint, msg));
        }
        let delta = next.timestamp - prev.timestamp;
        if delta != chrono::TimeDelta::seconds(1) {
            let secs = delta.num_milliseconds() as f64 / 1000.0;
            issues.push(Issue::new(
                loc,
                Rule::SamplingInterval,
                format!(
                    "timestamp delta of {secs} s between steps {} and {}",
                    prev.time_step, next.time_step
                ),
            ));
        }
    }

    for (i, p) in pts.iter().enumerate() {
        let loc = Location::Point(i + 1);
        let mut check = |ok: bool, rule: Rule, what: &str, value: f64| {
            if !ok {
                issues.push(Issue::new(loc, rule, format!("{what} {value} out of range")));
            }
        };
        check(p.speed.is_finite() && p.speed >= 0.0, Rule::SpeedRange, "speed", p.speed);
        check(p.acceleration.is_finite(), Rule::AccelerationRange, "acceleration", p.acceleration);
        check(
            p.heading.is_finite() && (0.0..360.0).contains(&p.heading),
            Rule::HeadingRange,
            "heading",
            p.heading,
        );
        check(
            p.heading_change.is_finite() && (0.0..360.0).contains(&p.heading_change),
            Rule::HeadingChangeRange,
            "heading change",
            p.heading_change,
        );
        check(
            (-90.0..=90.0).contains(&p.latitude),
            Rule::LatitudeRange,
            "latitude",
            p.latitude,
        );
        check(
            (-180.0..=180.0).contains(&p.longitude),
            Rule::LongitudeRange,
            "longitude",
            p.longitude,
        );
    }

    if pts[0].heading_change != 0.0 {
        issues.push(Issue::new(
            Location::Point(1),
            Rule::FirstHeadingChange,
            format!("first heading change is {}, expected 0", pts[0].heading_change),
        ));
    }
    if pts.len() > 1
        && pts
            .iter()
            .all(|p| p.latitude == pts[0].latitude && p.longitude == pts[0].longitude)
    {
        issues.push(Issue::new(
            Location::Trip,
            Rule::ConstantPosition,
            "every point has the same position",
        ));
    }
    ValidationReport::new(trajectory.trip_id.clone(), issues)
}
