//! Trajectories, segmentations and annotation layers.
//!
//! Time steps are 1-based throughout: point `p` of a trajectory with `n`
//! points has `time_step` in `1..=n`, and `Trajectory::point(s)` looks up
//! `points[s - 1]`.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::heading::compute_heading_changes;
pub use crate::heading::HeadingDiffMode;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("heading {value} at index {index} is outside [0, 360)")]
    HeadingOutOfRange { index: usize, value: f64 },
    #[error("empty heading sequence")]
    EmptyHeadings,
    #[error("unknown annotation type {0:?}")]
    UnknownAnnotationType(String),
    #[error("unknown segment type {0:?}")]
    UnknownSegmentType(String),
    #[error("mark at step {0} has no segment types")]
    EmptySegmentTypes(u32),
    #[error("mark at step {time_step} belongs to trip {found:?}, layer is {expected:?}")]
    ForeignMark {
        time_step: u32,
        expected: String,
        found: String,
    },
    #[error("mark at step {0} has author that differs from its layer")]
    ForeignAuthor(u32),
    #[error("duplicate mark at step {0}")]
    DuplicateMark(u32),
    #[error("marks are not sorted by time step (step {0})")]
    UnsortedMarks(u32),
    #[error("Non-Segment is an edit command and cannot be stored (step {0})")]
    StoredNonSegment(u32),
    #[error("time step {time_step} does not exist in trip {trip_id:?} (n = {n})")]
    MissingPoint {
        trip_id: String,
        time_step: u32,
        n: usize,
    },
    #[error("layer is for trip {layer:?}, trajectory is {trajectory:?}")]
    TripMismatch { layer: String, trajectory: String },
}

/// One per-second record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub time_step: u32,
    pub timestamp: DateTime<Utc>,
    /// mph
    pub speed: f64,
    /// m/s²
    pub acceleration: f64,
    /// Compass bearing in degrees, 0 = north.
    pub heading: f64,
    pub heading_change: f64,
    pub latitude: f64,
    pub longitude: f64,
}

impl TrajectoryPoint {
    pub fn position(&self) -> crate::geo::LatLng {
        crate::geo::LatLng::new(self.latitude, self.longitude)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub trip_id: String,
    pub points: Vec<TrajectoryPoint>,
}

impl Trajectory {
    pub fn new(trip_id: impl Into<String>, points: Vec<TrajectoryPoint>) -> Self {
        Self {
            trip_id: trip_id.into(),
            points,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Point at a 1-based time step.
    pub fn point(&self, time_step: u32) -> Option<&TrajectoryPoint> {
        let direct = (time_step as usize)
            .checked_sub(1)
            .and_then(|i| self.points.get(i))
            .filter(|p| p.time_step == time_step);
        direct.or_else(|| {
            self.points
                .binary_search_by_key(&time_step, |p| p.time_step)
                .ok()
                .map(|i| &self.points[i])
        })
    }

    pub fn speeds(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.speed).collect()
    }

    pub fn headings(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.heading).collect()
    }

    pub fn heading_changes(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.heading_change).collect()
    }

    /// Recomputes every point's `heading_change` from its heading.
    pub fn recompute_heading_changes(&mut self, mode: HeadingDiffMode) -> Result<(), ModelError> {
        if self.points.is_empty() {
            return Ok(());
        }
        let changes = compute_heading_changes(&self.headings(), mode)?;
        for (p, hc) in self.points.iter_mut().zip(changes) {
            p.heading_change = hc;
        }
        Ok(())
    }

    pub fn require_point(&self, time_step: u32) -> Result<&TrajectoryPoint, ModelError> {
        self.point(time_step).ok_or_else(|| ModelError::MissingPoint {
            trip_id: self.trip_id.clone(),
            time_step,
            n: self.len(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AnnotationType {
    #[serde(rename = "Segment")]
    Segment,
    #[serde(rename = "Maybe-Segment")]
    MaybeSegment,
    #[serde(rename = "Non-Segment")]
    NonSegment,
}

impl AnnotationType {
    pub fn as_str(self) -> &'static str {
        match self {
            AnnotationType::Segment => "Segment",
            AnnotationType::MaybeSegment => "Maybe-Segment",
            AnnotationType::NonSegment => "Non-Segment",
        }
    }
}

impl fmt::Display for AnnotationType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AnnotationType {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match normalize_label(s).as_str() {
            "segment" => Ok(AnnotationType::Segment),
            "maybe-segment" => Ok(AnnotationType::MaybeSegment),
            "non-segment" => Ok(AnnotationType::NonSegment),
            _ => Err(ModelError::UnknownAnnotationType(s.to_string())),
        }
    }
}

/// Driving pattern labels. Declaration order is the canonical ordering used
/// when a mark carries several types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SegmentType {
    #[serde(rename = "Exit")]
    Exit,
    #[serde(rename = "Merge")]
    Merge,
    #[serde(rename = "Exit-Merge")]
    ExitMerge,
    #[serde(rename = "Loop")]
    Loop,
    #[serde(rename = "Turn")]
    Turn,
    #[serde(rename = "Smooth-Turn")]
    SmoothTurn,
    #[serde(rename = "Left-Turn")]
    LeftTurn,
    #[serde(rename = "Right-Turn")]
    RightTurn,
    #[serde(rename = "Jiggling")]
    Jiggling,
    #[serde(rename = "Speed-Up")]
    SpeedUp,
    #[serde(rename = "Slow-Down")]
    SlowDown,
    #[serde(rename = "Traffic-Light")]
    TrafficLight,
    #[serde(rename = "Traffic-Jam")]
    TrafficJam,
    #[serde(rename = "Other")]
    Other,
}

impl SegmentType {
    pub const ALL: [SegmentType; 14] = [
        SegmentType::Exit,
        SegmentType::Merge,
        SegmentType::ExitMerge,
        SegmentType::Loop,
        SegmentType::Turn,
        SegmentType::SmoothTurn,
        SegmentType::LeftTurn,
        SegmentType::RightTurn,
        SegmentType::Jiggling,
        SegmentType::SpeedUp,
        SegmentType::SlowDown,
        SegmentType::TrafficLight,
        SegmentType::TrafficJam,
        SegmentType::Other,
    ];

    /// Display name used in DACT files and JSON.
    pub fn as_str(self) -> &'static str {
        match self {
            SegmentType::Exit => "Exit",
            SegmentType::Merge => "Merge",
            SegmentType::ExitMerge => "Exit-Merge",
            SegmentType::Loop => "Loop",
            SegmentType::Turn => "Turn",
            SegmentType::SmoothTurn => "Smooth-Turn",
            SegmentType::LeftTurn => "Left-Turn",
            SegmentType::RightTurn => "Right-Turn",
            SegmentType::Jiggling => "Jiggling",
            SegmentType::SpeedUp => "Speed-Up",
            SegmentType::SlowDown => "Slow-Down",
            SegmentType::TrafficLight => "Traffic-Light",
            SegmentType::TrafficJam => "Traffic-Jam",
            SegmentType::Other => "Other",
        }
    }
}

impl fmt::Display for SegmentType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SegmentType {
    type Err = ModelError;

    /// Accepts the display names case-insensitively, with `_` or space in
    /// place of `-` ("SLOW_DOWN", "slow down").
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let wanted = normalize_label(s);
        SegmentType::ALL
            .iter()
            .copied()
            .find(|t| t.as_str().eq_ignore_ascii_case(&wanted))
            .ok_or_else(|| ModelError::UnknownSegmentType(s.to_string()))
    }
}

fn normalize_label(s: &str) -> String {
    s.trim()
        .chars()
        .map(|c| match c {
            '_' | ' ' => '-',
            c => c.to_ascii_lowercase(),
        })
        .collect()
}

pub type SegmentTypes = BTreeSet<SegmentType>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationMark {
    pub trip_id: String,
    pub time_step: u32,
    pub annotation_type: AnnotationType,
    pub segment_types: SegmentTypes,
    pub author: String,
}

impl AnnotationMark {
    pub fn new(
        trip_id: impl Into<String>,
        author: impl Into<String>,
        time_step: u32,
        annotation_type: AnnotationType,
        segment_types: impl IntoIterator<Item = SegmentType>,
    ) -> Result<Self, ModelError> {
        let segment_types: SegmentTypes = segment_types.into_iter().collect();
        if segment_types.is_empty() {
            return Err(ModelError::EmptySegmentTypes(time_step));
        }
        Ok(Self {
            trip_id: trip_id.into(),
            time_step,
            annotation_type,
            segment_types,
            author: author.into(),
        })
    }
}

/// All marks by one author on one trajectory, sorted by time step with at
/// most one mark per step. Never holds a Non-Segment mark.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "LayerDocument", into = "LayerDocument")]
pub struct AnnotationLayer {
    trip_id: String,
    author: String,
    marks: Vec<AnnotationMark>,
}

impl AnnotationLayer {
    pub fn new(trip_id: impl Into<String>, author: impl Into<String>) -> Self {
        Self {
            trip_id: trip_id.into(),
            author: author.into(),
            marks: Vec::new(),
        }
    }

    /// Builds a layer from marks that must already be sorted and unique.
    pub fn from_marks(
        trip_id: impl Into<String>,
        author: impl Into<String>,
        marks: Vec<AnnotationMark>,
    ) -> Result<Self, ModelError> {
        let layer = Self {
            trip_id: trip_id.into(),
            author: author.into(),
            marks,
        };
        layer.check()?;
        Ok(layer)
    }

    fn check(&self) -> Result<(), ModelError> {
        let mut prev: Option<u32> = None;
        for m in &self.marks {
            if m.trip_id != self.trip_id {
                return Err(ModelError::ForeignMark {
                    time_step: m.time_step,
                    expected: self.trip_id.clone(),
                    found: m.trip_id.clone(),
                });
            }
            if m.author != self.author {
                return Err(ModelError::ForeignAuthor(m.time_step));
            }
            if m.segment_types.is_empty() {
                return Err(ModelError::EmptySegmentTypes(m.time_step));
            }
            if m.annotation_type == AnnotationType::NonSegment {
                return Err(ModelError::StoredNonSegment(m.time_step));
            }
            match prev {
                Some(p) if p == m.time_step => return Err(ModelError::DuplicateMark(m.time_step)),
                Some(p) if p > m.time_step => return Err(ModelError::UnsortedMarks(m.time_step)),
                _ => {}
            }
            prev = Some(m.time_step);
        }
        Ok(())
    }

    pub fn trip_id(&self) -> &str {
        &self.trip_id
    }

    pub fn author(&self) -> &str {
        &self.author
    }

    pub fn marks(&self) -> &[AnnotationMark] {
        &self.marks
    }

    pub fn len(&self) -> usize {
        self.marks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.marks.is_empty()
    }

    pub fn get(&self, time_step: u32) -> Option<&AnnotationMark> {
        self.marks
            .binary_search_by_key(&time_step, |m| m.time_step)
            .ok()
            .map(|i| &self.marks[i])
    }

    /// Applies one edit. Segment and Maybe-Segment replace whatever this
    /// author had at the step; Non-Segment removes it.
    pub fn apply(
        &mut self,
        time_step: u32,
        annotation_type: AnnotationType,
        segment_types: impl IntoIterator<Item = SegmentType>,
    ) -> Result<(), ModelError> {
        let pos = self.marks.binary_search_by_key(&time_step, |m| m.time_step);
        if annotation_type == AnnotationType::NonSegment {
            if let Ok(i) = pos {
                self.marks.remove(i);
            }
            return Ok(());
        }
        let mark = AnnotationMark::new(
            self.trip_id.clone(),
            self.author.clone(),
            time_step,
            annotation_type,
            segment_types,
        )?;
        match pos {
            Ok(i) => self.marks[i] = mark,
            Err(i) => self.marks.insert(i, mark),
        }
        Ok(())
    }

    pub fn remove(&mut self, time_step: u32) -> Option<AnnotationMark> {
        self.marks
            .binary_search_by_key(&time_step, |m| m.time_step)
            .ok()
            .map(|i| self.marks.remove(i))
    }

    /// Same marks under a different author.
    pub fn reauthored(&self, author: &str) -> AnnotationLayer {
        AnnotationLayer {
            trip_id: self.trip_id.clone(),
            author: author.to_string(),
            marks: self
                .marks
                .iter()
                .map(|m| AnnotationMark {
                    author: author.to_string(),
                    ..m.clone()
                })
                .collect(),
        }
    }

    /// Checks that the layer belongs to `trajectory` and every mark points
    /// at an existing time step.
    pub fn validate_against(&self, trajectory: &Trajectory) -> Result<(), ModelError> {
        if self.trip_id != trajectory.trip_id {
            return Err(ModelError::TripMismatch {
                layer: self.trip_id.clone(),
                trajectory: trajectory.trip_id.clone(),
            });
        }
        for m in &self.marks {
            trajectory.require_point(m.time_step)?;
        }
        Ok(())
    }
}

/// Sidecar JSON shape of a layer: one document per (trip, author).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerDocument {
    pub trip_id: String,
    pub author: String,
    pub marks: Vec<MarkDocument>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MarkDocument {
    pub time_step: u32,
    pub annotation_type: AnnotationType,
    pub segment_types: Vec<SegmentType>,
}

impl From<AnnotationLayer> for LayerDocument {
    fn from(layer: AnnotationLayer) -> Self {
        LayerDocument {
            trip_id: layer.trip_id,
            author: layer.author,
            marks: layer
                .marks
                .into_iter()
                .map(|m| MarkDocument {
                    time_step: m.time_step,
                    annotation_type: m.annotation_type,
                    segment_types: m.segment_types.into_iter().collect(),
                })
                .collect(),
        }
    }
}

impl TryFrom<LayerDocument> for AnnotationLayer {
    type Error = ModelError;

    fn try_from(doc: LayerDocument) -> Result<Self, Self::Error> {
        let marks = doc
            .marks
            .into_iter()
            .map(|m| {
                AnnotationMark::new(
                    doc.trip_id.clone(),
                    doc.author.clone(),
                    m.time_step,
                    m.annotation_type,
                    m.segment_types,
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        AnnotationLayer::from_marks(doc.trip_id, doc.author, marks)
    }
}

/// Annotation phases that produce layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Expert,
    Strict,
    Easy,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Expert => "expert",
            Phase::Strict => "strict",
            Phase::Easy => "easy",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Phase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "expert" => Ok(Phase::Expert),
            "strict" => Ok(Phase::Strict),
            "easy" => Ok(Phase::Easy),
            other => Err(format!("unknown phase {other:?} (expected expert, strict or easy)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SegmentationViolation {
    #[error("no cutting indexes")]
    Empty,
    #[error("cut {index} at position {position} is outside [1, {n}]")]
    OutOfRange { position: usize, index: u32, n: usize },
    #[error("not ascending: cut {index} at position {position} does not exceed {previous}")]
    NotAscending {
        position: usize,
        index: u32,
        previous: u32,
    },
    #[error("last cut must equal n ({n}), found {last}")]
    LastNotN { last: u32, n: usize },
}

/// Checks that `cuts` (1-based segment end indexes) partition `1..=n`.
/// Reports the first violated condition.
pub fn validate_segmentation(n: usize, cuts: &[u32]) -> Result<(), SegmentationViolation> {
    let Some(&last) = cuts.last() else {
        return Err(SegmentationViolation::Empty);
    };
    let mut previous: Option<u32> = None;
    for (position, &index) in cuts.iter().enumerate() {
        if index == 0 || index as usize > n {
            return Err(SegmentationViolation::OutOfRange { position, index, n });
        }
        if let Some(prev) = previous {
            if index <= prev {
                return Err(SegmentationViolation::NotAscending {
                    position,
                    index,
                    previous: prev,
                });
            }
        }
        previous = Some(index);
    }
    if last as usize != n {
        return Err(SegmentationViolation::LastNotN { last, n });
    }
    Ok(())
}

/// Inclusive `(begin, end)` spans induced by a valid cut list.
pub fn segments_from_cuts(cuts: &[u32]) -> Vec<(u32, u32)> {
    let mut begin = 1;
    cuts.iter()
        .map(|&end| {
            let span = (begin, end);
            begin = end + 1;
            span
        })
        .collect()
}
