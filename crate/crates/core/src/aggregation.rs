//! Aggregation support: threshold-based candidate segments and the
//! accept / refine / reject merge of annotation layers.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, FlatConfig};
use crate::heading::{signed_heading_delta, HEADING_ZERO_TOLERANCE};
use crate::model::{
    AnnotationLayer, AnnotationType, ModelError, SegmentType, SegmentTypes, Trajectory,
};

/// Significance thresholds used while aggregating.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdProfile {
    pub name: String,
    /// Net speed change (mph) a monotone run needs to count.
    pub min_speed_change: f64,
    /// Seconds of continuous heading change a run needs to count.
    pub min_heading_run: u32,
}

impl ThresholdProfile {
    pub const KEYS: [&'static str; 3] = ["profile", "min_speed_change", "min_heading_run"];

    pub fn strict() -> Self {
        Self {
            name: "strict".into(),
            min_speed_change: 5.0,
            min_heading_run: 5,
        }
    }

    pub fn easy() -> Self {
        Self {
            name: "easy".into(),
            min_speed_change: 10.0,
            min_heading_run: 10,
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name.trim().to_ascii_lowercase().as_str() {
            "strict" => Some(Self::strict()),
            "easy" => Some(Self::easy()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.min_speed_change > 0.0 && self.min_speed_change.is_finite()) {
            return Err(ConfigError::Invalid(format!(
                "min_speed_change must be positive, got {}",
                self.min_speed_change
            )));
        }
        if self.min_heading_run == 0 {
            return Err(ConfigError::Invalid("min_heading_run must be positive".into()));
        }
        Ok(())
    }

    /// Starts from the named preset (`profile` key, default `base`) and
    /// applies any threshold overrides. Overriding a preset renames it
    /// `custom`.
    pub fn from_flat(cfg: &FlatConfig, base: ThresholdProfile) -> Result<Self, ConfigError> {
        let mut out = match cfg.get("profile") {
            Some(name) => Self::by_name(name).ok_or_else(|| ConfigError::BadValue {
                key: "profile".into(),
                value: name.into(),
            })?,
            None => base,
        };
        if let Some(v) = cfg.value("min_speed_change")? {
            out.min_speed_change = v;
            out.name = "custom".into();
        }
        if let Some(v) = cfg.value("min_heading_run")? {
            out.min_heading_run = v;
            out.name = "custom".into();
        }
        out.validate()?;
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum Evidence {
    /// Absolute net speed change over the run, mph.
    SpeedChange(f64),
    /// Run length in seconds.
    HeadingRun(u32),
}

impl fmt::Display for Evidence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Evidence::SpeedChange(v) => write!(f, "{v}"),
            Evidence::HeadingRun(s) => write!(f, "{s}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSegment {
    pub begin: u32,
    pub end: u32,
    pub suggested_types: SegmentTypes,
    pub evidence: Evidence,
}

impl CandidateSegment {
    /// Stable identifier such as `speed-up:3-9` or `heading:2-6`.
    pub fn id(&self) -> String {
        let kind = match self.evidence {
            Evidence::HeadingRun(_) => "heading",
            Evidence::SpeedChange(_) if self.suggested_types.contains(&SegmentType::SpeedUp) => {
                "speed-up"
            }
            Evidence::SpeedChange(_) => "slow-down",
        };
        format!("{kind}:{}-{}", self.begin, self.end)
    }

    pub fn contains(&self, other: &CandidateSegment) -> bool {
        self.begin <= other.begin && other.end <= self.end
    }
}

/// Maximal runs `[start, end]` (0-based, inclusive) where `step(i-1, i)` holds.
fn maximal_runs(n: usize, step: impl Fn(usize) -> bool) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut start = 0;
    while start < n {
        let mut end = start;
        while end + 1 < n && step(end + 1) {
            end += 1;
        }
        runs.push((start, end));
        start = end + 1;
    }
    runs
}

/// Maximal non-decreasing (speed-up) and non-increasing (slow-down) speed
/// runs whose net change reaches the profile threshold.
pub fn detect_speed_candidates(
    trajectory: &Trajectory,
    profile: &ThresholdProfile,
) -> Vec<CandidateSegment> {
    let s = trajectory.speeds();
    let step_of = |i: usize| trajectory.points[i].time_step;
    let mut out = Vec::new();
    for (rising, kind) in [(true, SegmentType::SpeedUp), (false, SegmentType::SlowDown)] {
        let runs = maximal_runs(s.len(), |i| if rising { s[i] >= s[i - 1] } else { s[i] <= s[i - 1] });
        for (b, e) in runs {
            let change = (s[e] - s[b]).abs();
            if e > b && change >= profile.min_speed_change {
                out.push(CandidateSegment {
                    begin: step_of(b),
                    end: step_of(e),
                    suggested_types: SegmentTypes::from([kind]),
                    evidence: Evidence::SpeedChange(change),
                });
            }
        }
    }
    out.sort_by_key(|c| (c.begin, c.end));
    out
}

/// Sign changes between consecutive non-zero values.
pub fn sign_alternations(deltas: &[f64]) -> usize {
    let signs: Vec<bool> = deltas.iter().filter(|d| **d != 0.0).map(|d| *d > 0.0).collect();
    signs.windows(2).filter(|w| w[0] != w[1]).count()
}

/// Maximal runs of points whose heading change exceeds the zero tolerance,
/// lasting at least `min_heading_run` seconds. A run whose signed turns
/// flip direction at least twice is jiggling, otherwise a smooth turn.
pub fn detect_heading_candidates(
    trajectory: &Trajectory,
    profile: &ThresholdProfile,
) -> Vec<CandidateSegment> {
    let pts = &trajectory.points;
    let turning: Vec<bool> = pts
        .iter()
        .map(|p| p.heading_change > HEADING_ZERO_TOLERANCE)
        .collect();
    let mut out = Vec::new();
    for (b, e) in maximal_runs(pts.len(), |i| turning[i] == turning[i - 1]) {
        if !turning[b] {
            continue;
        }
        let len = (e - b + 1) as u32;
        if e == b || len < profile.min_heading_run {
            continue;
        }
        let deltas: Vec<f64> = (b.max(1)..=e)
            .filter_map(|i| signed_heading_delta(pts[i - 1].heading, pts[i].heading).ok())
            .collect();
        let kind = if sign_alternations(&deltas) >= 2 {
            SegmentType::Jiggling
        } else {
            SegmentType::SmoothTurn
        };
        out.push(CandidateSegment {
            begin: pts[b].time_step,
            end: pts[e].time_step,
            suggested_types: SegmentTypes::from([kind]),
            evidence: Evidence::HeadingRun(len),
        });
    }
    out
}

/// Speed and heading candidates together, ordered by span.
pub fn detect_candidates(
    trajectory: &Trajectory,
    profile: &ThresholdProfile,
) -> Vec<CandidateSegment> {
    let mut all = detect_speed_candidates(trajectory, profile);
    all.extend(detect_heading_candidates(trajectory, profile));
    all.sort_by_cached_key(|c| (c.begin, c.end, c.id()));
    all
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DecisionSource {
    Mark { author: String, time_step: u32 },
    Candidate { candidate: String },
}

impl fmt::Display for DecisionSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DecisionSource::Mark { author, time_step } => write!(f, "{author}@{time_step}"),
            DecisionSource::Candidate { candidate } => write!(f, "candidate {candidate}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "lowercase")]
pub enum MergeAction {
    Accept,
    Refine {
        time_step: u32,
        annotation_type: AnnotationType,
        segment_types: Vec<SegmentType>,
    },
    Reject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeDecision {
    pub source: DecisionSource,
    #[serde(flatten)]
    pub action: MergeAction,
}

impl MergeDecision {
    pub fn accept_mark(author: &str, time_step: u32) -> Self {
        Self {
            source: DecisionSource::Mark {
                author: author.into(),
                time_step,
            },
            action: MergeAction::Accept,
        }
    }

    pub fn reject_mark(author: &str, time_step: u32) -> Self {
        Self {
            source: DecisionSource::Mark {
                author: author.into(),
                time_step,
            },
            action: MergeAction::Reject,
        }
    }

    pub fn refine_mark(
        author: &str,
        time_step: u32,
        new_step: u32,
        annotation_type: AnnotationType,
        segment_types: impl IntoIterator<Item = SegmentType>,
    ) -> Self {
        Self {
            source: DecisionSource::Mark {
                author: author.into(),
                time_step,
            },
            action: MergeAction::Refine {
                time_step: new_step,
                annotation_type,
                segment_types: segment_types.into_iter().collect(),
            },
        }
    }
}

/// Decision file: the aggregator's verdicts for one trip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionDocument {
    pub trip_id: String,
    pub author: String,
    pub decisions: Vec<MergeDecision>,
}

#[derive(Debug, Error, PartialEq)]
pub enum MergeError {
    #[error("decision references unknown source {0}")]
    UnknownSource(DecisionSource),
    #[error("more than one decision for {0}")]
    DuplicateDecision(DecisionSource),
    #[error("two input layers share author {0:?}")]
    DuplicateAuthor(String),
    #[error("refine of {origin} is invalid: {reason}")]
    InvalidRefine {
        origin: DecisionSource,
        reason: String,
    },
    #[error("conflict at step {time_step}: {first} lands {first_type}, {second} lands {second_type}; add an explicit tie-break decision")]
    Conflict {
        time_step: u32,
        first: DecisionSource,
        first_type: AnnotationType,
        second: DecisionSource,
        second_type: AnnotationType,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

struct Landing {
    annotation_type: AnnotationType,
    types: SegmentTypes,
    source: DecisionSource,
}

/// Builds the finalized layer for `aggregator` from explicit decisions.
/// Accepted marks keep their position and labels, refined marks move to
/// their new position with new labels, rejected and undecided sources are
/// dropped. Marks landing on the same step merge their types when their
/// annotation types agree and are a conflict otherwise.
pub fn merge_layers(
    trajectory: &Trajectory,
    layers: &[AnnotationLayer],
    candidates: &[CandidateSegment],
    decisions: &[MergeDecision],
    aggregator: &str,
) -> Result<AnnotationLayer, MergeError> {
    let mut by_author: HashMap<&str, &AnnotationLayer> = HashMap::new();
    for layer in layers {
        layer.validate_against(trajectory)?;
        if by_author.insert(layer.author(), layer).is_some() {
            return Err(MergeError::DuplicateAuthor(layer.author().to_string()));
        }
    }
    let by_candidate: HashMap<String, &CandidateSegment> =
        candidates.iter().map(|c| (c.id(), c)).collect();

    let mut seen: HashSet<&DecisionSource> = HashSet::new();
    let mut landed: BTreeMap<u32, Landing> = BTreeMap::new();
    for decision in decisions {
        let source = &decision.source;
        if !seen.insert(source) {
            return Err(MergeError::DuplicateDecision(source.clone()));
        }
        let original = match source {
            DecisionSource::Mark { author, time_step } => by_author
                .get(author.as_str())
                .and_then(|l| l.get(*time_step))
                .map(|m| (m.time_step, m.annotation_type, m.segment_types.clone())),
            DecisionSource::Candidate { candidate } => by_candidate
                .get(candidate)
                .map(|c| (c.end, AnnotationType::Segment, c.suggested_types.clone())),
        }
        .ok_or_else(|| MergeError::UnknownSource(source.clone()))?;

        let (step, annotation_type, types) = match &decision.action {
            MergeAction::Reject => continue,
            MergeAction::Accept => original,
            MergeAction::Refine {
                time_step,
                annotation_type,
                segment_types,
            } => {
                let invalid = |reason: String| MergeError::InvalidRefine {
                    origin: source.clone(),
                    reason,
                };
                if trajectory.point(*time_step).is_none() {
                    return Err(invalid(format!("step {time_step} does not exist")));
                }
                if *annotation_type == AnnotationType::NonSegment {
                    return Err(invalid("Non-Segment cannot be a finalized mark".into()));
                }
                if segment_types.is_empty() {
                    return Err(invalid("no segment types".into()));
                }
                (*time_step, *annotation_type, segment_types.iter().copied().collect())
            }
        };

        match landed.get_mut(&step) {
            Some(existing) if existing.annotation_type != annotation_type => {
                return Err(MergeError::Conflict {
                    time_step: step,
                    first: existing.source.clone(),
                    first_type: existing.annotation_type,
                    second: source.clone(),
                    second_type: annotation_type,
                });
            }
            Some(existing) => existing.types.extend(types),
            None => {
                landed.insert(
                    step,
                    Landing {
                        annotation_type,
                        types,
                        source: source.clone(),
                    },
                );
            }
        }
    }

    let mut out = AnnotationLayer::new(trajectory.trip_id.clone(), aggregator);
    for (step, landing) in landed {
        out.apply(step, landing.annotation_type, landing.types)?;
    }
    Ok(out)
}
