//! In-memory view of a corpus directory with write-through persistence.
//!
//! Mutations serialize per (trip, author) layer behind that layer's mutex;
//! the new layer is written to disk before it replaces the in-memory copy,
//! so a failed write leaves both unchanged.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use trajlab_core::aggregation::{detect_candidates, merge_layers, CandidateSegment, MergeDecision, MergeError, ThresholdProfile};
use trajlab_core::autoann::{run_autoann, AutoAnnConfig, AutoAnnResult};
use trajlab_core::corpus::{is_safe_id, Assignment, Corpus, CorpusError};
use trajlab_core::dact::{DactOptions, ValidationReport};
use trajlab_core::model::{AnnotationLayer, AnnotationType, ModelError, Phase, SegmentType, Trajectory};

use crate::assign::{assign_trajectories, AssignError};

pub const DEFAULT_AGGREGATOR: &str = "aggregator";

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Forbidden(String),
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    Conflict(String),
    #[error("storage: {0}")]
    Storage(#[from] CorpusError),
}

impl From<AssignError> for ServiceError {
    fn from(e: AssignError) -> Self {
        ServiceError::BadRequest(e.to_string())
    }
}

impl From<ModelError> for ServiceError {
    fn from(e: ModelError) -> Self {
        ServiceError::BadRequest(e.to_string())
    }
}

impl From<MergeError> for ServiceError {
    fn from(e: MergeError) -> Self {
        match e {
            MergeError::Conflict { .. } => ServiceError::Conflict(e.to_string()),
            other => ServiceError::BadRequest(other.to_string()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct StoreConfig {
    pub data_dir: PathBuf,
    /// Author allowed to write any trip and to finalize.
    pub aggregator: String,
    pub autoann: AutoAnnConfig,
    pub dact: DactOptions,
}

impl StoreConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        Self {
            data_dir: data_dir.into(),
            aggregator: DEFAULT_AGGREGATOR.to_string(),
            autoann: AutoAnnConfig::default(),
            dact: DactOptions::default(),
        }
    }

    /// `TRAJLAB_DATA_DIR` (required) and `TRAJLAB_AGGREGATOR`.
    pub fn from_env() -> Result<Self, String> {
        let dir = std::env::var("TRAJLAB_DATA_DIR").map_err(|_| "TRAJLAB_DATA_DIR is not set".to_string())?;
        let mut cfg = Self::new(dir);
        if let Ok(a) = std::env::var("TRAJLAB_AGGREGATOR") {
            cfg.aggregator = a;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripSummary {
    pub trip_id: String,
    pub n: usize,
    pub start: Option<DateTime<Utc>>,
    pub end: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkRequest {
    pub author: String,
    pub time_step: u32,
    pub annotation_type: AnnotationType,
    #[serde(default)]
    pub segment_types: Vec<SegmentType>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignRequest {
    pub trips: Vec<String>,
    pub annotators: Vec<String>,
    pub seed: u64,
    #[serde(default)]
    pub weights: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalizeRequest {
    pub phase: Phase,
    pub decisions: Vec<MergeDecision>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Suggestions {
    pub autoann: AutoAnnResult,
    pub profile: ThresholdProfile,
    pub candidates: Vec<CandidateSegment>,
}

type LayerKey = (String, String);

pub struct Store {
    config: StoreConfig,
    trips: BTreeMap<String, Trajectory>,
    rejected: Vec<ValidationReport>,
    layers: Mutex<HashMap<LayerKey, Arc<Mutex<AnnotationLayer>>>>,
    assignments: RwLock<BTreeMap<String, [String; 2]>>,
    finalized: Mutex<BTreeMap<(String, Phase), AnnotationLayer>>,
}

impl Store {
    /// Loads the corpus. Trips that fail validation are left out of the
    /// catalog and listed by [`Store::rejected`].
    pub fn open(config: StoreConfig) -> Result<Self, ServiceError> {
        let corpus = Corpus::load(&config.data_dir, &config.dact)?;
        let mut trips = BTreeMap::new();
        let mut rejected = Vec::new();
        let mut layers = HashMap::new();
        let mut finalized = BTreeMap::new();
        for (id, t) in corpus.trips {
            if !t.report.is_accepted() {
                rejected.push(t.report);
                continue;
            }
            for (author, layer) in t.layers {
                layers.insert((id.clone(), author), Arc::new(Mutex::new(layer)));
            }
            for (phase, layer) in t.finalized {
                finalized.insert((id.clone(), phase), layer);
            }
            trips.insert(id, t.trajectory);
        }
        let assignments = corpus
            .assignments
            .into_iter()
            .map(|a| (a.trip_id, a.annotators))
            .collect();
        Ok(Self {
            config,
            trips,
            rejected,
            layers: Mutex::new(layers),
            assignments: RwLock::new(assignments),
            finalized: Mutex::new(finalized),
        })
    }

    pub fn config(&self) -> &StoreConfig {
        &self.config
    }

    pub fn root(&self) -> &Path {
        &self.config.data_dir
    }

    pub fn rejected(&self) -> &[ValidationReport] {
        &self.rejected
    }

    pub fn list_trips(&self) -> Vec<TripSummary> {
        self.trips
            .values()
            .map(|t| TripSummary {
                trip_id: t.trip_id.clone(),
                n: t.len(),
                start: t.points.first().map(|p| p.timestamp),
                end: t.points.last().map(|p| p.timestamp),
            })
            .collect()
    }

    pub fn trajectory(&self, trip_id: &str) -> Result<&Trajectory, ServiceError> {
        self.trips
            .get(trip_id)
            .ok_or_else(|| ServiceError::NotFound(format!("unknown trip {trip_id:?}")))
    }

    /// Snapshot of the trip's non-empty layers ordered by author,
    /// optionally only one author's.
    pub fn layers(&self, trip_id: &str, author: Option<&str>) -> Result<Vec<AnnotationLayer>, ServiceError> {
        self.trajectory(trip_id)?;
        let handles: Vec<(String, Arc<Mutex<AnnotationLayer>>)> = {
            let map = self.layers.lock().expect("layer index poisoned");
            map.iter()
                .filter(|((t, a), _)| t == trip_id && author.is_none_or(|x| x == a))
                .map(|((_, a), l)| (a.clone(), Arc::clone(l)))
                .collect()
        };
        let mut out: Vec<AnnotationLayer> = handles
            .into_iter()
            .map(|(_, l)| l.lock().expect("layer poisoned").clone())
            .filter(|l| !l.is_empty())
            .collect();
        out.sort_by(|x, y| x.author().cmp(y.author()));
        Ok(out)
    }

    pub fn assignment(&self, trip_id: &str) -> Option<[String; 2]> {
        self.assignments.read().expect("assignments poisoned").get(trip_id).cloned()
    }

    pub fn assignments(&self) -> Vec<Assignment> {
        self.assignments
            .read()
            .expect("assignments poisoned")
            .iter()
            .map(|(t, a)| Assignment {
                trip_id: t.clone(),
                annotators: a.clone(),
            })
            .collect()
    }

    fn layer_handle(&self, trip_id: &str, author: &str) -> Arc<Mutex<AnnotationLayer>> {
        let mut map = self.layers.lock().expect("layer index poisoned");
        Arc::clone(
            map.entry((trip_id.to_string(), author.to_string()))
                .or_insert_with(|| Arc::new(Mutex::new(AnnotationLayer::new(trip_id, author)))),
        )
    }

    /// Upserts (Segment, Maybe-Segment) or removes (Non-Segment) the
    /// author's mark at one point and returns the updated layer.
    pub fn record_mark(&self, trip_id: &str, req: &MarkRequest) -> Result<AnnotationLayer, ServiceError> {
        let trajectory = self.trajectory(trip_id)?;
        if trajectory.point(req.time_step).is_none() {
            return Err(ServiceError::NotFound(format!(
                "trip {trip_id:?} has no point at step {}",
                req.time_step
            )));
        }
        if !is_safe_id(&req.author) {
            return Err(ServiceError::BadRequest(format!("invalid author {:?}", req.author)));
        }
        let assigned = self
            .assignment(trip_id)
            .is_some_and(|pair| pair.contains(&req.author));
        if !assigned && req.author != self.config.aggregator {
            return Err(ServiceError::Forbidden(format!(
                "{:?} is not assigned to trip {trip_id:?}",
                req.author
            )));
        }

        let handle = self.layer_handle(trip_id, &req.author);
        let mut layer = handle.lock().expect("layer poisoned");
        let mut next = layer.clone();
        next.apply(req.time_step, req.annotation_type, req.segment_types.iter().copied())?;
        if next != *layer {
            Corpus::save_layer(self.root(), &next)?;
        }
        *layer = next;
        Ok(layer.clone())
    }

    pub fn suggestions(&self, trip_id: &str, profile: &str) -> Result<Suggestions, ServiceError> {
        let trajectory = self.trajectory(trip_id)?;
        let profile = ThresholdProfile::by_name(profile)
            .ok_or_else(|| ServiceError::BadRequest(format!("unknown profile {profile:?}; use strict or easy")))?;
        let autoann = run_autoann(trajectory, &self.config.autoann)
            .map_err(|e| ServiceError::BadRequest(e.to_string()))?;
        Ok(Suggestions {
            autoann,
            candidates: detect_candidates(trajectory, &profile),
            profile,
        })
    }

    /// Assigns the listed trips and persists the result; earlier
    /// assignments of other trips are kept.
    pub fn assign(&self, req: &AssignRequest) -> Result<Vec<Assignment>, ServiceError> {
        for t in &req.trips {
            self.trajectory(t)?;
        }
        for a in &req.annotators {
            if !is_safe_id(a) {
                return Err(ServiceError::BadRequest(format!("invalid annotator {a:?}")));
            }
        }
        let out = assign_trajectories(&req.trips, &req.annotators, req.seed, &req.weights)?;
        let mut map = self.assignments.write().expect("assignments poisoned");
        let mut next = map.clone();
        for a in &out {
            next.insert(a.trip_id.clone(), a.annotators.clone());
        }
        let all: Vec<Assignment> = next
            .iter()
            .map(|(t, a)| Assignment {
                trip_id: t.clone(),
                annotators: a.clone(),
            })
            .collect();
        Corpus::save_assignments(self.root(), &all)?;
        *map = next;
        Ok(out)
    }

    /// Merges every stored annotator layer of the trip plus the AutoAnn
    /// layer and the phase's candidates under the aggregator's decisions.
    pub fn finalize(&self, trip_id: &str, req: &FinalizeRequest) -> Result<AnnotationLayer, ServiceError> {
        let trajectory = self.trajectory(trip_id)?;
        let profile = match req.phase {
            Phase::Strict => ThresholdProfile::strict(),
            Phase::Easy => ThresholdProfile::easy(),
            Phase::Expert => {
                return Err(ServiceError::BadRequest("finalize needs phase strict or easy".into()))
            }
        };
        let aggregator = &self.config.aggregator;
        let mut inputs: Vec<AnnotationLayer> = self
            .layers(trip_id, None)?
            .into_iter()
            .filter(|l| l.author() != aggregator.as_str())
            .collect();
        let autoann = run_autoann(trajectory, &self.config.autoann)
            .map_err(|e| ServiceError::BadRequest(e.to_string()))?;
        inputs.push(autoann.layer);
        let candidates = detect_candidates(trajectory, &profile);
        let merged = merge_layers(trajectory, &inputs, &candidates, &req.decisions, aggregator)?;

        let mut fin = self.finalized.lock().expect("finalized poisoned");
        Corpus::save_finalized(self.root(), req.phase, &merged)?;
        fin.insert((trip_id.to_string(), req.phase), merged.clone());
        Ok(merged)
    }

    pub fn finalized(&self, trip_id: &str, phase: Phase) -> Option<AnnotationLayer> {
        self.finalized
            .lock()
            .expect("finalized poisoned")
            .get(&(trip_id.to_string(), phase))
            .cloned()
    }
}
