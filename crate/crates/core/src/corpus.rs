//! On-disk corpus layout.
//!
//! ```text
//! <root>/trips/*.csv                   DACT files, one or more trips each
//! <root>/layers/<trip_id>/<author>.json  one annotator layer per file
//! <root>/finalized/<phase>/<trip_id>.json
//! <root>/assignments.json
//! ```
//!
//! Annotation cells inside a trip CSV load as a layer authored by
//! [`DactOptions::author`]; a sidecar for the same author replaces it.
//! Every write goes through a temporary file and a rename.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agreement::{AnnotatedTrip, Dataset};
use crate::autoann::AUTOANN_AUTHOR;
use crate::dact::{parse_dact, write_dact, DactError, DactOptions, ValidationReport};
use crate::model::{AnnotationLayer, ModelError, Phase, Trajectory};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Dact { path: PathBuf, source: DactError },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Layer { path: PathBuf, source: ModelError },
    #[error("{path}: expected trip {expected_trip:?} by {expected_author:?}, file holds {trip_id:?} by {author:?}")]
    Misplaced {
        path: PathBuf,
        expected_trip: String,
        expected_author: String,
        trip_id: String,
        author: String,
    },
    #[error("{0:?} is not a valid identifier (letters, digits, '-', '_', '.'; no leading '.')")]
    UnsafeId(String),
    #[error("trip {trip_id:?} appears in both {first} and {second}")]
    DuplicateTrip {
        trip_id: String,
        first: PathBuf,
        second: PathBuf,
    },
    #[error("unknown trip {0:?}")]
    UnknownTrip(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Identifiers that double as file names.
pub fn is_safe_id(id: &str) -> bool {
    !id.is_empty()
        && !id.starts_with('.')
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

fn check_id(id: &str) -> Result<(), CorpusError> {
    if is_safe_id(id) {
        Ok(())
    } else {
        Err(CorpusError::UnsafeId(id.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub trip_id: String,
    /// Two distinct annotators, sorted.
    pub annotators: [String; 2],
}

#[derive(Debug, Clone)]
pub struct CorpusTrip {
    pub trajectory: Trajectory,
    pub report: ValidationReport,
    pub source: PathBuf,
    /// Annotator layers keyed by author.
    pub layers: BTreeMap<String, AnnotationLayer>,
    pub finalized: BTreeMap<Phase, AnnotationLayer>,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub root: PathBuf,
    pub trips: BTreeMap<String, CorpusTrip>,
    pub assignments: Vec<Assignment>,
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>, CorpusError> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut out = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .map(|e| e.map(|e| e.path()).map_err(io_err(dir)))
        .collect::<Result<Vec<_>, _>>()?;
    out.sort();
    Ok(out)
}

fn has_ext(p: &Path, ext: &str) -> bool {
    p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case(ext))
}

fn stem(p: &Path) -> String {
    p.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn read_layer(path: &Path) -> Result<AnnotationLayer, CorpusError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| CorpusError::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn check_place(
    path: &Path,
    layer: &AnnotationLayer,
    trip_id: &str,
    author: &str,
) -> Result<(), CorpusError> {
    if layer.trip_id() != trip_id || layer.author() != author {
        return Err(CorpusError::Misplaced {
            path: path.to_path_buf(),
            expected_trip: trip_id.to_string(),
            expected_author: author.to_string(),
            trip_id: layer.trip_id().to_string(),
            author: layer.author().to_string(),
        });
    }
    Ok(())
}

/// Writes `bytes` to `path` through a sibling temporary file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CorpusError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(dir))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| CorpusError::Io {
        path: path.to_path_buf(),
        source: e.error,
    })?;
    Ok(())
}

fn layer_json(layer: &AnnotationLayer) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(layer).expect("layer serializes");
    bytes.push(b'\n');
    bytes
}

impl Corpus {
    /// Loads every trip, sidecar layer, finalized layer and the assignment
    /// list under `root`. Missing subdirectories count as empty.
    pub fn load(root: impl AsRef<Path>, opts: &DactOptions) -> Result<Self, CorpusError> {
        let root = root.as_ref().to_path_buf();
        if !root.is_dir() {
            return Err(CorpusError::Io {
                path: root,
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "corpus root not found"),
            });
        }
        let mut trips: BTreeMap<String, CorpusTrip> = BTreeMap::new();
        for path in sorted_entries(&root.join("trips"))? {
            if !has_ext(&path, "csv") {
                continue;
            }
            let file = fs::File::open(&path).map_err(io_err(&path))?;
            let parsed = parse_dact(std::io::BufReader::new(file), opts).map_err(|source| {
                CorpusError::Dact {
                    path: path.clone(),
                    source,
                }
            })?;
            for t in parsed.trips {
                let trip_id = t.trajectory.trip_id.clone();
                if let Some(prev) = trips.get(&trip_id) {
                    return Err(CorpusError::DuplicateTrip {
                        trip_id,
                        first: prev.source.clone(),
                        second: path.clone(),
                    });
                }
                let mut layers = BTreeMap::new();
                if !t.layer.is_empty() {
                    layers.insert(t.layer.author().to_string(), t.layer);
                }
                trips.insert(
                    trip_id,
                    CorpusTrip {
                        trajectory: t.trajectory,
                        report: t.report,
                        source: path.clone(),
                        layers,
                        finalized: BTreeMap::new(),
                    },
                );
            }
        }

        for dir in sorted_entries(&root.join("layers"))? {
            if !dir.is_dir() {
                continue;
            }
            let trip_id = dir
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let trip = trips
                .get_mut(&trip_id)
                .ok_or_else(|| CorpusError::UnknownTrip(trip_id.clone()))?;
            for path in sorted_entries(&dir)? {
                if !has_ext(&path, "json") {
                    continue;
                }
                let layer = read_layer(&path)?;
                check_place(&path, &layer, &trip_id, &stem(&path))?;
                layer
                    .validate_against(&trip.trajectory)
                    .map_err(|source| CorpusError::Layer {
                        path: path.clone(),
                        source,
                    })?;
                trip.layers.insert(layer.author().to_string(), layer);
            }
        }

        for phase in [Phase::Strict, Phase::Easy] {
            for path in sorted_entries(&root.join("finalized").join(phase.as_str()))? {
                if !has_ext(&path, "json") {
                    continue;
                }
                let trip_id = stem(&path);
                let layer = read_layer(&path)?;
                let trip = trips
                    .get_mut(&trip_id)
                    .ok_or_else(|| CorpusError::UnknownTrip(trip_id.clone()))?;
                if layer.trip_id() != trip_id {
                    let author = layer.author().to_string();
                    check_place(&path, &layer, &trip_id, &author)?;
                }
                layer
                    .validate_against(&trip.trajectory)
                    .map_err(|source| CorpusError::Layer {
                        path: path.clone(),
                        source,
                    })?;
                trip.finalized.insert(phase, layer);
            }
        }

        let assignments_path = root.join("assignments.json");
        let assignments = if assignments_path.is_file() {
            let text = fs::read_to_string(&assignments_path).map_err(io_err(&assignments_path))?;
            serde_json::from_str(&text).map_err(|source| CorpusError::Json {
                path: assignments_path.clone(),
                source,
            })?
        } else {
            Vec::new()
        };

        Ok(Self {
            root,
            trips,
            assignments,
        })
    }

    pub fn trip(&self, trip_id: &str) -> Result<&CorpusTrip, CorpusError> {
        self.trips
            .get(trip_id)
            .ok_or_else(|| CorpusError::UnknownTrip(trip_id.to_string()))
    }

    pub fn layer_path(&self, trip_id: &str, author: &str) -> Result<PathBuf, CorpusError> {
        check_id(trip_id)?;
        check_id(author)?;
        Ok(self.root.join("layers").join(trip_id).join(format!("{author}.json")))
    }

    pub fn finalized_path(&self, trip_id: &str, phase: Phase) -> Result<PathBuf, CorpusError> {
        check_id(trip_id)?;
        Ok(self
            .root
            .join("finalized")
            .join(phase.as_str())
            .join(format!("{trip_id}.json")))
    }

    /// Persists an annotator layer as its sidecar.
    pub fn save_layer(root: &Path, layer: &AnnotationLayer) -> Result<(), CorpusError> {
        check_id(layer.trip_id())?;
        check_id(layer.author())?;
        let path = root
            .join("layers")
            .join(layer.trip_id())
            .join(format!("{}.json", layer.author()));
        write_atomic(&path, &layer_json(layer))
    }

    pub fn save_finalized(root: &Path, phase: Phase, layer: &AnnotationLayer) -> Result<(), CorpusError> {
        check_id(layer.trip_id())?;
        let path = root
            .join("finalized")
            .join(phase.as_str())
            .join(format!("{}.json", layer.trip_id()));
        write_atomic(&path, &layer_json(layer))
    }

    pub fn save_assignments(root: &Path, assignments: &[Assignment]) -> Result<(), CorpusError> {
        let mut bytes = serde_json::to_vec_pretty(assignments).expect("assignments serialize");
        bytes.push(b'\n');
        write_atomic(&root.join("assignments.json"), &bytes)
    }

    /// Writes `trips/<trip_id>.csv`, with `layer` in the annotation columns.
    pub fn save_trip(
        root: &Path,
        trajectory: &Trajectory,
        layer: Option<&AnnotationLayer>,
        opts: &DactOptions,
    ) -> Result<(), CorpusError> {
        check_id(&trajectory.trip_id)?;
        let path = root.join("trips").join(format!("{}.csv", trajectory.trip_id));
        let empty = AnnotationLayer::new(trajectory.trip_id.clone(), opts.author.clone());
        let bytes = write_dact(Vec::new(), trajectory, layer.unwrap_or(&empty), opts).map_err(
            |source| CorpusError::Dact {
                path: path.clone(),
                source,
            },
        )?;
        write_atomic(&path, &bytes)
    }

    /// Agreement dataset over accepted trips. AutoAnn layers are not
    /// treated as expert layers.
    pub fn dataset(&self) -> Dataset {
        Dataset {
            trips: self
                .trips
                .values()
                .filter(|t| t.report.is_accepted())
                .map(|t| AnnotatedTrip {
                    trajectory: t.trajectory.clone(),
                    expert_layers: t
                        .layers
                        .values()
                        .filter(|l| l.author() != AUTOANN_AUTHOR)
                        .cloned()
                        .collect(),
                    finalized: t.finalized.clone(),
                })
                .collect(),
        }
    }
}
