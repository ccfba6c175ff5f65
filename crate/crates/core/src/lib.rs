//! Trajectory annotation toolkit: data model, DACT file I/O, automatic
//! annotation, aggregation of annotator layers and agreement analytics.

pub mod aggregation;
pub mod agreement;
pub mod autoann;
pub mod config;
pub mod corpus;
pub mod dact;
pub mod geo;
pub mod heading;
pub mod model;
pub mod synth;

pub use aggregation::{
    detect_candidates, merge_layers, CandidateSegment, DecisionDocument, MergeDecision, MergeError,
    ThresholdProfile,
};
pub use agreement::{
    cohens_kappa, match_annotations, overlap, phase_agreement, tau_sweep, AgreementConfig,
    AgreementError, AgreementReport, AnnotatedTrip, ContingencyCounts, Dataset,
};
pub use autoann::{run_autoann, AutoAnnConfig, AutoAnnError, AutoAnnResult, AUTOANN_AUTHOR};
pub use config::{ConfigError, FlatConfig};
pub use dact::{parse_dact, validate_quality, write_dact, DactError, DactOptions, ValidationReport};
pub use geo::{haversine, LatLng, EARTH_RADIUS_METERS};
pub use heading::HeadingDiffMode;
pub use model::{
    AnnotationLayer, AnnotationMark, AnnotationType, ModelError, Phase, SegmentType, Trajectory,
    TrajectoryPoint,
};
pub use corpus::{Assignment, Corpus, CorpusError};
