//! Random, load-balanced distribution of trips to annotator pairs.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;
use trajlab_core::corpus::Assignment;

#[derive(Debug, Error, PartialEq)]
pub enum AssignError {
    #[error("need at least 2 annotators, got {0}")]
    TooFewAnnotators(usize),
    #[error("no trips to assign")]
    NoTrips,
    #[error("annotator {0:?} listed twice")]
    DuplicateAnnotator(String),
    #[error("trip {0:?} listed twice")]
    DuplicateTrip(String),
    #[error("weight for {0:?} must be positive and finite")]
    BadWeight(String),
    #[error("weight given for unknown annotator {0:?}")]
    UnknownWeight(String),
}

/// Gives every trip to exactly two distinct annotators.
///
/// Each trip goes to the two annotators with the lowest `(load + 1) /
/// weight`, ties broken by a per-trip shuffle drawn from `seed`. With equal
/// weights this keeps every pair of loads within one of each other.
/// Missing weights default to 1.
pub fn assign_trajectories(
    trips: &[String],
    annotators: &[String],
    seed: u64,
    weights: &BTreeMap<String, f64>,
) -> Result<Vec<Assignment>, AssignError> {
    if annotators.len() < 2 {
        return Err(AssignError::TooFewAnnotators(annotators.len()));
    }
    if trips.is_empty() {
        return Err(AssignError::NoTrips);
    }
    let mut seen = BTreeSet::new();
    for a in annotators {
        if !seen.insert(a) {
            return Err(AssignError::DuplicateAnnotator(a.clone()));
        }
    }
    let mut seen_trips = BTreeSet::new();
    for t in trips {
        if !seen_trips.insert(t) {
            return Err(AssignError::DuplicateTrip(t.clone()));
        }
    }
    for (name, &w) in weights {
        if !seen.contains(name) {
            return Err(AssignError::UnknownWeight(name.clone()));
        }
        if !(w > 0.0 && w.is_finite()) {
            return Err(AssignError::BadWeight(name.clone()));
        }
    }
    let weight: Vec<f64> = annotators
        .iter()
        .map(|a| weights.get(a).copied().unwrap_or(1.0))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut load = vec![0u64; annotators.len()];
    let mut order: Vec<usize> = (0..annotators.len()).collect();
    let mut out = Vec::with_capacity(trips.len());
    for trip in trips {
        order.shuffle(&mut rng);
        // stable sort keeps the shuffled order among equal keys
        order.sort_by(|&x, &y| {
            let kx = (load[x] + 1) as f64 / weight[x];
            let ky = (load[y] + 1) as f64 / weight[y];
            kx.total_cmp(&ky)
        });
        let (x, y) = (order[0], order[1]);
        load[x] += 1;
        load[y] += 1;
        let mut pair = [annotators[x].clone(), annotators[y].clone()];
        pair.sort();
        out.push(Assignment {
            trip_id: trip.clone(),
            annotators: pair,
        });
    }
    Ok(out)
}
