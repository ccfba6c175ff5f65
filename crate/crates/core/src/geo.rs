//! Great-circle distance.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Mean Earth radius in meters.
pub const EARTH_RADIUS_METERS: f64 = 6_371_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatLng {
    pub lat: f64,
    pub lng: f64,
}

impl LatLng {
    pub const fn new(lat: f64, lng: f64) -> Self {
        Self { lat, lng }
    }

    pub fn in_range(&self) -> bool {
        (-90.0..=90.0).contains(&self.lat) && (-180.0..=180.0).contains(&self.lng)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeoError {
    #[error("coordinate ({lat}, {lng}) is out of range")]
    OutOfRange { lat: f64, lng: f64 },
    #[error("earth radius must be positive, got {0}")]
    BadRadius(f64),
}

/// Haversine distance in meters between two coordinates.
pub fn haversine(p: LatLng, q: LatLng, earth_radius: f64) -> Result<f64, GeoError> {
    for c in [p, q] {
        if !c.in_range() {
            return Err(GeoError::OutOfRange { lat: c.lat, lng: c.lng });
        }
    }
    if !(earth_radius > 0.0 && earth_radius.is_finite()) {
        return Err(GeoError::BadRadius(earth_radius));
    }
    Ok(haversine_unchecked(p, q, earth_radius))
}

pub(crate) fn haversine_unchecked(p: LatLng, q: LatLng, earth_radius: f64) -> f64 {
    let phi1 = p.lat.to_radians();
    let phi2 = q.lat.to_radians();
    let dphi = (q.lat - p.lat).to_radians();
    let dlambda = (q.lng - p.lng).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    // clamp: rounding can push h a hair above 1 for antipodal points
    2.0 * earth_radius * h.min(1.0).sqrt().asin()
}
