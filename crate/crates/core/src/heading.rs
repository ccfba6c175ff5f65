//! Heading-change derivation.

use serde::{Deserialize, Serialize};

use crate::model::ModelError;

/// Heading changes at or below this many degrees count as "no change".
/// Absorbs GPS jitter for the turn and heading-run rules.
pub const HEADING_ZERO_TOLERANCE: f64 = 0.5;

/// How consecutive headings are differenced.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadingDiffMode {
    /// `min(|Δ|, 360 − |Δ|)`: the physical turning magnitude.
    #[default]
    Circular,
    /// Plain `|Δ|`, so 359 → 1 yields 358. Kept for byte-exact reproduction
    /// of files produced with the naive formula.
    Literal,
}

fn check_heading(index: usize, value: f64) -> Result<(), ModelError> {
    if value.is_finite() && (0.0..360.0).contains(&value) {
        Ok(())
    } else {
        Err(ModelError::HeadingOutOfRange { index, value })
    }
}

/// Per-point heading change; the first point is always 0.
pub fn compute_heading_changes(
    headings: &[f64],
    mode: HeadingDiffMode,
) -> Result<Vec<f64>, ModelError> {
    if headings.is_empty() {
        return Err(ModelError::EmptyHeadings);
    }
    for (i, &h) in headings.iter().enumerate() {
        check_heading(i, h)?;
    }
    let mut out = Vec::with_capacity(headings.len());
    out.push(0.0);
    out.extend(headings.windows(2).map(|w| heading_difference(w[0], w[1], mode)));
    Ok(out)
}

/// Magnitude of the change between two in-range headings.
pub fn heading_difference(prev: f64, next: f64, mode: HeadingDiffMode) -> f64 {
    let delta = (next - prev).abs();
    match mode {
        HeadingDiffMode::Literal => delta,
        HeadingDiffMode::Circular => delta.min(360.0 - delta),
    }
}

/// Signed turn from `prev` to `next` in `(−180, 180]`; positive is clockwise.
pub fn signed_heading_delta(prev: f64, next: f64) -> Result<f64, ModelError> {
    check_heading(0, prev)?;
    check_heading(1, next)?;
    let d = (next - prev).rem_euclid(360.0);
    Ok(if d > 180.0 { d - 360.0 } else { d })
}
