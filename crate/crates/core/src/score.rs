//! Scoring detector output against labelled ground truth.
//!
//! Every outlier bin is matched to at most one truth event of the same place
//! whose span, widened by the tolerance on both sides, overlaps the bin. The
//! first matched bin of a truth event makes it a unique detection; further
//! matches are duplicates.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::time::Timestamp;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TruthEvent {
    pub place_id: String,
    pub start: Timestamp,
    /// Exclusive.
    pub end: Timestamp,
    pub shape: String,
    pub keywords: Vec<String>,
}

/// One outlier bin `[start, end)` reported for a place.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutlierSpan {
    pub place_id: String,
    pub start: Timestamp,
    pub end: Timestamp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreReport {
    pub total_outliers: u64,
    pub detected_happened: u64,
    pub unique_events: u64,
    pub duplicate_detections: u64,
    pub missed_events: u64,
    /// `detected_happened / total_outliers`; 0 when there are no outliers.
    pub precision: f64,
    pub precision_defined: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScoreError {
    #[error("inconsistent counts: {0}")]
    Inconsistent(&'static str),
}

impl ScoreReport {
    /// Builds a report from raw counts, as tabulated by hand.
    pub fn from_counts(total_outliers: u64, detected_happened: u64, unique_events: u64, truth_events: u64) -> Result<Self, ScoreError> {
        if detected_happened > total_outliers {
            return Err(ScoreError::Inconsistent("more matched outliers than outliers"));
        }
        if unique_events > detected_happened {
            return Err(ScoreError::Inconsistent("more unique events than matched outliers"));
        }
        if unique_events > truth_events {
            return Err(ScoreError::Inconsistent("more unique events than truth events"));
        }
        let precision_defined = total_outliers > 0;
        let precision = if precision_defined { detected_happened as f64 / total_outliers as f64 } else { 0.0 };
        Ok(ScoreReport {
            total_outliers,
            detected_happened,
            unique_events,
            duplicate_detections: detected_happened - unique_events,
            missed_events: truth_events - unique_events,
            precision,
            precision_defined,
        })
    }

    pub fn precision_percent(&self) -> f64 {
        self.precision * 100.0
    }
}

/// Index of the truth event an outlier matches, if any.
pub fn match_outlier(outlier: &OutlierSpan, truth: &[TruthEvent], tolerance_ms: i64) -> Option<usize> {
    truth.iter().position(|t| {
        t.place_id == outlier.place_id
            && outlier.start.millis() < t.end.millis().saturating_add(tolerance_ms)
            && t.start.millis().saturating_sub(tolerance_ms) < outlier.end.millis()
    })
}

pub fn score(outliers: &[OutlierSpan], truth: &[TruthEvent], tolerance_ms: i64) -> ScoreReport {
    let mut matched = 0u64;
    let mut hit: BTreeSet<usize> = BTreeSet::new();
    for o in outliers {
        if let Some(i) = match_outlier(o, truth, tolerance_ms) {
            matched += 1;
            hit.insert(i);
        }
    }
    ScoreReport::from_counts(outliers.len() as u64, matched, hit.len() as u64, truth.len() as u64)
        .expect("counts derived from a matching are consistent")
}
