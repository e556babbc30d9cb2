//! JSON line formats for events, ground truth and closed bins.

use geopulse_core::detect::BinVerdict;
use geopulse_core::score::{OutlierSpan, TruthEvent};
use geopulse_core::{EventReport, Timestamp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{format_timestamp, parse_timestamp};

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("line {line}: malformed event record: {reason}")]
    MalformedEvent { line: usize, reason: String },
    #[error("line {line}: malformed truth record: {reason}")]
    MalformedTruth { line: usize, reason: String },
}

fn finite(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else if v > 0.0 {
        f64::MAX
    } else {
        0.0
    }
}

/// One emitted event window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub place_id: String,
    pub place_name: String,
    pub start: String,
    /// Exclusive end of the last outlier bin.
    pub end: String,
    pub peak_score: f64,
    pub tweets_peak: f64,
    pub users_peak: f64,
    pub terms: Vec<String>,
    #[serde(default)]
    pub term_counts: Vec<u64>,
    pub bin_secs: i64,
    pub start_bin: i64,
    pub end_bin: i64,
    /// Start times of the outlier bins inside the window.
    pub outlier_starts: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

impl EventRecord {
    pub fn from_report(r: &EventReport) -> Self {
        EventRecord {
            place_id: r.place_id.clone(),
            place_name: r.place_name.clone(),
            start: format_timestamp(r.start),
            end: format_timestamp(r.end),
            peak_score: finite(r.peak_score),
            tweets_peak: r.tweets_peak,
            users_peak: r.users_peak,
            terms: r.terms.terms().map(str::to_string).collect(),
            term_counts: r.terms.entries().iter().map(|(_, c)| *c).collect(),
            bin_secs: r.bin_size.millis() / 1000,
            start_bin: r.start_bin,
            end_bin: r.end_bin,
            outlier_starts: r.outliers.iter().map(|o| format_timestamp(o.bin_start)).collect(),
            warning: r.warning.map(|w| w.as_str().to_string()),
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("event records always serialize")
    }

    /// The outlier bins of this window as time spans.
    pub fn outlier_spans(&self) -> Result<Vec<OutlierSpan>, String> {
        let bin_ms = self.bin_secs * 1000;
        self.outlier_starts
            .iter()
            .map(|s| {
                let start = parse_timestamp(s).map_err(|e| e.to_string())?;
                Ok(OutlierSpan { place_id: self.place_id.clone(), start, end: Timestamp(start.millis() + bin_ms) })
            })
            .collect()
    }
}

pub fn parse_events(text: &str) -> Result<Vec<EventRecord>, RecordError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| RecordError::MalformedEvent { line: i + 1, reason: e.to_string() })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub place_id: String,
    pub start: String,
    pub end: String,
    pub shape: String,
    #[serde(default)]
    pub keywords: Vec<String>,
}

impl TruthRecord {
    pub fn from_event(t: &TruthEvent) -> Self {
        TruthRecord {
            place_id: t.place_id.clone(),
            start: format_timestamp(t.start),
            end: format_timestamp(t.end),
            shape: t.shape.clone(),
            keywords: t.keywords.clone(),
        }
    }

    pub fn to_event(&self) -> Result<TruthEvent, String> {
        let start = parse_timestamp(&self.start).map_err(|e| e.to_string())?;
        let end = parse_timestamp(&self.end).map_err(|e| e.to_string())?;
        if end < start {
            return Err("end precedes start".into());
        }
        Ok(TruthEvent {
            place_id: self.place_id.clone(),
            start,
            end,
            shape: self.shape.clone(),
            keywords: self.keywords.clone(),
        })
    }
}

pub fn parse_truth(text: &str) -> Result<Vec<TruthEvent>, RecordError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let malformed = |reason: String| RecordError::MalformedTruth { line: i + 1, reason };
            serde_json::from_str::<TruthRecord>(l)
                .map_err(|e| malformed(e.to_string()))?
                .to_event()
                .map_err(malformed)
        })
        .collect()
}

/// One closed bin with both series' expectations and flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinRecord {
    pub place_id: String,
    pub bin_index: i64,
    pub bin_start: String,
    pub tweets: u64,
    pub users: u64,
    pub tweets_expected: Option<f64>,
    pub tweets_variance: Option<f64>,
    pub users_expected: Option<f64>,
    pub users_variance: Option<f64>,
    pub tweets_flag: bool,
    pub users_flag: bool,
    pub intersect_flag: bool,
}

impl BinRecord {
    pub fn from_verdict(v: &BinVerdict) -> Self {
        BinRecord {
            place_id: v.obs.place_id.clone(),
            bin_index: v.obs.bin_index,
            bin_start: format_timestamp(v.obs.bin_start),
            tweets: v.obs.tweets,
            users: v.obs.users,
            tweets_expected: v.tweets.expected,
            tweets_variance: v.tweets.variance,
            users_expected: v.users.expected,
            users_variance: v.users.variance,
            tweets_flag: v.tweets.flagged,
            users_flag: v.users.flagged,
            intersect_flag: v.is_outlier(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("bin records always serialize")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, serde_json::Error> {
        serde_json::from_slice(bytes)
    }
}
