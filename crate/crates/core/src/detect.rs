//! Per-place outlier detection over the tweets and users series.
//!
//! Each closed bin is scored against both models before they learn it
//! (predict-then-learn, unconditionally). A bin is an outlier only when both
//! series sit above their conditional mean by more than `k` conditional
//! standard deviations. Outlier bins separated by at most `max_gap` quiet
//! bins coalesce into one event window.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::codec::{DecodeError, Decoder, Encoder};
use crate::igmn::{encode_input, time_features, IgmnError, IgmnModel, IgmnParams};
use crate::series::BinObservation;
use crate::time::{BinSize, Timestamp};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DetectError {
    #[error("bin {found} does not follow bin {expected} for place {place_id:?}")]
    NonContiguousBin { place_id: String, expected: i64, found: i64 },
    #[error("invalid detector config: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Model(#[from] IgmnError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorConfig {
    /// Deviation threshold in conditional standard deviations.
    pub k: f64,
    pub warmup_bins: u64,
    /// Quiet bins allowed inside one event window.
    pub max_gap: u64,
    pub bin_size: BinSize,
    /// Expected peak value of the series. When unset the value scale is
    /// taken from the warmup bins.
    pub expected_peak: Option<f64>,
    pub tau_nov: f64,
}

impl DetectorConfig {
    /// Defaults: k = 3, one day of warmup, max_gap = 1.
    pub fn new(bin_size: BinSize) -> Self {
        DetectorConfig {
            k: 3.0,
            warmup_bins: bin_size.bins_per_day().unwrap_or(144),
            max_gap: 1,
            bin_size,
            expected_peak: None,
            tau_nov: crate::igmn::DEFAULT_TAU_NOV,
        }
    }

    pub fn validate(&self) -> Result<(), DetectError> {
        if !(self.k > 0.0 && self.k.is_finite()) {
            return Err(DetectError::InvalidConfig("k must be positive"));
        }
        if self.warmup_bins < 1 {
            return Err(DetectError::InvalidConfig("warmup_bins must be at least 1"));
        }
        if let Some(p) = self.expected_peak {
            if !(p > 0.0 && p.is_finite()) {
                return Err(DetectError::InvalidConfig("expected_peak must be positive"));
            }
        }
        if !(self.tau_nov > 0.0 && self.tau_nov < 1.0) {
            return Err(DetectError::InvalidConfig("tau_nov must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum SeriesKind {
    Tweets,
    Users,
}

/// Outcome for one series of one bin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesVerdict {
    pub observed: f64,
    /// Conditional mean; `None` while warming up.
    pub expected: Option<f64>,
    pub variance: Option<f64>,
    pub flagged: bool,
}

impl SeriesVerdict {
    /// `(observed - expected) / sqrt(variance)`, or 0 while warming up.
    pub fn score(&self) -> f64 {
        match (self.expected, self.variance) {
            (Some(m), Some(v)) => (self.observed - m) / libm::sqrt(v),
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinVerdict {
    pub obs: BinObservation,
    pub tweets: SeriesVerdict,
    pub users: SeriesVerdict,
}

impl BinVerdict {
    pub fn is_outlier(&self) -> bool {
        intersect_outliers(self.tweets.flagged, self.users.flagged)
    }

    pub fn outlier(&self) -> Option<OutlierBin> {
        self.is_outlier().then(|| OutlierBin {
            place_id: self.obs.place_id.clone(),
            bin_index: self.obs.bin_index,
            bin_start: self.obs.bin_start,
            tweets_observed: self.tweets.observed,
            tweets_expected: self.tweets.expected.unwrap_or(0.0),
            users_observed: self.users.observed,
            users_expected: self.users.expected.unwrap_or(0.0),
            score: self.tweets.score().max(self.users.score()),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutlierBin {
    pub place_id: String,
    pub bin_index: i64,
    pub bin_start: Timestamp,
    pub tweets_observed: f64,
    pub tweets_expected: f64,
    pub users_observed: f64,
    pub users_expected: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventWindow {
    pub place_id: String,
    pub start_bin: i64,
    pub end_bin: i64,
    pub peak_score: f64,
    pub bins: Vec<OutlierBin>,
}

impl EventWindow {
    fn open(bin: OutlierBin) -> Self {
        EventWindow {
            place_id: bin.place_id.clone(),
            start_bin: bin.bin_index,
            end_bin: bin.bin_index,
            peak_score: bin.score,
            bins: alloc::vec![bin],
        }
    }

    fn extend(&mut self, bin: OutlierBin) {
        self.end_bin = bin.bin_index;
        self.peak_score = self.peak_score.max(bin.score);
        self.bins.push(bin);
    }
}

/// A bin is an outlier only when both series flag it above baseline.
pub fn intersect_outliers(tweets_flag: bool, users_flag: bool) -> bool {
    tweets_flag && users_flag
}

/// Set form of [`intersect_outliers`] over bin indices.
pub fn intersect_outlier_sets(tweets: &BTreeSet<i64>, users: &BTreeSet<i64>) -> BTreeSet<i64> {
    tweets.intersection(users).copied().collect()
}

/// Merges outlier bins (sorted by index) whose gaps are at most `max_gap`.
pub fn coalesce(bins: &[OutlierBin], max_gap: u64) -> Vec<EventWindow> {
    let mut c = Coalescer::new(max_gap);
    let mut out: Vec<EventWindow> = bins.iter().cloned().filter_map(|b| c.push_outlier(b)).collect();
    out.extend(c.finish());
    out
}

/// Streaming form of [`coalesce`].
#[derive(Debug, Clone, PartialEq)]
pub struct Coalescer {
    max_gap: u64,
    open: Option<EventWindow>,
}

impl Coalescer {
    pub fn new(max_gap: u64) -> Self {
        Coalescer { max_gap, open: None }
    }

    pub fn open_window(&self) -> Option<&EventWindow> {
        self.open.as_ref()
    }

    fn gap_exceeded(&self, bin_index: i64) -> bool {
        self.open
            .as_ref()
            .is_some_and(|w| bin_index - w.end_bin - 1 > self.max_gap as i64)
    }

    /// Adds an outlier bin; returns a window that can no longer grow.
    pub fn push_outlier(&mut self, bin: OutlierBin) -> Option<EventWindow> {
        if self.open.is_some() && !self.gap_exceeded(bin.bin_index) {
            self.open.as_mut().unwrap().extend(bin);
            return None;
        }
        self.open.replace(EventWindow::open(bin))
    }

    /// Notes a quiet bin; returns the open window once the gap closes it.
    pub fn push_quiet(&mut self, bin_index: i64) -> Option<EventWindow> {
        // A later outlier at bin_index + 1 would leave a gap of bin_index - end.
        if self.open.as_ref().is_some_and(|w| bin_index - w.end_bin >= self.max_gap as i64 + 1) {
            return self.open.take();
        }
        None
    }

    pub fn finish(&mut self) -> Option<EventWindow> {
        self.open.take()
    }

    pub fn encode(&self, enc: &mut Encoder) {
        enc.u64(self.max_gap);
        match &self.open {
            None => enc.u8(0),
            Some(w) => {
                enc.u8(1);
                enc.str(&w.place_id);
                enc.i64(w.start_bin);
                enc.i64(w.end_bin);
                enc.f64(w.peak_score);
                enc.len(w.bins.len());
                for b in &w.bins {
                    encode_outlier(b, enc);
                }
            }
        }
    }

    pub fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let max_gap = dec.u64()?;
        let open = match dec.u8()? {
            0 => None,
            1 => {
                let place_id = dec.str()?;
                let start_bin = dec.i64()?;
                let end_bin = dec.i64()?;
                let peak_score = dec.f64()?;
                let n = dec.len(8)?;
                let bins = (0..n).map(|_| decode_outlier(dec)).collect::<Result<Vec<_>, _>>()?;
                Some(EventWindow { place_id, start_bin, end_bin, peak_score, bins })
            }
            tag => return Err(DecodeError::BadTag { what: "window", tag }),
        };
        Ok(Coalescer { max_gap, open })
    }
}

fn encode_outlier(b: &OutlierBin, enc: &mut Encoder) {
    enc.str(&b.place_id);
    enc.i64(b.bin_index);
    enc.i64(b.bin_start.millis());
    enc.f64(b.tweets_observed);
    enc.f64(b.tweets_expected);
    enc.f64(b.users_observed);
    enc.f64(b.users_expected);
    enc.f64(b.score);
}

fn decode_outlier(dec: &mut Decoder<'_>) -> Result<OutlierBin, DecodeError> {
    Ok(OutlierBin {
        place_id: dec.str()?,
        bin_index: dec.i64()?,
        bin_start: Timestamp(dec.i64()?),
        tweets_observed: dec.f64()?,
        tweets_expected: dec.f64()?,
        users_observed: dec.f64()?,
        users_expected: dec.f64()?,
        score: dec.f64()?,
    })
}

#[derive(Debug, Clone, PartialEq)]
enum Models {
    /// Observations held back until the value scale is known.
    Warmup(Vec<(Timestamp, f64, f64)>),
    Ready { tweets: IgmnModel, users: IgmnModel },
}

/// Detection state of one place: the two series models plus warmup
/// bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaceDetector {
    place_id: String,
    config: DetectorConfig,
    next_bin: Option<i64>,
    bins_seen: u64,
    models: Models,
}

impl PlaceDetector {
    pub fn new(place_id: impl Into<String>, config: DetectorConfig) -> Result<Self, DetectError> {
        config.validate()?;
        let models = match config.expected_peak {
            Some(peak) => Models::Ready {
                tweets: IgmnModel::new(seasonal_params(peak, config.tau_nov)?),
                users: IgmnModel::new(seasonal_params(peak, config.tau_nov)?),
            },
            None => Models::Warmup(Vec::new()),
        };
        Ok(PlaceDetector { place_id: place_id.into(), config, next_bin: None, bins_seen: 0, models })
    }

    pub fn place_id(&self) -> &str {
        &self.place_id
    }

    pub fn bins_seen(&self) -> u64 {
        self.bins_seen
    }

    pub fn models(&self) -> Option<(&IgmnModel, &IgmnModel)> {
        match &self.models {
            Models::Ready { tweets, users } => Some((tweets, users)),
            Models::Warmup(_) => None,
        }
    }

    /// Scores `obs` against both models, then teaches it to them.
    pub fn detect_bin(&mut self, obs: &BinObservation) -> Result<BinVerdict, DetectError> {
        if let Some(expected) = self.next_bin {
            if obs.bin_index != expected {
                return Err(DetectError::NonContiguousBin {
                    place_id: self.place_id.clone(),
                    expected,
                    found: obs.bin_index,
                });
            }
        }
        let tweets = obs.tweets as f64;
        let users = obs.users as f64;
        let armed = self.bins_seen >= self.config.warmup_bins;

        let verdict = match &mut self.models {
            Models::Warmup(buffer) => {
                buffer.push((obs.bin_start, tweets, users));
                if buffer.len() as u64 >= self.config.warmup_bins {
                    let buffered = core::mem::take(buffer);
                    self.models = train_from_warmup(&buffered, self.config.tau_nov)?;
                }
                BinVerdict { obs: obs.clone(), tweets: quiet(tweets), users: quiet(users) }
            }
            Models::Ready { tweets: tm, users: um } => {
                let z = time_features(obs.bin_start);
                let k = self.config.k;
                let tv = judge(tm, &z, tweets, k, armed)?;
                let uv = judge(um, &z, users, k, armed)?;
                tm.learn(&encode_input(obs.bin_start, tweets))?;
                um.learn(&encode_input(obs.bin_start, users))?;
                BinVerdict { obs: obs.clone(), tweets: tv, users: uv }
            }
        };
        self.bins_seen += 1;
        self.next_bin = Some(obs.bin_index + 1);
        Ok(verdict)
    }

    pub fn encode(&self, enc: &mut Encoder) {
        enc.str(&self.place_id);
        match self.next_bin {
            Some(b) => {
                enc.u8(1);
                enc.i64(b);
            }
            None => enc.u8(0),
        }
        enc.u64(self.bins_seen);
        match &self.models {
            Models::Warmup(buf) => {
                enc.u8(0);
                enc.len(buf.len());
                for (t, a, b) in buf {
                    enc.i64(t.millis());
                    enc.f64(*a);
                    enc.f64(*b);
                }
            }
            Models::Ready { tweets, users } => {
                enc.u8(1);
                tweets.encode(enc);
                users.encode(enc);
            }
        }
    }

    pub fn decode(dec: &mut Decoder<'_>, config: DetectorConfig) -> Result<Self, DetectError> {
        let place_id = dec.str().map_err(IgmnError::from)?;
        let next_bin = match dec.u8().map_err(IgmnError::from)? {
            0 => None,
            1 => Some(dec.i64().map_err(IgmnError::from)?),
            tag => return Err(IgmnError::from(DecodeError::BadTag { what: "next bin", tag }).into()),
        };
        let bins_seen = dec.u64().map_err(IgmnError::from)?;
        let models = match dec.u8().map_err(IgmnError::from)? {
            0 => {
                let n = dec.len(24).map_err(IgmnError::from)?;
                let mut buf = Vec::with_capacity(n);
                for _ in 0..n {
                    let t = Timestamp(dec.i64().map_err(IgmnError::from)?);
                    let a = dec.f64().map_err(IgmnError::from)?;
                    let b = dec.f64().map_err(IgmnError::from)?;
                    buf.push((t, a, b));
                }
                Models::Warmup(buf)
            }
            1 => Models::Ready { tweets: IgmnModel::decode(dec)?, users: IgmnModel::decode(dec)? },
            tag => return Err(IgmnError::from(DecodeError::BadTag { what: "models", tag }).into()),
        };
        Ok(PlaceDetector { place_id, config, next_bin, bins_seen, models })
    }
}

fn quiet(observed: f64) -> SeriesVerdict {
    SeriesVerdict { observed, expected: None, variance: None, flagged: false }
}

fn judge(model: &IgmnModel, z: &[f64], observed: f64, k: f64, armed: bool) -> Result<SeriesVerdict, IgmnError> {
    let p = model.predict(z)?;
    let flagged = armed && observed > p.mean + k * p.std_dev();
    Ok(SeriesVerdict { observed, expected: Some(p.mean), variance: Some(p.variance), flagged })
}

fn seasonal_params(range: f64, tau_nov: f64) -> Result<IgmnParams, IgmnError> {
    IgmnParams::seasonal(range)?.with_tau(tau_nov)
}

/// Value scale from the warmup day: its range, or its magnitude when flat.
fn value_range(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let lo = values.clone().fold(f64::INFINITY, f64::min);
    let hi = values.fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    if range > 0.0 {
        range
    } else {
        hi.abs().max(1.0)
    }
}

fn train_from_warmup(buffer: &[(Timestamp, f64, f64)], tau_nov: f64) -> Result<Models, IgmnError> {
    let mut tweets = IgmnModel::new(seasonal_params(value_range(buffer.iter().map(|b| b.1)), tau_nov)?);
    let mut users = IgmnModel::new(seasonal_params(value_range(buffer.iter().map(|b| b.2)), tau_nov)?);
    for &(t, a, b) in buffer {
        tweets.learn(&encode_input(t, a))?;
        users.learn(&encode_input(t, b))?;
    }
    Ok(Models::Ready { tweets, users })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::time::{bin_start, DEFAULT_EPOCH};

    fn obs(bin: i64, tweets: u64, users: u64) -> BinObservation {
        let size = BinSize::from_minutes(10).unwrap();
        BinObservation {
            place_id: "p".into(),
            bin_index: bin,
            bin_start: bin_start(bin, size, DEFAULT_EPOCH),
            tweets,
            users,
        }
    }

    fn outlier(bin: i64) -> OutlierBin {
        OutlierBin {
            place_id: "p".into(),
            bin_index: bin,
            bin_start: Timestamp(0),
            tweets_observed: 0.0,
            tweets_expected: 0.0,
            users_observed: 0.0,
            users_expected: 0.0,
            score: bin as f64,
        }
    }

    fn config() -> DetectorConfig {
        DetectorConfig::new(BinSize::from_minutes(10).unwrap())
    }

    #[test]
    fn defaults() {
        let c = config();
        assert_eq!((c.k, c.warmup_bins, c.max_gap), (3.0, 144, 1));
        assert_eq!(DetectorConfig::new(BinSize::from_minutes(1).unwrap()).warmup_bins, 1440);
        assert!(DetectorConfig { k: 0.0, ..c }.validate().is_err());
        assert!(DetectorConfig { warmup_bins: 0, ..c }.validate().is_err());
    }

    #[test]
    fn warmup_never_flags() {
        let mut d = PlaceDetector::new("p", config()).unwrap();
        for b in 0..144 {
            let v = if b == 100 { 10_000 } else { 10 };
            let verdict = d.detect_bin(&obs(b, v, v)).unwrap();
            assert!(!verdict.tweets.flagged && !verdict.users.flagged);
            assert!(!verdict.is_outlier());
        }
        assert!(d.models().is_some());
    }

    #[test]
    fn constant_series_matches_itself() {
        let mut d = PlaceDetector::new("p", config()).unwrap();
        for b in 0..300 {
            d.detect_bin(&obs(b, 100, 100)).unwrap();
        }
        let v = d.detect_bin(&obs(300, 100, 100)).unwrap();
        assert!(!v.tweets.flagged && !v.is_outlier());
        assert!((v.tweets.expected.unwrap() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn threshold_follows_predicted_deviation() {
        let cfg = config();
        let mut d = PlaceDetector::new("p", cfg).unwrap();
        for b in 0..300 {
            d.detect_bin(&obs(b, 100, 100)).unwrap();
        }
        let (tm, _) = d.models().unwrap();
        let p = tm.predict(&time_features(obs(300, 0, 0).bin_start)).unwrap();
        let threshold = p.mean + cfg.k * p.std_dev();
        let above = libm::floor(threshold) as u64 + 1;
        let below = libm::ceil(threshold) as u64 - 1;

        let mut hit = d.clone();
        let v = hit.detect_bin(&obs(300, above, 100)).unwrap();
        assert!(v.tweets.flagged && !v.users.flagged && !v.is_outlier());

        let v = d.clone().detect_bin(&obs(300, below, 100)).unwrap();
        assert!(!v.tweets.flagged);
    }

    #[test]
    fn below_baseline_is_ignored() {
        let mut d = PlaceDetector::new("p", config()).unwrap();
        for b in 0..300 {
            d.detect_bin(&obs(b, 100, 80)).unwrap();
        }
        let v = d.detect_bin(&obs(300, 0, 0)).unwrap();
        assert!(!v.tweets.flagged && !v.users.flagged);
        assert!(v.tweets.score() < 0.0);
    }

    #[test]
    fn contiguity_is_enforced() {
        let mut d = PlaceDetector::new("p", config()).unwrap();
        d.detect_bin(&obs(5, 1, 1)).unwrap();
        assert!(matches!(
            d.detect_bin(&obs(7, 1, 1)),
            Err(DetectError::NonContiguousBin { expected: 6, found: 7, .. })
        ));
    }

    #[test]
    fn intersection() {
        assert!(intersect_outliers(true, true));
        assert!(!intersect_outliers(true, false));
        assert!(!intersect_outliers(false, true));
        assert!(!intersect_outliers(false, false));
        let t: BTreeSet<i64> = [3, 7, 9].into();
        let u: BTreeSet<i64> = [7, 9, 12].into();
        assert_eq!(intersect_outlier_sets(&t, &u), BTreeSet::from([7, 9]));
    }

    #[test]
    fn coalescing() {
        let w = coalesce(&[outlier(10), outlier(11), outlier(12)], 1);
        assert_eq!(w.len(), 1);
        assert_eq!((w[0].start_bin, w[0].end_bin, w[0].peak_score), (10, 12, 12.0));

        let w = coalesce(&[outlier(10), outlier(12)], 1);
        assert_eq!(w.len(), 1);
        assert_eq!((w[0].start_bin, w[0].end_bin), (10, 12));

        let w = coalesce(&[outlier(10), outlier(12)], 0);
        assert_eq!(w.len(), 2);

        assert!(coalesce(&[], 1).is_empty());
    }

    #[test]
    fn streaming_coalescer_closes_on_gap() {
        let mut c = Coalescer::new(1);
        assert!(c.push_outlier(outlier(10)).is_none());
        assert!(c.push_quiet(11).is_none());
        let w = c.push_quiet(12).unwrap();
        assert_eq!((w.start_bin, w.end_bin), (10, 10));
        assert!(c.finish().is_none());

        let mut c = Coalescer::new(0);
        c.push_outlier(outlier(1));
        let w = c.push_outlier(outlier(3)).unwrap();
        assert_eq!(w.end_bin, 1);
        assert_eq!(c.finish().unwrap().start_bin, 3);
    }

    #[test]
    fn checkpoint_round_trip() {
        for n in [10, 200] {
            let mut d = PlaceDetector::new("p", config()).unwrap();
            for b in 0..n {
                d.detect_bin(&obs(b, 50 + (b % 13) as u64, 40)).unwrap();
            }
            let mut enc = Encoder::new();
            d.encode(&mut enc);
            let bytes = enc.finish();
            let mut dec = Decoder::new(&bytes);
            let restored = PlaceDetector::decode(&mut dec, config()).unwrap();
            dec.finish().unwrap();
            assert_eq!(restored, d);
        }
    }
}
