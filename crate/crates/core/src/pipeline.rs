//! End-to-end detection over located messages: route to places, bin, score
//! each closed bin, intersect, coalesce and describe.

use alloc::collections::{BTreeMap, VecDeque};
use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::codec::{fnv1a64, DecodeError, Decoder, Encoder};
use crate::describe::{describe_event, BinTexts, EventReport, StopwordList, DEFAULT_TOP_N};
use crate::detect::{BinVerdict, Coalescer, DetectError, DetectorConfig, EventWindow, PlaceDetector};
use crate::geo::LocatedMessage;
use crate::message::PlaceLevel;
use crate::series::{ClosedBin, PlaceSeries, SeriesConfig, SeriesError};
use crate::time::BinSize;

const STATE_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error("invalid pipeline config: {0}")]
    Config(&'static str),
    #[error("checkpoint was written with a different configuration (fingerprint {found:016x}, expected {expected:016x})")]
    ConfigMismatch { expected: u64, found: u64 },
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(#[from] DecodeError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StopwordPolicy {
    /// Bundled list picked from each place's country.
    ByCountry,
    Fixed(StopwordList),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub series: SeriesConfig,
    pub detector: DetectorConfig,
    pub place_level: PlaceLevel,
    pub top_n: usize,
    pub stopwords: StopwordPolicy,
}

impl PipelineConfig {
    pub fn new(bin_size: BinSize) -> Self {
        PipelineConfig {
            series: SeriesConfig::new(bin_size),
            detector: DetectorConfig::new(bin_size),
            place_level: PlaceLevel::City,
            top_n: DEFAULT_TOP_N,
            stopwords: StopwordPolicy::ByCountry,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.detector.validate()?;
        if self.series.bin_size != self.detector.bin_size {
            return Err(PipelineError::Config("series and detector bin sizes differ"));
        }
        if self.top_n < 1 {
            return Err(PipelineError::Config("top_n must be at least 1"));
        }
        if self.series.text_cap < 1 {
            return Err(PipelineError::Config("text cap must be at least 1"));
        }
        Ok(())
    }

    /// Hash of every setting that influences detection output.
    pub fn fingerprint(&self) -> u64 {
        let mut enc = Encoder::new();
        enc.i64(self.series.bin_size.millis());
        enc.i64(self.series.epoch.millis());
        enc.len(self.series.text_cap);
        enc.f64(self.detector.k);
        enc.u64(self.detector.warmup_bins);
        enc.u64(self.detector.max_gap);
        enc.opt_f64(self.detector.expected_peak);
        enc.f64(self.detector.tau_nov);
        enc.u8(self.place_level.rank() as u8);
        enc.len(self.top_n);
        match &self.stopwords {
            StopwordPolicy::ByCountry => enc.u8(0),
            StopwordPolicy::Fixed(list) => {
                enc.u8(1);
                enc.str(list.language());
                for t in list.iter() {
                    enc.str(t);
                }
            }
        }
        fnv1a64(&enc.finish())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PipelineStats {
    pub messages: u64,
    pub routed: u64,
    /// Messages with no place at all.
    pub unresolved: u64,
    /// Messages resolved, but not at the configured level.
    pub unrouted: u64,
    pub bins: u64,
    pub outlier_bins: u64,
    pub events: u64,
}

/// What one step of the pipeline produced.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PipelineOutput {
    pub verdicts: Vec<BinVerdict>,
    pub reports: Vec<EventReport>,
}

impl PipelineOutput {
    fn append(&mut self, other: PipelineOutput) {
        self.verdicts.extend(other.verdicts);
        self.reports.extend(other.reports);
    }
}

#[derive(Debug, Clone, PartialEq)]
struct PlaceState {
    name: String,
    country: Option<String>,
    series: PlaceSeries,
    detector: PlaceDetector,
    coalescer: Coalescer,
    buffers: VecDeque<BinTexts>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pipeline {
    config: PipelineConfig,
    places: BTreeMap<String, PlaceState>,
    stats: PipelineStats,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        Ok(Pipeline { config, places: BTreeMap::new(), stats: PipelineStats::default() })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn stats(&self) -> PipelineStats {
        self.stats
    }

    /// Open bin index of every tracked place.
    pub fn as_of_bins(&self) -> BTreeMap<String, i64> {
        self.places.iter().map(|(k, p)| (k.clone(), p.series.current_bin())).collect()
    }

    /// Feeds one message; messages must arrive in non-decreasing time order.
    pub fn push(&mut self, msg: &LocatedMessage) -> Result<PipelineOutput, PipelineError> {
        self.stats.messages += 1;
        if !msg.is_resolved() {
            self.stats.unresolved += 1;
            return Ok(PipelineOutput::default());
        }
        let Some(place) = msg.place_at(self.config.place_level) else {
            self.stats.unrouted += 1;
            return Ok(PipelineOutput::default());
        };
        self.stats.routed += 1;

        if !self.places.contains_key(&place.place_id) {
            let series = PlaceSeries::starting_at(place.place_id.clone(), self.config.series, msg.message.created_at)?;
            let state = PlaceState {
                name: place.name.clone(),
                country: msg.place_at(PlaceLevel::Country).map(|c| c.name.clone()),
                series,
                detector: PlaceDetector::new(place.place_id.clone(), self.config.detector)?,
                coalescer: Coalescer::new(self.config.detector.max_gap),
                buffers: VecDeque::new(),
            };
            self.places.insert(place.place_id.clone(), state);
        }
        let state = self.places.get_mut(&place.place_id).expect("inserted above");
        let closed = state.series.ingest_message(&msg.message)?;
        let mut out = PipelineOutput::default();
        for bin in closed {
            out.append(process_bin(&self.config, &mut self.stats, state, bin)?);
        }
        Ok(out)
    }

    /// Closes every open bin and window at end of stream.
    pub fn finish(&mut self) -> Result<PipelineOutput, PipelineError> {
        let mut out = PipelineOutput::default();
        for state in self.places.values_mut() {
            if let Some(bin) = state.series.flush() {
                out.append(process_bin(&self.config, &mut self.stats, state, bin)?);
            }
            if let Some(w) = state.coalescer.finish() {
                out.reports.push(describe(&self.config, &mut self.stats, state, &w));
                state.buffers.clear();
            }
        }
        Ok(out)
    }

    /// Runs a whole stream to completion.
    pub fn run<'a>(
        config: PipelineConfig,
        messages: impl IntoIterator<Item = &'a LocatedMessage>,
    ) -> Result<(PipelineOutput, PipelineStats), PipelineError> {
        let mut p = Pipeline::new(config)?;
        let mut out = PipelineOutput::default();
        for m in messages {
            out.append(p.push(m)?);
        }
        out.append(p.finish()?);
        Ok((out, p.stats))
    }

    /// Serializes the full detection state.
    pub fn checkpoint(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.u8(STATE_VERSION);
        enc.u64(self.config.fingerprint());
        let s = &self.stats;
        for v in [s.messages, s.routed, s.unresolved, s.unrouted, s.bins, s.outlier_bins, s.events] {
            enc.u64(v);
        }
        enc.len(self.places.len());
        for (key, p) in &self.places {
            enc.str(key);
            enc.str(&p.name);
            enc.opt_str(p.country.as_deref());
            p.series.encode(&mut enc);
            p.detector.encode(&mut enc);
            p.coalescer.encode(&mut enc);
            enc.len(p.buffers.len());
            for b in &p.buffers {
                enc.i64(b.bin_index);
                enc.bool(b.sampled);
                enc.len(b.texts.len());
                for t in &b.texts {
                    enc.str(t);
                }
            }
        }
        enc.finish()
    }

    /// Rebuilds a pipeline from [`Pipeline::checkpoint`] bytes. The
    /// configuration must match the one the checkpoint was written with.
    pub fn restore(config: PipelineConfig, bytes: &[u8]) -> Result<Self, PipelineError> {
        config.validate()?;
        let mut dec = Decoder::new(bytes);
        let version = dec.u8()?;
        if version != STATE_VERSION {
            return Err(DecodeError::Version { found: version, expected: STATE_VERSION }.into());
        }
        let found = dec.u64()?;
        let expected = config.fingerprint();
        if found != expected {
            return Err(PipelineError::ConfigMismatch { expected, found });
        }
        let mut counts = [0u64; 7];
        for c in counts.iter_mut() {
            *c = dec.u64()?;
        }
        let [messages, routed, unresolved, unrouted, bins, outlier_bins, events] = counts;
        let stats = PipelineStats { messages, routed, unresolved, unrouted, bins, outlier_bins, events };
        let n = dec.len(8)?;
        let mut places = BTreeMap::new();
        for _ in 0..n {
            let key = dec.str()?;
            let name = dec.str()?;
            let country = dec.opt_str()?;
            let series = PlaceSeries::decode(&mut dec)?;
            let detector = PlaceDetector::decode(&mut dec, config.detector)?;
            let coalescer = Coalescer::decode(&mut dec)?;
            let nb = dec.len(8)?;
            let mut buffers = VecDeque::with_capacity(nb);
            for _ in 0..nb {
                let bin_index = dec.i64()?;
                let sampled = dec.bool()?;
                let nt = dec.len(8)?;
                let texts = (0..nt).map(|_| dec.str()).collect::<Result<Vec<_>, _>>()?;
                buffers.push_back(BinTexts { bin_index, texts, sampled });
            }
            places.insert(key, PlaceState { name, country, series, detector, coalescer, buffers });
        }
        dec.finish()?;
        Ok(Pipeline { config, places, stats })
    }
}

fn process_bin(
    config: &PipelineConfig,
    stats: &mut PipelineStats,
    state: &mut PlaceState,
    bin: ClosedBin,
) -> Result<PipelineOutput, PipelineError> {
    let mut out = PipelineOutput::default();
    let index = bin.obs.bin_index;
    state.buffers.push_back(BinTexts { bin_index: index, texts: bin.texts, sampled: bin.sampled });
    let verdict = state.detector.detect_bin(&bin.obs)?;
    stats.bins += 1;
    let closed = match verdict.outlier() {
        Some(o) => {
            stats.outlier_bins += 1;
            state.coalescer.push_outlier(o)
        }
        None => state.coalescer.push_quiet(index),
    };
    if let Some(w) = closed {
        out.reports.push(describe(config, stats, state, &w));
    }
    match state.coalescer.open_window() {
        Some(w) => {
            let keep_from = w.start_bin;
            while state.buffers.front().is_some_and(|b| b.bin_index < keep_from) {
                state.buffers.pop_front();
            }
        }
        None => state.buffers.clear(),
    }
    out.verdicts.push(verdict);
    Ok(out)
}

fn describe(config: &PipelineConfig, stats: &mut PipelineStats, state: &PlaceState, w: &EventWindow) -> EventReport {
    stats.events += 1;
    let stopwords = match &config.stopwords {
        StopwordPolicy::Fixed(list) => list.clone(),
        StopwordPolicy::ByCountry => StopwordList::for_country(state.country.as_deref()),
    };
    let buffers: Vec<BinTexts> = state.buffers.iter().cloned().collect();
    describe_event(
        w,
        &state.name,
        &buffers,
        &stopwords,
        config.top_n,
        config.series.bin_size,
        config.series.epoch,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{LocationSource, ResolvedPlace};
    use crate::message::GeoMessage;
    use crate::time::DEFAULT_EPOCH;
    use alloc::format;
    use alloc::vec;

    const MIN: i64 = 60_000;

    fn located(minute: i64, user: &str, text: &str) -> LocatedMessage {
        LocatedMessage {
            message: GeoMessage {
                message_id: format!("{minute}-{user}"),
                user_id: user.into(),
                created_at: DEFAULT_EPOCH.saturating_add_millis(minute * MIN),
                coords: None,
                place_name: Some("Testville".into()),
                place_level: None,
                country: None,
                text: text.into(),
            },
            places: vec![ResolvedPlace { place_id: "tv".into(), name: "Testville".into(), level: PlaceLevel::City }],
            source: LocationSource::FeedName,
        }
    }

    fn config() -> PipelineConfig {
        let mut c = PipelineConfig::new(BinSize::from_minutes(10).unwrap());
        c.detector.warmup_bins = 20;
        c
    }

    /// Steady traffic of `per_bin` messages from distinct users in every bin,
    /// with a burst of new users in bin `spike_bin`.
    fn stream(bins: i64, per_bin: i64, spike_bin: i64, spike_users: bool) -> Vec<LocatedMessage> {
        let mut out = Vec::new();
        for b in 0..bins {
            let jitter = (b * 7) % 5 - 2;
            for i in 0..per_bin + jitter {
                out.push(located(b * 10 + i % 10, &format!("u{i}"), "tarde normal"));
            }
            if b == spike_bin {
                for i in 0..per_bin * 4 {
                    let user = if spike_users { format!("fan{i}") } else { "bot".into() };
                    out.push(located(b * 10 + 5, &user, "gol gol corinthians"));
                }
            }
        }
        out
    }

    #[test]
    fn empty_stream_yields_nothing() {
        let (out, stats) = Pipeline::run(config(), &[]).unwrap();
        assert!(out.reports.is_empty() && out.verdicts.is_empty());
        assert_eq!(stats.messages, 0);
    }

    #[test]
    fn spike_in_both_series_becomes_one_event() {
        let msgs = stream(60, 20, 40, true);
        let (out, stats) = Pipeline::run(config(), &msgs).unwrap();
        assert_eq!(out.reports.len(), 1, "{:?}", out.reports);
        let r = &out.reports[0];
        assert_eq!((r.start_bin, r.end_bin), (40, 40));
        assert_eq!(r.terms.terms().next(), Some("gol"));
        assert_eq!(stats.bins, 60);
        assert_eq!(stats.routed, msgs.len() as u64);
    }

    #[test]
    fn single_user_flood_is_suppressed() {
        let msgs = stream(60, 20, 40, false);
        let (out, _) = Pipeline::run(config(), &msgs).unwrap();
        assert!(out.reports.is_empty());
        let v = &out.verdicts[40];
        assert!(v.tweets.flagged && !v.users.flagged);
    }

    #[test]
    fn unresolved_and_unrouted_are_counted() {
        let mut m = located(0, "a", "x");
        m.places.clear();
        let mut c = located(0, "a", "x");
        c.places[0].level = PlaceLevel::Country;
        let (_, stats) = Pipeline::run(config(), &[m, c]).unwrap();
        assert_eq!((stats.unresolved, stats.unrouted, stats.routed), (1, 1, 0));
    }

    #[test]
    fn checkpoint_resume_matches_uninterrupted_run() {
        let msgs = stream(60, 20, 40, true);
        let (full, _) = Pipeline::run(config(), &msgs).unwrap();
        for split in [1, 300, msgs.len() / 2, 820, msgs.len() - 1] {
            let mut p = Pipeline::new(config()).unwrap();
            let mut out = PipelineOutput::default();
            for m in &msgs[..split] {
                out.append(p.push(m).unwrap());
            }
            let bytes = p.checkpoint();
            drop(p);
            let mut p = Pipeline::restore(config(), &bytes).unwrap();
            for m in &msgs[split..] {
                out.append(p.push(m).unwrap());
            }
            out.append(p.finish().unwrap());
            assert_eq!(out, full, "split at {split}");
        }
    }

    #[test]
    fn restore_rejects_changed_config() {
        let p = Pipeline::new(config()).unwrap();
        let bytes = p.checkpoint();
        let mut other = config();
        other.detector.k = 4.0;
        assert!(matches!(Pipeline::restore(other, &bytes), Err(PipelineError::ConfigMismatch { .. })));
        assert!(Pipeline::restore(config(), &bytes[..bytes.len() - 1]).is_err());
        let fresh = Pipeline::restore(config(), &bytes).unwrap();
        assert_eq!(fresh, p);
    }

    #[test]
    fn distinct_configs_have_distinct_fingerprints() {
        let a = config();
        let mut b = config();
        b.detector.max_gap = 2;
        let mut c = config();
        c.stopwords = StopwordPolicy::Fixed(StopwordList::builtin("pt"));
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_ne!(a.fingerprint(), c.fingerprint());
        assert_eq!(a.fingerprint(), config().fingerprint());
    }
}
