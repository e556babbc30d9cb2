//! Per-place binned message and distinct-user counts.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::codec::{fnv1a64, DecodeError, Decoder, Encoder};
use crate::message::GeoMessage;
use crate::time::{assign_bin, bin_start, BinSize, TimeError, Timestamp, DEFAULT_EPOCH};

pub const DEFAULT_TEXT_CAP: usize = 50_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SeriesError {
    #[error(transparent)]
    Time(#[from] TimeError),
    #[error("message for bin {found} arrived after bin {current} was opened")]
    BinRegression { current: i64, found: i64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeriesConfig {
    pub bin_size: BinSize,
    pub epoch: Timestamp,
    pub text_cap: usize,
}

impl SeriesConfig {
    pub fn new(bin_size: BinSize) -> Self {
        SeriesConfig { bin_size, epoch: DEFAULT_EPOCH, text_cap: DEFAULT_TEXT_CAP }
    }
}

/// Counts for one closed bin of one place.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinObservation {
    pub place_id: String,
    pub bin_index: i64,
    pub bin_start: Timestamp,
    pub tweets: u64,
    pub users: u64,
}

/// A closed bin together with the message texts it buffered.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClosedBin {
    pub obs: BinObservation,
    pub texts: Vec<String>,
    /// True when more messages arrived than the text cap and `texts` is a
    /// uniform sample.
    pub sampled: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct OpenBin {
    tweets: u64,
    users: BTreeSet<String>,
    texts: Vec<String>,
    rng: u64,
}

impl OpenBin {
    fn new(place_id: &str, bin_index: i64) -> Self {
        OpenBin {
            tweets: 0,
            users: BTreeSet::new(),
            texts: Vec::new(),
            rng: fnv1a64(place_id.as_bytes()) ^ (bin_index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15),
        }
    }

    fn next_random(&mut self) -> u64 {
        // splitmix64
        self.rng = self.rng.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.rng;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    fn push_text(&mut self, text: &str, cap: usize) {
        if self.texts.len() < cap {
            self.texts.push(text.into());
            return;
        }
        // Reservoir sampling: keep the new text with probability cap / tweets.
        let slot = self.next_random() % self.tweets;
        if (slot as usize) < cap {
            self.texts[slot as usize] = text.into();
        }
    }
}

/// The running series of one place. Bins are closed in order; empty bins are
/// emitted as zero observations so indices stay contiguous.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlaceSeries {
    place_id: String,
    config: SeriesConfig,
    /// Index of the open bin, or of the next bin to open when `open` is empty.
    current_bin: i64,
    open: Option<OpenBin>,
    emitted: u64,
}

impl PlaceSeries {
    /// A series whose first open bin is `first_bin`.
    pub fn new(place_id: impl Into<String>, config: SeriesConfig, first_bin: i64) -> Self {
        let place_id = place_id.into();
        let open = Some(OpenBin::new(&place_id, first_bin));
        PlaceSeries { place_id, config, current_bin: first_bin, open, emitted: 0 }
    }

    /// A series opened at the bin containing `t`.
    pub fn starting_at(place_id: impl Into<String>, config: SeriesConfig, t: Timestamp) -> Result<Self, SeriesError> {
        let first = assign_bin(t, config.bin_size, config.epoch)?;
        Ok(Self::new(place_id, config, first))
    }

    pub fn place_id(&self) -> &str {
        &self.place_id
    }

    pub fn config(&self) -> &SeriesConfig {
        &self.config
    }

    pub fn current_bin(&self) -> i64 {
        self.current_bin
    }

    pub fn is_open(&self) -> bool {
        self.open.is_some()
    }

    pub fn emitted(&self) -> u64 {
        self.emitted
    }

    pub fn open_tweets(&self) -> u64 {
        self.open.as_ref().map_or(0, |b| b.tweets)
    }

    /// Adds one message, closing and returning any bins it moves past.
    pub fn ingest_message(&mut self, msg: &GeoMessage) -> Result<Vec<ClosedBin>, SeriesError> {
        self.ingest(msg.created_at, &msg.user_id, &msg.text)
    }

    pub fn ingest(&mut self, created_at: Timestamp, user_id: &str, text: &str) -> Result<Vec<ClosedBin>, SeriesError> {
        let bin = assign_bin(created_at, self.config.bin_size, self.config.epoch)?;
        let in_open = self.open.is_some() && bin == self.current_bin;
        if bin < self.current_bin {
            return Err(SeriesError::BinRegression { current: self.current_bin, found: bin });
        }
        let closed = if in_open { Vec::new() } else { self.advance_to(bin) };
        let cap = self.config.text_cap;
        let open = self.open.as_mut().expect("advance_to opens the target bin");
        open.tweets += 1;
        if !open.users.contains(user_id) {
            open.users.insert(user_id.into());
        }
        open.push_text(text, cap);
        Ok(closed)
    }

    /// Closes every bin before `bin` (zero-filling gaps) and opens `bin`.
    fn advance_to(&mut self, bin: i64) -> Vec<ClosedBin> {
        let mut out = Vec::new();
        if let Some(open) = self.open.take() {
            out.push(self.close(self.current_bin, open));
            self.current_bin += 1;
        }
        while self.current_bin < bin {
            out.push(self.close(self.current_bin, OpenBin::new(&self.place_id, self.current_bin)));
            self.current_bin += 1;
        }
        self.open = Some(OpenBin::new(&self.place_id, bin));
        out
    }

    fn close(&mut self, bin_index: i64, open: OpenBin) -> ClosedBin {
        self.emitted += 1;
        ClosedBin {
            sampled: open.tweets as usize > open.texts.len(),
            obs: BinObservation {
                place_id: self.place_id.clone(),
                bin_index,
                bin_start: bin_start(bin_index, self.config.bin_size, self.config.epoch),
                tweets: open.tweets,
                users: open.users.len() as u64,
            },
            texts: open.texts,
        }
    }

    /// Closes the open bin. The next ingest opens a fresh one; an already
    /// flushed series yields `None`.
    pub fn flush(&mut self) -> Option<ClosedBin> {
        let open = self.open.take()?;
        let closed = self.close(self.current_bin, open);
        self.current_bin += 1;
        Some(closed)
    }

    pub fn encode(&self, enc: &mut Encoder) {
        enc.str(&self.place_id);
        enc.i64(self.config.bin_size.millis());
        enc.i64(self.config.epoch.millis());
        enc.len(self.config.text_cap);
        enc.i64(self.current_bin);
        enc.u64(self.emitted);
        match &self.open {
            None => enc.u8(0),
            Some(b) => {
                enc.u8(1);
                enc.u64(b.tweets);
                enc.u64(b.rng);
                enc.len(b.users.len());
                for u in &b.users {
                    enc.str(u);
                }
                enc.len(b.texts.len());
                for t in &b.texts {
                    enc.str(t);
                }
            }
        }
    }

    pub fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let place_id = dec.str()?;
        let bin_size = BinSize::from_millis(dec.i64()?).map_err(|_| DecodeError::Invalid("bin size"))?;
        let epoch = Timestamp(dec.i64()?);
        let text_cap = dec.len(0)?;
        let current_bin = dec.i64()?;
        let emitted = dec.u64()?;
        let open = match dec.u8()? {
            0 => None,
            1 => {
                let tweets = dec.u64()?;
                let rng = dec.u64()?;
                let n = dec.len(8)?;
                let users = (0..n).map(|_| dec.str()).collect::<Result<BTreeSet<_>, _>>()?;
                let n = dec.len(8)?;
                let texts = (0..n).map(|_| dec.str()).collect::<Result<Vec<_>, _>>()?;
                Some(OpenBin { tweets, users, texts, rng })
            }
            tag => return Err(DecodeError::BadTag { what: "open bin", tag }),
        };
        Ok(PlaceSeries { place_id, config: SeriesConfig { bin_size, epoch, text_cap }, current_bin, open, emitted })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;

    const MIN: i64 = 60_000;

    fn cfg() -> SeriesConfig {
        SeriesConfig::new(BinSize::from_minutes(10).unwrap())
    }

    fn at(minutes: i64) -> Timestamp {
        DEFAULT_EPOCH.saturating_add_millis(minutes * MIN)
    }

    #[test]
    fn three_messages_two_users() {
        let mut s = PlaceSeries::starting_at("sp", cfg(), at(0)).unwrap();
        for (m, u) in [(1, "a"), (2, "b"), (3, "a")] {
            assert!(s.ingest(at(m), u, "x").unwrap().is_empty());
        }
        let closed = s.flush().unwrap();
        assert_eq!((closed.obs.tweets, closed.obs.users), (3, 2));
        assert_eq!(closed.texts.len(), 3);
    }

    #[test]
    fn gap_fill_emits_zero_bins() {
        let mut s = PlaceSeries::starting_at("sp", cfg(), at(0)).unwrap();
        s.ingest(at(1), "a", "x").unwrap();
        s.ingest(at(2), "b", "x").unwrap();
        let closed = s.ingest(at(31), "c", "x").unwrap();
        let got: Vec<(i64, u64, u64)> = closed.iter().map(|c| (c.obs.bin_index, c.obs.tweets, c.obs.users)).collect();
        assert_eq!(got, [(0, 2, 2), (1, 0, 0), (2, 0, 0)]);
        assert_eq!(s.current_bin(), 3);
        assert_eq!(closed[1].obs.bin_start, at(10));
    }

    #[test]
    fn single_user_bin() {
        let mut s = PlaceSeries::starting_at("sp", cfg(), at(0)).unwrap();
        for m in 0..5 {
            s.ingest(at(m), "same", "x").unwrap();
        }
        let c = s.flush().unwrap();
        assert_eq!((c.obs.tweets, c.obs.users), (5, 1));
    }

    #[test]
    fn flush_cases() {
        let mut s = PlaceSeries::starting_at("sp", cfg(), at(0)).unwrap();
        let c = s.flush().unwrap();
        assert_eq!((c.obs.tweets, c.obs.users), (0, 0));
        assert!(s.flush().is_none());

        let mut s = PlaceSeries::starting_at("sp", cfg(), at(0)).unwrap();
        s.ingest(at(4), "a", "x").unwrap();
        let c = s.flush().unwrap();
        assert_eq!((c.obs.bin_index, c.obs.tweets, c.obs.users), (0, 1, 1));
        // next ingest opens a new bin without re-emitting bin 0
        assert!(s.ingest(at(12), "b", "y").unwrap().is_empty());
        let c = s.flush().unwrap();
        assert_eq!((c.obs.bin_index, c.obs.tweets), (1, 1));
    }

    #[test]
    fn regression_is_an_error() {
        let mut s = PlaceSeries::starting_at("sp", cfg(), at(20)).unwrap();
        assert_eq!(
            s.ingest(at(5), "a", "x").unwrap_err(),
            SeriesError::BinRegression { current: 2, found: 0 }
        );
        s.flush();
        assert!(s.ingest(at(25), "a", "x").is_err());
    }

    #[test]
    fn text_cap_samples_but_counts_exactly() {
        let config = SeriesConfig { text_cap: 10, ..cfg() };
        let mut s = PlaceSeries::starting_at("sp", config, at(0)).unwrap();
        for i in 0..1000 {
            s.ingest(at(1), &format!("u{}", i % 300), &format!("t{i}")).unwrap();
        }
        let c = s.flush().unwrap();
        assert_eq!((c.obs.tweets, c.obs.users), (1000, 300));
        assert_eq!(c.texts.len(), 10);
        assert!(c.sampled);
        // late texts must have a chance to land in the sample
        assert!(c.texts.iter().any(|t| t[1..].parse::<u32>().unwrap() >= 10));
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut s = PlaceSeries::starting_at("sp", cfg(), at(0)).unwrap();
        s.ingest(at(3), "a", "hello").unwrap();
        s.ingest(at(4), "b", "world").unwrap();
        let mut enc = Encoder::new();
        s.encode(&mut enc);
        let bytes = enc.finish();
        let mut dec = Decoder::new(&bytes);
        let restored = PlaceSeries::decode(&mut dec).unwrap();
        dec.finish().unwrap();
        assert_eq!(restored, s);
    }
}
