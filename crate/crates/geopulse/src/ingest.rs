//! JSONL message ingest: parsing, validation, bounded reordering and replay.
//!
//! Input records look like
//!
//! ```text
//! {"id": "1", "user_id": "u9", "created_at": "2012-02-21T18:04:11Z",
//!  "lat": -23.55, "lon": -46.63, "place_name": null, "text": "bom dia"}
//! ```
//!
//! Unknown fields are ignored. A record needs coordinates, a place name, or
//! both. Messages leave the stream in non-decreasing `created_at` order; a
//! message older than the watermark (latest timestamp seen minus the reorder
//! window) is dropped and counted.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fs::File;
use std::io::{self, BufRead, BufReader};
use std::net::TcpStream;
use std::thread;
use std::time::{Duration, Instant};

use chrono::{DateTime, SecondsFormat, Utc};
use geopulse_core::codec::{DecodeError, Decoder, Encoder};
use geopulse_core::message::{MessageError, DEFAULT_MAX_SKEW_MS};
use geopulse_core::{Coord, GeoMessage, PlaceLevel, Timestamp};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub const DEFAULT_REORDER_WINDOW_MS: i64 = 60_000;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("malformed record: {0}")]
    MalformedRecord(String),
    #[error(transparent)]
    Invalid(#[from] MessageError),
    #[error("source {uri} unavailable: {source}")]
    SourceUnavailable { uri: String, source: io::Error },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl IngestError {
    /// The contract-level error class of a rejected record.
    pub fn kind(&self) -> &'static str {
        match self {
            IngestError::MalformedRecord(_) => "MalformedRecord",
            IngestError::Invalid(MessageError::MissingField(_)) => "MissingField",
            IngestError::Invalid(MessageError::NoLocation) => "NoLocation",
            IngestError::Invalid(MessageError::CoordOutOfRange { .. }) => "CoordOutOfRange",
            IngestError::Invalid(MessageError::TextTooLong(_)) => "TextTooLong",
            IngestError::Invalid(MessageError::FutureTimestamp { .. }) => "FutureTimestamp",
            IngestError::SourceUnavailable { .. } => "SourceUnavailable",
            IngestError::Io(_) => "Io",
        }
    }
}

#[derive(Debug, Deserialize)]
struct RawRecord {
    id: Option<Value>,
    user_id: Option<Value>,
    created_at: Option<String>,
    lat: Option<f64>,
    lon: Option<f64>,
    place_name: Option<String>,
    place_level: Option<String>,
    country: Option<String>,
    text: Option<String>,
}

#[derive(Debug, Serialize)]
struct OutRecord<'a> {
    id: &'a str,
    user_id: &'a str,
    created_at: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    lat: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    place_name: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    place_level: Option<&'static str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    country: Option<&'a str>,
    text: &'a str,
}

fn id_string(v: Option<Value>, field: &'static str) -> Result<String, IngestError> {
    match v {
        Some(Value::String(s)) if !s.is_empty() => Ok(s),
        Some(Value::Number(n)) => Ok(n.to_string()),
        None | Some(Value::Null) | Some(Value::String(_)) => Err(MessageError::MissingField(field).into()),
        Some(other) => Err(IngestError::MalformedRecord(format!("`{field}` must be a string, got {other}"))),
    }
}

pub fn parse_timestamp(s: &str) -> Result<Timestamp, IngestError> {
    DateTime::parse_from_rfc3339(s.trim())
        .map(|t| Timestamp(t.timestamp_millis()))
        .map_err(|e| IngestError::MalformedRecord(format!("bad timestamp {s:?}: {e}")))
}

pub fn format_timestamp(t: Timestamp) -> String {
    DateTime::<Utc>::from_timestamp_millis(t.millis())
        .map(|d| d.to_rfc3339_opts(SecondsFormat::AutoSi, true))
        .unwrap_or_else(|| t.millis().to_string())
}

/// Parses and validates one JSONL record. `now` bounds future timestamps;
/// `None` disables that check.
pub fn parse_message(line: &str, now: Option<Timestamp>, max_skew_ms: i64) -> Result<GeoMessage, IngestError> {
    let raw: RawRecord = serde_json::from_str(line).map_err(|e| IngestError::MalformedRecord(e.to_string()))?;
    let message_id = id_string(raw.id, "id")?;
    let user_id = id_string(raw.user_id, "user_id")?;
    let created_at = parse_timestamp(&raw.created_at.ok_or(MessageError::MissingField("created_at"))?)?;
    let text = raw.text.ok_or(MessageError::MissingField("text"))?;
    let coords = match (raw.lat, raw.lon) {
        (Some(lat), Some(lon)) => Some(Coord::new(lat, lon)?),
        (None, None) => None,
        (Some(_), None) => return Err(MessageError::MissingField("lon").into()),
        (None, Some(_)) => return Err(MessageError::MissingField("lat").into()),
    };
    let place_level = raw
        .place_level
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.parse::<PlaceLevel>())
        .transpose()
        .map_err(|e| IngestError::MalformedRecord(e.to_string()))?;
    let msg = GeoMessage {
        message_id,
        user_id,
        created_at,
        coords,
        place_name: raw.place_name.filter(|s| !s.trim().is_empty()),
        place_level,
        country: raw.country.filter(|s| !s.trim().is_empty()),
        text,
    };
    msg.validate(now, max_skew_ms)?;
    Ok(msg)
}

/// Serializes a message back to the input schema.
pub fn to_json_line(msg: &GeoMessage) -> String {
    let rec = OutRecord {
        id: &msg.message_id,
        user_id: &msg.user_id,
        created_at: format_timestamp(msg.created_at),
        lat: msg.coords.map(|c| c.lat),
        lon: msg.coords.map(|c| c.lon),
        place_name: msg.place_name.as_deref(),
        place_level: msg.place_level.map(PlaceLevel::as_str),
        country: msg.country.as_deref(),
        text: &msg.text,
    };
    serde_json::to_string(&rec).expect("message records always serialize")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct IngestStats {
    pub lines_read: u64,
    /// Lines that failed parsing or validation.
    pub invalid: u64,
    /// Records whose id repeated inside the reorder window.
    pub duplicates: u64,
    pub late_dropped: u64,
    pub yielded: u64,
}

impl IngestStats {
    /// Invalid lines plus duplicates.
    pub fn rejected(&self) -> u64 {
        self.invalid + self.duplicates
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Admission {
    Accepted,
    Late,
    Duplicate,
}

/// Bounded reordering buffer with a watermark of `max_seen - window`.
#[derive(Debug, Clone, PartialEq)]
pub struct Reorderer {
    window_ms: i64,
    max_seen: Option<i64>,
    seq: u64,
    pending: BTreeMap<(i64, u64), GeoMessage>,
    ids: BTreeMap<String, i64>,
    id_order: BTreeSet<(i64, String)>,
}

impl Reorderer {
    pub fn new(window_ms: i64) -> Self {
        Reorderer {
            window_ms: window_ms.max(0),
            max_seen: None,
            seq: 0,
            pending: BTreeMap::new(),
            ids: BTreeMap::new(),
            id_order: BTreeSet::new(),
        }
    }

    pub fn watermark(&self) -> Option<i64> {
        self.max_seen.map(|m| m - self.window_ms)
    }

    pub fn buffered(&self) -> usize {
        self.pending.len()
    }

    /// Offers one message; released messages are appended to `out` in order.
    pub fn push(&mut self, msg: GeoMessage, out: &mut Vec<GeoMessage>) -> Admission {
        let t = msg.created_at.millis();
        if self.watermark().is_some_and(|w| t < w) {
            return Admission::Late;
        }
        if self.ids.contains_key(&msg.message_id) {
            return Admission::Duplicate;
        }
        self.ids.insert(msg.message_id.clone(), t);
        self.id_order.insert((t, msg.message_id.clone()));
        self.pending.insert((t, self.seq), msg);
        self.seq += 1;
        self.max_seen = Some(self.max_seen.map_or(t, |m| m.max(t)));

        let w = self.watermark().expect("set above");
        while let Some(entry) = self.pending.first_entry() {
            if entry.key().0 > w {
                break;
            }
            out.push(entry.remove());
        }
        while let Some(first) = self.id_order.first() {
            if first.0 >= w {
                break;
            }
            let (_, id) = self.id_order.pop_first().expect("non-empty");
            self.ids.remove(&id);
        }
        Admission::Accepted
    }

    /// Releases everything still buffered.
    pub fn flush(&mut self, out: &mut Vec<GeoMessage>) {
        out.extend(std::mem::take(&mut self.pending).into_values());
    }

    fn encode(&self, enc: &mut Encoder) {
        enc.i64(self.window_ms);
        match self.max_seen {
            Some(m) => {
                enc.u8(1);
                enc.i64(m);
            }
            None => enc.u8(0),
        }
        enc.u64(self.seq);
        enc.len(self.pending.len());
        for ((t, s), m) in &self.pending {
            enc.i64(*t);
            enc.u64(*s);
            m.encode(enc);
        }
        enc.len(self.ids.len());
        for (id, t) in &self.ids {
            enc.str(id);
            enc.i64(*t);
        }
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let window_ms = dec.i64()?;
        let max_seen = match dec.u8()? {
            0 => None,
            1 => Some(dec.i64()?),
            tag => return Err(DecodeError::BadTag { what: "watermark", tag }),
        };
        let seq = dec.u64()?;
        let mut pending = BTreeMap::new();
        for _ in 0..dec.len(16)? {
            let t = dec.i64()?;
            let s = dec.u64()?;
            pending.insert((t, s), GeoMessage::decode(dec)?);
        }
        let mut ids = BTreeMap::new();
        let mut id_order = BTreeSet::new();
        for _ in 0..dec.len(16)? {
            let id = dec.str()?;
            let t = dec.i64()?;
            id_order.insert((t, id.clone()));
            ids.insert(id, t);
        }
        Ok(Reorderer { window_ms, max_seen, seq, pending, ids, id_order })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceKind {
    FileReplay,
    Socket,
}

/// Where messages come from: a JSONL file (`PATH`, `-` for stdin) or a
/// line-oriented TCP feed (`tcp://host:port`).
#[derive(Debug, Clone, PartialEq)]
pub struct StreamSource {
    pub kind: SourceKind,
    pub uri: String,
    /// Replay speed multiplier; 0 replays as fast as possible.
    pub replay_rate: f64,
}

impl StreamSource {
    pub fn parse(uri: &str, replay_rate: f64) -> Self {
        let kind = if uri.starts_with("tcp://") { SourceKind::Socket } else { SourceKind::FileReplay };
        StreamSource { kind, uri: uri.to_string(), replay_rate: replay_rate.max(0.0) }
    }

    pub fn open(&self) -> Result<Box<dyn BufRead + Send>, IngestError> {
        let unavailable = |source| IngestError::SourceUnavailable { uri: self.uri.clone(), source };
        match self.kind {
            SourceKind::FileReplay if self.uri == "-" => Ok(Box::new(BufReader::new(io::stdin()))),
            SourceKind::FileReplay => Ok(Box::new(BufReader::new(File::open(&self.uri).map_err(unavailable)?))),
            SourceKind::Socket => {
                let addr = self.uri.trim_start_matches("tcp://");
                Ok(Box::new(BufReader::new(TcpStream::connect(addr).map_err(unavailable)?)))
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct IngestConfig {
    pub reorder_window_ms: i64,
    pub max_skew_ms: i64,
    /// Clock for the future-timestamp check; `None` disables it.
    pub now: Option<Timestamp>,
    pub replay_rate: f64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            reorder_window_ms: DEFAULT_REORDER_WINDOW_MS,
            max_skew_ms: DEFAULT_MAX_SKEW_MS,
            now: None,
            replay_rate: 0.0,
        }
    }
}

#[derive(Debug)]
struct Pacer {
    rate: f64,
    origin: Option<(i64, Instant)>,
}

impl Pacer {
    fn wait_for(&mut self, t: Timestamp) {
        let (t0, start) = *self.origin.get_or_insert((t.millis(), Instant::now()));
        let due = Duration::from_secs_f64(((t.millis() - t0).max(0) as f64 / 1000.0) / self.rate);
        let elapsed = start.elapsed();
        if due > elapsed {
            thread::sleep(due - elapsed);
        }
    }
}

const INGEST_STATE_VERSION: u8 = 1;

/// Line reader feeding the reorder buffer.
pub struct MessageStream<R> {
    reader: R,
    config: IngestConfig,
    reorder: Reorderer,
    stats: IngestStats,
    ready: VecDeque<GeoMessage>,
    pacer: Option<Pacer>,
    last_error: Option<(u64, String)>,
    eof: bool,
    line: String,
}

impl<R: BufRead> MessageStream<R> {
    pub fn new(reader: R, config: IngestConfig) -> Self {
        MessageStream {
            reader,
            config,
            reorder: Reorderer::new(config.reorder_window_ms),
            stats: IngestStats::default(),
            ready: VecDeque::new(),
            pacer: (config.replay_rate > 0.0).then_some(Pacer { rate: config.replay_rate, origin: None }),
            last_error: None,
            eof: false,
            line: String::new(),
        }
    }

    /// Continues a stream saved with [`MessageStream::save_state`]: the
    /// already-consumed lines of `reader` are skipped.
    pub fn resume(mut reader: R, config: IngestConfig, state: &[u8]) -> Result<Self, IngestError> {
        let mut dec = Decoder::new(state);
        let corrupt = |e: DecodeError| IngestError::MalformedRecord(format!("ingest state: {e}"));
        let version = dec.u8().map_err(corrupt)?;
        if version != INGEST_STATE_VERSION {
            return Err(corrupt(DecodeError::Version { found: version, expected: INGEST_STATE_VERSION }));
        }
        let mut stats = IngestStats::default();
        for field in [
            &mut stats.lines_read,
            &mut stats.invalid,
            &mut stats.duplicates,
            &mut stats.late_dropped,
            &mut stats.yielded,
        ] {
            *field = dec.u64().map_err(corrupt)?;
        }
        let reorder = Reorderer::decode(&mut dec).map_err(corrupt)?;
        dec.finish().map_err(corrupt)?;

        let mut line = String::new();
        for _ in 0..stats.lines_read {
            line.clear();
            if reader.read_line(&mut line)? == 0 {
                return Err(IngestError::MalformedRecord("input is shorter than the checkpointed position".into()));
            }
        }
        let mut s = Self::new(reader, config);
        s.stats = stats;
        s.reorder = reorder;
        Ok(s)
    }

    /// Ingest position and reorder buffer. Only meaningful once every
    /// released message has been taken (see [`MessageStream::step`]).
    pub fn save_state(&self) -> Vec<u8> {
        debug_assert!(self.ready.is_empty());
        let mut enc = Encoder::new();
        enc.u8(INGEST_STATE_VERSION);
        let s = &self.stats;
        for v in [s.lines_read, s.invalid, s.duplicates, s.late_dropped, s.yielded] {
            enc.u64(v);
        }
        self.reorder.encode(&mut enc);
        enc.finish()
    }

    pub fn stats(&self) -> IngestStats {
        self.stats
    }

    /// Line number and message of the most recent rejected record.
    pub fn last_error(&self) -> Option<&(u64, String)> {
        self.last_error.as_ref()
    }

    /// Reads one line and returns the messages it released, or `None` at end
    /// of input (after which the buffer has been flushed).
    pub fn step(&mut self) -> Result<Option<Vec<GeoMessage>>, IngestError> {
        if self.eof {
            return Ok(None);
        }
        self.line.clear();
        if self.reader.read_line(&mut self.line)? == 0 {
            self.eof = true;
            let mut out = Vec::new();
            self.reorder.flush(&mut out);
            return Ok(Some(self.release(out)));
        }
        self.stats.lines_read += 1;
        let mut out = Vec::new();
        match parse_message(self.line.trim_end_matches(['\n', '\r']), self.config.now, self.config.max_skew_ms) {
            Ok(msg) => match self.reorder.push(msg, &mut out) {
                Admission::Accepted => {}
                Admission::Late => self.stats.late_dropped += 1,
                Admission::Duplicate => self.stats.duplicates += 1,
            },
            Err(e) => {
                self.stats.invalid += 1;
                self.last_error = Some((self.stats.lines_read, e.to_string()));
            }
        }
        Ok(Some(self.release(out)))
    }

    fn release(&mut self, out: Vec<GeoMessage>) -> Vec<GeoMessage> {
        self.stats.yielded += out.len() as u64;
        if let Some(p) = self.pacer.as_mut() {
            for m in &out {
                p.wait_for(m.created_at);
            }
        }
        out
    }
}

impl<R: BufRead> Iterator for MessageStream<R> {
    type Item = Result<GeoMessage, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            if let Some(m) = self.ready.pop_front() {
                return Some(Ok(m));
            }
            match self.step() {
                Ok(Some(batch)) => self.ready.extend(batch),
                Ok(None) => return None,
                Err(e) => return Some(Err(e)),
            }
        }
    }
}

/// Opens `source` and streams its messages in order.
pub fn stream_messages(
    source: &StreamSource,
    config: IngestConfig,
) -> Result<MessageStream<Box<dyn BufRead + Send>>, IngestError> {
    let reader = source.open()?;
    Ok(MessageStream::new(reader, IngestConfig { replay_rate: source.replay_rate, ..config }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(id: &str, ts: &str) -> String {
        format!(r#"{{"id":"{id}","user_id":"u","created_at":"{ts}","place_name":"X","text":"t"}}"#)
    }

    fn collect(input: &str, config: IngestConfig) -> (Vec<GeoMessage>, IngestStats) {
        let mut s = MessageStream::new(input.as_bytes(), config);
        let msgs: Vec<GeoMessage> = s.by_ref().map(Result::unwrap).collect();
        (msgs, s.stats())
    }

    #[test]
    fn coordinate_record() {
        let m = parse_message(
            r#"{"id":"1","user_id":"7","created_at":"2012-02-21T18:04:11Z","lat":-23.55,"lon":-46.63,"text":"bom dia","extra":[1,2]}"#,
            None,
            0,
        )
        .unwrap();
        assert_eq!(m.coords, Some(Coord { lat: -23.55, lon: -46.63 }));
        assert_eq!(m.place_name, None);
        assert_eq!(m.text, "bom dia");
    }

    #[test]
    fn name_only_record() {
        let m = parse_message(
            r#"{"id":1,"user_id":"7","created_at":"2012-02-21T18:04:11.250-02:00","place_name":"São Paulo","place_level":"city","text":"x"}"#,
            None,
            0,
        )
        .unwrap();
        assert_eq!(m.coords, None);
        assert_eq!(m.message_id, "1");
        assert_eq!(m.place_level, Some(PlaceLevel::City));
        assert_eq!(m.created_at, parse_timestamp("2012-02-21T20:04:11.250Z").unwrap());
    }

    #[test]
    fn error_classes() {
        let cases = [
            ("not json", "MalformedRecord"),
            (r#"{"user_id":"u","created_at":"2012-02-21T18:04:11Z","place_name":"X","text":"t"}"#, "MissingField"),
            (r#"{"id":"1","user_id":"u","created_at":"2012-02-21T18:04:11Z","text":"t"}"#, "NoLocation"),
            (
                r#"{"id":"1","user_id":"u","created_at":"2012-02-21T18:04:11Z","lat":91.0,"lon":0,"text":"t"}"#,
                "CoordOutOfRange",
            ),
            (r#"{"id":"1","user_id":"u","created_at":"yesterday","place_name":"X","text":"t"}"#, "MalformedRecord"),
            (r#"{"id":"1","user_id":"u","created_at":"2012-02-21T18:04:11Z","place_name":"X"}"#, "MissingField"),
        ];
        for (input, kind) in cases {
            assert_eq!(parse_message(input, None, 0).unwrap_err().kind(), kind, "{input}");
        }
    }

    #[test]
    fn serialization_is_idempotent() {
        let input = r#"{"id":"9","user_id":"7","created_at":"2012-02-21T18:04:11.123+01:00","lat":0.1,"lon":-0.2,"place_name":"A","place_level":"neighbor","country":"B","text":"é \"q\""}"#;
        let once = parse_message(input, None, 0).unwrap();
        let twice = parse_message(&to_json_line(&once), None, 0).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn in_order_file() {
        let input = [
            line("a", "2012-02-21T00:00:00Z"),
            line("b", "2012-02-21T00:00:01Z"),
            line("c", "2012-02-21T00:00:02Z"),
        ]
        .join("\n");
        let (msgs, stats) = collect(&input, IngestConfig::default());
        let ids: Vec<&str> = msgs.iter().map(|m| m.message_id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert_eq!(stats.yielded, 3);
    }

    #[test]
    fn reorders_within_window() {
        let input = [line("late", "2012-02-21T00:00:10Z"), line("early", "2012-02-21T00:00:05Z")].join("\n");
        let (msgs, _) = collect(&input, IngestConfig::default());
        assert_eq!(msgs[0].message_id, "early");
        assert_eq!(msgs[1].message_id, "late");
    }

    #[test]
    fn drops_records_behind_the_watermark() {
        // watermark after the second record is 00:19; the third is 10 min older
        let input = [
            line("a", "2012-02-21T00:00:00Z"),
            line("b", "2012-02-21T00:20:00Z"),
            line("c", "2012-02-21T00:09:00Z"),
        ]
        .join("\n");
        let (msgs, stats) = collect(&input, IngestConfig::default());
        assert_eq!(msgs.len(), 2);
        assert_eq!(stats.late_dropped, 1);
        assert_eq!(stats.lines_read, 3);
    }

    #[test]
    fn duplicate_ids_first_wins() {
        let input = [
            line("a", "2012-02-21T00:00:00Z"),
            line("a", "2012-02-21T00:00:01Z"),
            line("b", "2012-02-21T00:00:02Z"),
        ]
        .join("\n");
        let (msgs, stats) = collect(&input, IngestConfig::default());
        assert_eq!(msgs.len(), 2);
        assert_eq!(msgs[0].created_at, parse_timestamp("2012-02-21T00:00:00Z").unwrap());
        assert_eq!(stats.duplicates, 1);
        assert_eq!(stats.rejected(), 1);
    }

    #[test]
    fn conservation_with_bad_lines() {
        let input = [
            line("a", "2012-02-21T00:00:00Z"),
            "garbage".to_string(),
            String::new(),
            line("b", "2012-02-21T01:00:00Z"),
            line("c", "2012-02-21T00:00:00Z"),
        ]
        .join("\n");
        let (msgs, stats) = collect(&input, IngestConfig::default());
        assert_eq!(stats.lines_read, 5);
        assert_eq!(msgs.len() as u64 + stats.rejected() + stats.late_dropped, stats.lines_read);
    }

    #[test]
    fn future_timestamps_are_rejected() {
        let now = parse_timestamp("2012-02-21T00:00:00Z").unwrap();
        let config = IngestConfig { now: Some(now), ..IngestConfig::default() };
        let input = [line("a", "2012-02-21T00:04:59Z"), line("b", "2012-02-21T00:05:01Z")].join("\n");
        let (msgs, stats) = collect(&input, config);
        assert_eq!(msgs.len(), 1);
        assert_eq!(stats.invalid, 1);
    }

    #[test]
    fn resume_continues_where_it_stopped() {
        let input: String = (0..50)
            .map(|i| line(&format!("m{i}"), &format!("2012-02-21T00:{:02}:{:02}Z", (i * 7) % 60, i % 60)) + "\n")
            .collect();
        let (all, full_stats) = collect(&input, IngestConfig::default());

        let mut first = MessageStream::new(input.as_bytes(), IngestConfig::default());
        let mut got = Vec::new();
        for _ in 0..20 {
            got.extend(first.step().unwrap().unwrap());
        }
        let state = first.save_state();
        let mut second = MessageStream::resume(input.as_bytes(), IngestConfig::default(), &state).unwrap();
        got.extend(second.by_ref().map(Result::unwrap));
        assert_eq!(got, all);
        assert_eq!(second.stats(), full_stats);
    }

    #[test]
    fn missing_file_is_unavailable() {
        let src = StreamSource::parse("/nonexistent/input.jsonl", 0.0);
        assert_eq!(src.open().err().unwrap().kind(), "SourceUnavailable");
        assert_eq!(StreamSource::parse("tcp://127.0.0.1:1", 0.0).kind, SourceKind::Socket);
    }
}
