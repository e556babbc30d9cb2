//! Labelled synthetic message streams.
//!
//! Each place has a daily profile of expected messages per 10-minute slot.
//! Baseline counts are Poisson draws from the profile; an event adds a
//! further Poisson draw with mean `profile * (amplitude - 1)` over the part
//! of each slot it overlaps. Users come from a per-place pool sized so that
//! the expected distinct-user ratio of an average slot matches the
//! configured one. An event either brings its own pool of new users or,
//! without `distinct_user_boost`, a single user posting every message.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use geopulse_core::codec::fnv1a64;
use geopulse_core::describe::language_for_country;
use geopulse_core::score::TruthEvent;
use geopulse_core::{Coord, GeoMessage, PlaceLevel, Timestamp};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::ingest::{format_timestamp, parse_timestamp, to_json_line};
use crate::records::TruthRecord;

pub const SLOT_MS: i64 = 600_000;
pub const SLOTS_PER_DAY: usize = 144;
const DAY_MS: i64 = 86_400_000;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("cannot read scenario {path}: {reason}")]
    Read { path: String, reason: String },
    #[error("cannot write {path}: {source}")]
    Write { path: String, source: std::io::Error },
}

fn invalid(msg: impl Into<String>) -> SynthError {
    SynthError::Invalid(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    LongLarge,
    ShortLarge,
    ShortSmall,
}

impl Shape {
    pub fn as_str(self) -> &'static str {
        match self {
            Shape::LongLarge => "long_large",
            Shape::ShortLarge => "short_large",
            Shape::ShortSmall => "short_small",
        }
    }
}

fn yes() -> bool {
    true
}

fn default_coords_fraction() -> f64 {
    0.7
}

fn default_start() -> String {
    "2012-02-19T00:00:00Z".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlaceSpec {
    pub place_id: String,
    pub name: String,
    #[serde(default)]
    pub country: Option<String>,
    /// `[min_lon, min_lat, max_lon, max_lat]`.
    pub bbox: [f64; 4],
    /// 144 expected counts, one per 10-minute slot of the UTC day.
    #[serde(default)]
    pub profile: Option<Vec<f64>>,
    /// Parametric profile used when `profile` is absent: a daily cosine
    /// between `trough_rate` and `peak_rate`, highest at `peak_hour` UTC.
    #[serde(default)]
    pub peak_rate: Option<f64>,
    #[serde(default)]
    pub trough_rate: Option<f64>,
    #[serde(default)]
    pub peak_hour: Option<f64>,
    /// Expected distinct users per message in an average slot, in (0, 1].
    pub user_ratio: f64,
    /// Share of messages that carry coordinates instead of a place name.
    #[serde(default = "default_coords_fraction")]
    pub coords_fraction: f64,
}

impl PlaceSpec {
    pub fn rates(&self) -> Result<Vec<f64>, SynthError> {
        let rates = match (&self.profile, self.peak_rate) {
            (Some(p), _) => p.clone(),
            (None, Some(peak)) => {
                let trough = self.trough_rate.unwrap_or(0.0);
                let hour = self.peak_hour.unwrap_or(12.0);
                (0..SLOTS_PER_DAY)
                    .map(|s| {
                        let h = s as f64 / 6.0;
                        trough + (peak - trough) * (0.5 + 0.5 * (2.0 * PI * (h - hour) / 24.0).cos())
                    })
                    .collect()
            }
            (None, None) => return Err(invalid(format!("place {} needs a profile or peak_rate", self.place_id))),
        };
        if rates.len() != SLOTS_PER_DAY {
            return Err(invalid(format!("place {} profile has {} values, expected 144", self.place_id, rates.len())));
        }
        if rates.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(invalid(format!("place {} profile has a negative or non-finite rate", self.place_id)));
        }
        Ok(rates)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventSpec {
    pub place_id: String,
    pub start: String,
    pub duration_minutes: u32,
    /// Multiplier on the baseline rate while the event runs; > 1.
    pub amplitude: f64,
    pub shape: Shape,
    #[serde(default = "yes")]
    pub distinct_user_boost: bool,
    #[serde(default)]
    pub keywords: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub days: u32,
    /// UTC midnight the scenario starts at.
    #[serde(default = "default_start")]
    pub start: String,
    pub places: Vec<PlaceSpec>,
    #[serde(default)]
    pub events: Vec<EventSpec>,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, SynthError> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, SynthError> {
        let text = fs::read_to_string(path)
            .map_err(|e| SynthError::Read { path: path.display().to_string(), reason: e.to_string() })?;
        Self::from_toml(&text)
    }

    pub fn start_time(&self) -> Result<Timestamp, SynthError> {
        let t = parse_timestamp(&self.start).map_err(|e| invalid(e.to_string()))?;
        if t.millis().rem_euclid(DAY_MS) != 0 {
            return Err(invalid("start must be a UTC midnight"));
        }
        Ok(t)
    }

    pub fn end_time(&self) -> Result<Timestamp, SynthError> {
        Ok(Timestamp(self.start_time()?.millis() + self.days as i64 * DAY_MS))
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let (start, end) = (self.start_time()?, self.end_time()?);
        let mut ids = BTreeSet::new();
        for p in &self.places {
            if !ids.insert(p.place_id.as_str()) {
                return Err(invalid(format!("duplicate place {}", p.place_id)));
            }
            p.rates()?;
            if !(p.user_ratio > 0.0 && p.user_ratio <= 1.0) {
                return Err(invalid(format!("place {} user_ratio must be in (0, 1]", p.place_id)));
            }
            if !(0.0..=1.0).contains(&p.coords_fraction) {
                return Err(invalid(format!("place {} coords_fraction must be in [0, 1]", p.place_id)));
            }
            let [x0, y0, x1, y1] = p.bbox;
            if !(x0 < x1 && y0 < y1 && Coord::new(y0, x0).is_ok() && Coord::new(y1, x1).is_ok()) {
                return Err(invalid(format!("place {} has an invalid bbox", p.place_id)));
            }
        }
        for e in &self.events {
            if !ids.contains(e.place_id.as_str()) {
                return Err(invalid(format!("event for unknown place {}", e.place_id)));
            }
            if !(e.amplitude > 1.0 && e.amplitude.is_finite()) {
                return Err(invalid(format!("event at {} needs amplitude > 1", e.place_id)));
            }
            let (es, ee) = event_span(e)?;
            if e.duration_minutes == 0 || es < start || ee > end {
                return Err(invalid(format!("event at {} lies outside the scenario", e.place_id)));
            }
        }
        Ok(())
    }
}

fn event_span(e: &EventSpec) -> Result<(Timestamp, Timestamp), SynthError> {
    let start = parse_timestamp(&e.start).map_err(|err| invalid(err.to_string()))?;
    Ok((start, Timestamp(start.millis() + e.duration_minutes as i64 * 60_000)))
}

/// Pool size whose expected distinct count over `n` uniform draws is
/// `ratio * n`.
pub fn pool_size(n: f64, ratio: f64) -> u64 {
    const MAX_POOL: f64 = 1e9;
    if n <= 1.0 || ratio >= 1.0 {
        return if ratio >= 1.0 { MAX_POOL as u64 } else { 1 };
    }
    let distinct = |p: f64| p * (1.0 - (1.0 - 1.0 / p).powf(n));
    let target = ratio * n;
    if distinct(MAX_POOL) <= target {
        return MAX_POOL as u64;
    }
    let (mut lo, mut hi) = (1.0f64, MAX_POOL);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if distinct(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi.round().max(1.0) as u64
}

const VOCAB_EN: &str = "the a to and of in is it you that for on my this with just day time good people love \
today night work home back coffee lunch dinner weather city morning friends week going new music game feel happy";
const VOCAB_PT: &str = "de que o a e do da em um para com não uma os no se na por mais hoje dia casa trabalho \
amigos noite bom cafe almoço cidade gente tempo vida semana chuva calor festa feliz";
const VOCAB_DE: &str = "der die und in den von zu das mit sich des auf für ist im heute tag arbeit freunde \
abend gut kaffee stadt wetter woche leben zeit musik essen schön";
const VOCAB_NO: &str = "og i det som på er en til å han av for med har ikke jeg dag i dag hjemme jobb venner \
kveld kaffe byen vær uke livet tid musikk middag fint";
const VOCAB_ES: &str = "de la que el en y a los se del las un por con no una su para es hoy dia casa trabajo \
amigos noche cafe ciudad tiempo vida semana fiesta feliz";

fn vocabulary(country: Option<&str>) -> Vec<&'static str> {
    let words = match language_for_country(country) {
        "pt" => VOCAB_PT,
        "de" => VOCAB_DE,
        "no" => VOCAB_NO,
        "es" => VOCAB_ES,
        _ => VOCAB_EN,
    };
    words.split_whitespace().collect()
}

fn words(rng: &mut ChaCha8Rng, vocab: &[&str], n: usize) -> Vec<String> {
    (0..n).map(|_| vocab[rng.random_range(0..vocab.len())].to_string()).collect()
}

fn poisson(rng: &mut ChaCha8Rng, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("positive finite mean").sample(rng) as u64
}

/// A generated scenario: messages in time order, ground truth and the
/// boundary polygons of its places.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub messages: Vec<GeoMessage>,
    pub truth: Vec<TruthEvent>,
    pub boundaries: Value,
}

struct Draft {
    t: i64,
    place: usize,
    seq: u64,
    msg: GeoMessage,
}

struct PlaceGen<'a> {
    spec: &'a PlaceSpec,
    index: usize,
    vocab: Vec<&'static str>,
    seq: u64,
}

impl PlaceGen<'_> {
    fn message(&mut self, rng: &mut ChaCha8Rng, t: i64, user: String, text: String) -> Draft {
        let s = self.spec;
        let (coords, place_name, place_level, country) = if rng.random::<f64>() < s.coords_fraction {
            let [x0, y0, x1, y1] = s.bbox;
            let (mx, my) = ((x1 - x0) * 0.01, (y1 - y0) * 0.01);
            let lon = rng.random_range(x0 + mx..x1 - mx);
            let lat = rng.random_range(y0 + my..y1 - my);
            (Some(Coord { lat, lon }), None, None, None)
        } else {
            (None, Some(s.name.clone()), Some(PlaceLevel::City), s.country.clone())
        };
        self.seq += 1;
        Draft {
            t,
            place: self.index,
            seq: self.seq,
            msg: GeoMessage {
                message_id: String::new(),
                user_id: user,
                created_at: Timestamp(t),
                coords,
                place_name,
                place_level,
                country,
                text,
            },
        }
    }
}

fn derived_seed(seed: u64, place_id: &str, salt: u64) -> u64 {
    seed ^ fnv1a64(place_id.as_bytes()) ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

pub fn generate_stream(cfg: &ScenarioConfig) -> Result<Scenario, SynthError> {
    cfg.validate()?;
    let start = cfg.start_time()?.millis();
    let mut drafts: Vec<Draft> = Vec::new();
    let mut truth = Vec::new();

    for (pi, spec) in cfg.places.iter().enumerate() {
        let rates = spec.rates()?;
        let mean_rate = rates.iter().sum::<f64>() / rates.len() as f64;
        let pool = pool_size(mean_rate, spec.user_ratio);
        let mut gen = PlaceGen { spec, index: pi, vocab: vocabulary(spec.country.as_deref()), seq: 0 };
        let mut rng = ChaCha8Rng::seed_from_u64(derived_seed(cfg.seed, &spec.place_id, 0));

        for day in 0..cfg.days as i64 {
            for (slot, &rate) in rates.iter().enumerate() {
                let slot_start = start + day * DAY_MS + slot as i64 * SLOT_MS;
                for _ in 0..poisson(&mut rng, rate) {
                    let t = slot_start + rng.random_range(0..SLOT_MS);
                    let user = format!("{}-u{}", spec.place_id, rng.random_range(0..pool));
                    let n = rng.random_range(3..9);
                    let text = words(&mut rng, &gen.vocab, n).join(" ");
                    let d = gen.message(&mut rng, t, user, text);
                    drafts.push(d);
                }
            }
        }

        for (ei, e) in cfg.events.iter().enumerate().filter(|(_, e)| e.place_id == spec.place_id) {
            let mut rng = ChaCha8Rng::seed_from_u64(derived_seed(cfg.seed, &spec.place_id, ei as u64 + 1));
            let (es, ee) = event_span(e)?;
            let (es, ee) = (es.millis(), ee.millis());
            let first_slot = (es - start).div_euclid(SLOT_MS);
            let last_slot = (ee - 1 - start).div_euclid(SLOT_MS);
            let extra: Vec<(i64, i64, f64)> = (first_slot..=last_slot)
                .map(|s| {
                    let lo = (start + s * SLOT_MS).max(es);
                    let hi = (start + (s + 1) * SLOT_MS).min(ee);
                    let rate = rates[s.rem_euclid(SLOTS_PER_DAY as i64) as usize];
                    (lo, hi, rate * (e.amplitude - 1.0) * (hi - lo) as f64 / SLOT_MS as f64)
                })
                .collect();
            let mean_extra = extra.iter().map(|x| x.2).sum::<f64>() / extra.len() as f64;
            let event_pool = pool_size(mean_extra, spec.user_ratio);
            for (lo, hi, mean) in extra {
                for _ in 0..poisson(&mut rng, mean) {
                    let t = rng.random_range(lo..hi);
                    let user = if e.distinct_user_boost {
                        format!("{}-e{}-{}", spec.place_id, ei, rng.random_range(0..event_pool))
                    } else {
                        format!("{}-flood{}", spec.place_id, ei)
                    };
                    let n = rng.random_range(2..6);
                    let mut text = words(&mut rng, &gen.vocab, n);
                    if !e.keywords.is_empty() {
                        let k = rng.random_range(1..=e.keywords.len().min(3));
                        for _ in 0..k {
                            text.push(e.keywords[rng.random_range(0..e.keywords.len())].clone());
                        }
                    }
                    let d = gen.message(&mut rng, t, user, text.join(" "));
                    drafts.push(d);
                }
            }
            truth.push(TruthEvent {
                place_id: spec.place_id.clone(),
                start: Timestamp(es),
                end: Timestamp(ee),
                shape: e.shape.as_str().to_string(),
                keywords: e.keywords.clone(),
            });
        }
    }

    drafts.sort_by_key(|d| (d.t, d.place, d.seq));
    let messages = drafts
        .into_iter()
        .enumerate()
        .map(|(i, d)| GeoMessage { message_id: format!("m{i:08}"), ..d.msg })
        .collect();
    truth.sort_by(|a: &TruthEvent, b| (a.start, &a.place_id).cmp(&(b.start, &b.place_id)));
    Ok(Scenario { messages, truth, boundaries: boundaries_for(cfg) })
}

fn slug(s: &str) -> String {
    s.to_lowercase().chars().map(|c| if c.is_alphanumeric() { c } else { '-' }).collect()
}

fn rect(b: [f64; 4]) -> Value {
    let [x0, y0, x1, y1] = b;
    json!([[[x0, y0], [x1, y0], [x1, y1], [x0, y1], [x0, y0]]])
}

/// City rectangles, each inside a country rectangle that covers all of that
/// country's cities with a one-degree margin.
fn boundaries_for(cfg: &ScenarioConfig) -> Value {
    let mut features = Vec::new();
    let countries: BTreeSet<&str> = cfg.places.iter().filter_map(|p| p.country.as_deref()).collect();
    for c in countries {
        let b = cfg
            .places
            .iter()
            .filter(|p| p.country.as_deref() == Some(c))
            .fold([f64::MAX, f64::MAX, f64::MIN, f64::MIN], |a, p| {
                [a[0].min(p.bbox[0]), a[1].min(p.bbox[1]), a[2].max(p.bbox[2]), a[3].max(p.bbox[3])]
            });
        let b = [(b[0] - 1.0).max(-180.0), (b[1] - 1.0).max(-90.0), (b[2] + 1.0).min(180.0), (b[3] + 1.0).min(90.0)];
        features.push(json!({
            "type": "Feature",
            "properties": {"place_id": format!("country-{}", slug(c)), "name": c, "level": "country"},
            "geometry": {"type": "Polygon", "coordinates": rect(b)}
        }));
    }
    for p in &cfg.places {
        let mut props = json!({"place_id": p.place_id, "name": p.name, "level": "city"});
        if let Some(c) = &p.country {
            props["parent_id"] = json!(format!("country-{}", slug(c)));
        }
        features.push(json!({
            "type": "Feature",
            "properties": props,
            "geometry": {"type": "Polygon", "coordinates": rect(p.bbox)}
        }));
    }
    json!({"type": "FeatureCollection", "features": features})
}

impl Scenario {
    pub fn messages_jsonl(&self) -> String {
        self.messages.iter().map(|m| to_json_line(m) + "\n").collect()
    }

    pub fn truth_jsonl(&self) -> String {
        self.truth
            .iter()
            .map(|t| serde_json::to_string(&TruthRecord::from_event(t)).expect("serializable") + "\n")
            .collect()
    }

    /// Writes `messages.jsonl`, `truth.jsonl` and `boundaries.geojson`.
    pub fn write_to(&self, dir: &Path) -> Result<(), SynthError> {
        let write = |name: &str, body: String| {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|source| SynthError::Write { path: path.display().to_string(), source })
        };
        fs::create_dir_all(dir).map_err(|source| SynthError::Write { path: dir.display().to_string(), source })?;
        write("messages.jsonl", self.messages_jsonl())?;
        write("truth.jsonl", self.truth_jsonl())?;
        write("boundaries.geojson", serde_json::to_string_pretty(&self.boundaries).expect("serializable") + "\n")
    }
}

/// Human-readable one-line description of a generated scenario.
pub fn describe(s: &Scenario) -> String {
    let first = s.messages.first().map(|m| format_timestamp(m.created_at)).unwrap_or_default();
    let last = s.messages.last().map(|m| format_timestamp(m.created_at)).unwrap_or_default();
    format!("messages={} events={} span={}..{}", s.messages.len(), s.truth.len(), first, last)
}
