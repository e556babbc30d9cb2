//! Normalized inbound messages and their validation rules.

use alloc::string::String;
use core::fmt;
use core::str::FromStr;

use thiserror::Error;

use crate::codec::{DecodeError, Decoder, Encoder};
use crate::time::Timestamp;

pub const MAX_TEXT_CHARS: usize = 560;
pub const DEFAULT_MAX_SKEW_MS: i64 = 5 * 60_000;

/// Political division granularity, widest first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PlaceLevel {
    Country,
    Admin,
    City,
    Neighborhood,
    Poi,
}

impl PlaceLevel {
    pub const ALL: [PlaceLevel; 5] = [
        PlaceLevel::Country,
        PlaceLevel::Admin,
        PlaceLevel::City,
        PlaceLevel::Neighborhood,
        PlaceLevel::Poi,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PlaceLevel::Country => "country",
            PlaceLevel::Admin => "admin",
            PlaceLevel::City => "city",
            PlaceLevel::Neighborhood => "neighborhood",
            PlaceLevel::Poi => "poi",
        }
    }

    /// Position in the wide-to-narrow ordering; country is 0.
    pub fn rank(self) -> usize {
        self as usize
    }

    fn from_rank(rank: u8) -> Option<Self> {
        Self::ALL.get(rank as usize).copied()
    }
}

impl fmt::Display for PlaceLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown place level {0:?}")]
pub struct UnknownPlaceLevel(pub String);

impl FromStr for PlaceLevel {
    type Err = UnknownPlaceLevel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "country" => Ok(PlaceLevel::Country),
            "admin" | "province" | "state" => Ok(PlaceLevel::Admin),
            "city" => Ok(PlaceLevel::City),
            "neighborhood" | "neighbourhood" | "neighbor" => Ok(PlaceLevel::Neighborhood),
            "poi" => Ok(PlaceLevel::Poi),
            _ => Err(UnknownPlaceLevel(s.into())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coord {
    pub lat: f64,
    pub lon: f64,
}

impl Coord {
    pub fn new(lat: f64, lon: f64) -> Result<Self, MessageError> {
        let c = Coord { lat, lon };
        c.check()?;
        Ok(c)
    }

    fn check(&self) -> Result<(), MessageError> {
        let lat_ok = self.lat.is_finite() && (-90.0..=90.0).contains(&self.lat);
        let lon_ok = self.lon.is_finite() && (-180.0..=180.0).contains(&self.lon);
        if lat_ok && lon_ok {
            Ok(())
        } else {
            Err(MessageError::CoordOutOfRange { lat: self.lat, lon: self.lon })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MessageError {
    #[error("missing required field `{0}`")]
    MissingField(&'static str),
    #[error("message carries neither coordinates nor a place name")]
    NoLocation,
    #[error("coordinates out of range: lat={lat}, lon={lon}")]
    CoordOutOfRange { lat: f64, lon: f64 },
    #[error("text exceeds {MAX_TEXT_CHARS} characters ({0})")]
    TextTooLong(usize),
    #[error("timestamp {created_at} is more than {max_skew_ms} ms ahead of {now}")]
    FutureTimestamp { created_at: Timestamp, now: Timestamp, max_skew_ms: i64 },
}

/// One validated geo-tagged message.
#[derive(Debug, Clone, PartialEq)]
pub struct GeoMessage {
    pub message_id: String,
    pub user_id: String,
    pub created_at: Timestamp,
    pub coords: Option<Coord>,
    pub place_name: Option<String>,
    pub place_level: Option<PlaceLevel>,
    pub country: Option<String>,
    pub text: String,
}

impl GeoMessage {
    /// Checks every message invariant. `now` bounds how far in the future
    /// `created_at` may lie; pass `None` to skip the clock check.
    pub fn validate(&self, now: Option<Timestamp>, max_skew_ms: i64) -> Result<(), MessageError> {
        if self.message_id.is_empty() {
            return Err(MessageError::MissingField("id"));
        }
        if self.user_id.is_empty() {
            return Err(MessageError::MissingField("user_id"));
        }
        let has_name = self.place_name.as_deref().is_some_and(|n| !n.trim().is_empty());
        if self.coords.is_none() && !has_name {
            return Err(MessageError::NoLocation);
        }
        if let Some(c) = &self.coords {
            c.check()?;
        }
        let chars = self.text.chars().count();
        if chars > MAX_TEXT_CHARS {
            return Err(MessageError::TextTooLong(chars));
        }
        if let Some(now) = now {
            if self.created_at.0 > now.0.saturating_add(max_skew_ms) {
                return Err(MessageError::FutureTimestamp {
                    created_at: self.created_at,
                    now,
                    max_skew_ms,
                });
            }
        }
        Ok(())
    }

    pub fn encode(&self, enc: &mut Encoder) {
        enc.str(&self.message_id);
        enc.str(&self.user_id);
        enc.i64(self.created_at.0);
        match &self.coords {
            Some(c) => {
                enc.u8(1);
                enc.f64(c.lat);
                enc.f64(c.lon);
            }
            None => enc.u8(0),
        }
        enc.opt_str(self.place_name.as_deref());
        enc.u8(self.place_level.map_or(0xff, |l| l.rank() as u8));
        enc.opt_str(self.country.as_deref());
        enc.str(&self.text);
    }

    pub fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let message_id = dec.str()?;
        let user_id = dec.str()?;
        let created_at = Timestamp(dec.i64()?);
        let coords = match dec.u8()? {
            0 => None,
            1 => Some(Coord { lat: dec.f64()?, lon: dec.f64()? }),
            tag => return Err(DecodeError::BadTag { what: "coords", tag }),
        };
        let place_name = dec.opt_str()?;
        let place_level = match dec.u8()? {
            0xff => None,
            r => Some(PlaceLevel::from_rank(r).ok_or(DecodeError::BadTag { what: "place level", tag: r })?),
        };
        let country = dec.opt_str()?;
        let text = dec.str()?;
        Ok(GeoMessage { message_id, user_id, created_at, coords, place_name, place_level, country, text })
    }
}
