//! UTC instants and fixed-size time bins.

use core::fmt;

use thiserror::Error;

/// Milliseconds in one UTC day.
pub const DAY_MS: i64 = 86_400_000;

/// 2000-01-01T00:00:00Z, the default binning epoch.
pub const DEFAULT_EPOCH: Timestamp = Timestamp(946_684_800_000);

/// A UTC instant with millisecond precision, counted from the Unix epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Timestamp(pub i64);

impl Timestamp {
    pub const fn from_millis(ms: i64) -> Self {
        Timestamp(ms)
    }

    pub const fn from_secs(secs: i64) -> Self {
        Timestamp(secs * 1000)
    }

    pub const fn millis(self) -> i64 {
        self.0
    }

    /// Milliseconds elapsed since the start of this instant's UTC day.
    pub fn millis_into_day(self) -> i64 {
        self.0.rem_euclid(DAY_MS)
    }

    pub fn saturating_add_millis(self, ms: i64) -> Self {
        Timestamp(self.0.saturating_add(ms))
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ms", self.0)
    }
}

/// Width of one time bin. Always positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BinSize(i64);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TimeError {
    #[error("timestamp {timestamp} lies before the binning epoch {epoch}")]
    TimestampBeforeEpoch { timestamp: Timestamp, epoch: Timestamp },
    #[error("bin size must be positive, got {0} ms")]
    NonPositiveBinSize(i64),
}

impl BinSize {
    pub fn from_millis(ms: i64) -> Result<Self, TimeError> {
        if ms <= 0 {
            return Err(TimeError::NonPositiveBinSize(ms));
        }
        Ok(BinSize(ms))
    }

    pub fn from_minutes(minutes: i64) -> Result<Self, TimeError> {
        Self::from_millis(minutes.saturating_mul(60_000))
    }

    pub const fn millis(self) -> i64 {
        self.0
    }

    /// Number of bins in one UTC day, if the bin size divides the day evenly.
    pub fn bins_per_day(self) -> Option<u64> {
        if DAY_MS % self.0 == 0 {
            Some((DAY_MS / self.0) as u64)
        } else {
            None
        }
    }
}

/// Index of the left-closed, right-open bin containing `timestamp`.
pub fn assign_bin(timestamp: Timestamp, bin_size: BinSize, epoch: Timestamp) -> Result<i64, TimeError> {
    if timestamp < epoch {
        return Err(TimeError::TimestampBeforeEpoch { timestamp, epoch });
    }
    Ok((timestamp.0 - epoch.0) / bin_size.0)
}

/// Start instant of bin `bin_index`.
pub fn bin_start(bin_index: i64, bin_size: BinSize, epoch: Timestamp) -> Timestamp {
    Timestamp(epoch.0 + bin_index * bin_size.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MIN: i64 = 60_000;

    #[test]
    fn epoch_is_bin_zero() {
        for minutes in [1, 5, 10, 60] {
            let size = BinSize::from_minutes(minutes).unwrap();
            assert_eq!(assign_bin(DEFAULT_EPOCH, size, DEFAULT_EPOCH).unwrap(), 0);
        }
    }

    #[test]
    fn bins_are_right_open() {
        let size = BinSize::from_minutes(10).unwrap();
        let t = DEFAULT_EPOCH.saturating_add_millis(10 * MIN);
        assert_eq!(assign_bin(t, size, DEFAULT_EPOCH).unwrap(), 1);
        let t = DEFAULT_EPOCH.saturating_add_millis(10 * MIN - 1);
        assert_eq!(assign_bin(t, size, DEFAULT_EPOCH).unwrap(), 0);
    }

    #[test]
    fn mid_bin() {
        let size = BinSize::from_minutes(10).unwrap();
        let t = DEFAULT_EPOCH.saturating_add_millis(25 * MIN);
        assert_eq!(assign_bin(t, size, DEFAULT_EPOCH).unwrap(), 2);
        assert_eq!(bin_start(2, size, DEFAULT_EPOCH), DEFAULT_EPOCH.saturating_add_millis(20 * MIN));
    }

    #[test]
    fn before_epoch_is_rejected() {
        let size = BinSize::from_minutes(1).unwrap();
        let t = DEFAULT_EPOCH.saturating_add_millis(-1);
        assert!(matches!(
            assign_bin(t, size, DEFAULT_EPOCH),
            Err(TimeError::TimestampBeforeEpoch { .. })
        ));
    }

    #[test]
    fn bins_per_day() {
        assert_eq!(BinSize::from_minutes(10).unwrap().bins_per_day(), Some(144));
        assert_eq!(BinSize::from_minutes(1).unwrap().bins_per_day(), Some(1440));
        assert_eq!(BinSize::from_minutes(7).unwrap().bins_per_day(), None);
        assert!(BinSize::from_millis(0).is_err());
    }
}
