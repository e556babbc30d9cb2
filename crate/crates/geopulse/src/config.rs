//! Run configuration: defaults, overridden by a TOML file, overridden by
//! command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use geopulse_core::pipeline::StopwordPolicy;
use geopulse_core::time::DAY_MS;
use geopulse_core::{BinSize, DetectorConfig, PipelineConfig, PlaceLevel, StopwordList, Timestamp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{parse_timestamp, IngestConfig, StreamSource};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {reason}")]
    File { path: PathBuf, reason: String },
    #[error("invalid value for {key}: {reason}")]
    Invalid { key: &'static str, reason: String },
    #[error("{what} not found: {path}")]
    MissingPath { what: &'static str, path: PathBuf },
}

fn invalid(key: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { key, reason: reason.into() }
}

/// Parses `30s`, `10m`, `1h` or a bare number of minutes.
pub fn parse_duration_ms(s: &str) -> Option<i64> {
    let s = s.trim();
    let (num, unit) = match s.find(|c: char| c.is_ascii_alphabetic()) {
        Some(i) => (&s[..i], &s[i..]),
        None => (s, "m"),
    };
    let n: i64 = num.trim().parse().ok()?;
    let scale = match unit {
        "ms" => 1,
        "s" => 1000,
        "m" | "min" => 60_000,
        "h" => 3_600_000,
        _ => return None,
    };
    n.checked_mul(scale).filter(|v| *v > 0)
}

/// Bin size that divides a day into a whole number of bins.
pub fn parse_bin_size(s: &str) -> Result<BinSize, ConfigError> {
    let ms = parse_duration_ms(s).ok_or_else(|| invalid("bin_size", format!("{s:?} is not a duration")))?;
    if DAY_MS % ms != 0 {
        return Err(invalid("bin_size", format!("{s} does not divide 24h evenly")));
    }
    BinSize::from_millis(ms).map_err(|e| invalid("bin_size", e.to_string()))
}

/// Settings as they may appear in a config file; every key is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigLayer {
    pub input: Option<String>,
    pub rate: Option<f64>,
    pub reorder_window: Option<f64>,
    pub boundaries: Option<PathBuf>,
    pub place_level: Option<String>,
    pub bin_size: Option<String>,
    pub k: Option<f64>,
    pub warmup_bins: Option<u64>,
    pub max_gap: Option<u64>,
    pub tau_nov: Option<f64>,
    pub expected_peak: Option<f64>,
    pub epoch: Option<String>,
    pub max_skew: Option<f64>,
    pub stopwords: Option<PathBuf>,
    pub top_n: Option<usize>,
    pub data_dir: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl ConfigLayer {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path)
            .map_err(|e| ConfigError::File { path: path.to_path_buf(), reason: e.to_string() })?;
        toml::from_str(&text).map_err(|e| ConfigError::File { path: path.to_path_buf(), reason: e.to_string() })
    }

    /// Fills every unset key from `lower`.
    pub fn or(self, lower: ConfigLayer) -> ConfigLayer {
        ConfigLayer {
            input: self.input.or(lower.input),
            rate: self.rate.or(lower.rate),
            reorder_window: self.reorder_window.or(lower.reorder_window),
            boundaries: self.boundaries.or(lower.boundaries),
            place_level: self.place_level.or(lower.place_level),
            bin_size: self.bin_size.or(lower.bin_size),
            k: self.k.or(lower.k),
            warmup_bins: self.warmup_bins.or(lower.warmup_bins),
            max_gap: self.max_gap.or(lower.max_gap),
            tau_nov: self.tau_nov.or(lower.tau_nov),
            expected_peak: self.expected_peak.or(lower.expected_peak),
            epoch: self.epoch.or(lower.epoch),
            max_skew: self.max_skew.or(lower.max_skew),
            stopwords: self.stopwords.or(lower.stopwords),
            top_n: self.top_n.or(lower.top_n),
            data_dir: self.data_dir.or(lower.data_dir),
            out: self.out.or(lower.out),
        }
    }
}

/// Fully resolved settings of one `detect` run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub input: String,
    /// Replay speed multiplier; 0 is as fast as possible.
    pub rate: f64,
    /// Seconds.
    pub reorder_window: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub boundaries: Option<PathBuf>,
    pub place_level: String,
    pub bin_size: String,
    pub k: f64,
    pub warmup_bins: u64,
    pub max_gap: u64,
    pub tau_nov: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expected_peak: Option<f64>,
    pub epoch: String,
    /// Seconds a timestamp may lie in the future.
    pub max_skew: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stopwords: Option<PathBuf>,
    pub top_n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

impl RunConfig {
    /// Applies defaults to a merged layer and validates the result.
    pub fn resolve(layer: ConfigLayer) -> Result<Self, ConfigError> {
        let bin_size_str = layer.bin_size.unwrap_or_else(|| "10m".into());
        let bin_size = parse_bin_size(&bin_size_str)?;
        let defaults = DetectorConfig::new(bin_size);
        let place_level = layer.place_level.unwrap_or_else(|| "city".into());
        place_level.parse::<PlaceLevel>().map_err(|e| invalid("place_level", e.to_string()))?;
        let epoch = layer.epoch.unwrap_or_else(|| "2000-01-01T00:00:00Z".into());
        parse_timestamp(&epoch).map_err(|e| invalid("epoch", e.to_string()))?;

        let cfg = RunConfig {
            input: layer.input.ok_or_else(|| invalid("input", "no input source given"))?,
            rate: layer.rate.unwrap_or(0.0),
            reorder_window: layer.reorder_window.unwrap_or(60.0),
            boundaries: layer.boundaries,
            place_level,
            bin_size: bin_size_str,
            k: layer.k.unwrap_or(defaults.k),
            warmup_bins: layer.warmup_bins.unwrap_or(defaults.warmup_bins),
            max_gap: layer.max_gap.unwrap_or(defaults.max_gap),
            tau_nov: layer.tau_nov.unwrap_or(defaults.tau_nov),
            expected_peak: layer.expected_peak,
            epoch,
            max_skew: layer.max_skew.unwrap_or(300.0),
            stopwords: layer.stopwords,
            top_n: layer.top_n.unwrap_or(10),
            data_dir: layer.data_dir,
            out: layer.out,
        };
        if !(cfg.rate >= 0.0 && cfg.rate.is_finite()) {
            return Err(invalid("rate", "must be a finite number >= 0"));
        }
        if !(cfg.reorder_window >= 0.0 && cfg.reorder_window.is_finite()) {
            return Err(invalid("reorder_window", "must be a finite number of seconds >= 0"));
        }
        if !(cfg.max_skew >= 0.0 && cfg.max_skew.is_finite()) {
            return Err(invalid("max_skew", "must be a finite number of seconds >= 0"));
        }
        cfg.pipeline_config_with(StopwordPolicy::ByCountry)?;
        Ok(cfg)
    }

    /// Checks that every referenced input path exists.
    pub fn check_paths(&self) -> Result<(), ConfigError> {
        let source = self.source();
        if source.kind == crate::ingest::SourceKind::FileReplay && self.input != "-" && !Path::new(&self.input).is_file() {
            return Err(ConfigError::MissingPath { what: "input file", path: self.input.clone().into() });
        }
        for (what, p) in [("boundaries file", &self.boundaries), ("stopword file", &self.stopwords)] {
            if let Some(p) = p {
                if !p.is_file() {
                    return Err(ConfigError::MissingPath { what, path: p.clone() });
                }
            }
        }
        Ok(())
    }

    pub fn source(&self) -> StreamSource {
        StreamSource::parse(&self.input, self.rate)
    }

    pub fn bin_size(&self) -> BinSize {
        parse_bin_size(&self.bin_size).expect("validated in resolve")
    }

    pub fn epoch(&self) -> Timestamp {
        parse_timestamp(&self.epoch).expect("validated in resolve")
    }

    pub fn ingest_config(&self, now: Option<Timestamp>) -> IngestConfig {
        IngestConfig {
            reorder_window_ms: (self.reorder_window * 1000.0).round() as i64,
            max_skew_ms: (self.max_skew * 1000.0).round() as i64,
            now,
            replay_rate: self.rate,
        }
    }

    fn pipeline_config_with(&self, stopwords: StopwordPolicy) -> Result<PipelineConfig, ConfigError> {
        let bin_size = self.bin_size();
        let mut pc = PipelineConfig::new(bin_size);
        pc.series.epoch = self.epoch();
        pc.detector.k = self.k;
        pc.detector.warmup_bins = self.warmup_bins;
        pc.detector.max_gap = self.max_gap;
        pc.detector.tau_nov = self.tau_nov;
        pc.detector.expected_peak = self.expected_peak;
        pc.place_level = self.place_level.parse().expect("validated in resolve");
        pc.top_n = self.top_n;
        pc.stopwords = stopwords;
        pc.validate().map_err(|e| invalid("detector", e.to_string()))?;
        Ok(pc)
    }

    /// Pipeline settings, reading the stopword file if one is configured.
    pub fn pipeline_config(&self) -> Result<PipelineConfig, ConfigError> {
        let policy = match &self.stopwords {
            None => StopwordPolicy::ByCountry,
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| ConfigError::File { path: p.clone(), reason: e.to_string() })?;
                StopwordPolicy::Fixed(StopwordList::parse("custom", &text))
            }
        };
        self.pipeline_config_with(policy)
    }

    /// The effective configuration as TOML.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config always serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layer(input: &str) -> ConfigLayer {
        ConfigLayer { input: Some(input.into()), ..ConfigLayer::default() }
    }

    #[test]
    fn durations() {
        assert_eq!(parse_duration_ms("10m"), Some(600_000));
        assert_eq!(parse_duration_ms("5"), Some(300_000));
        assert_eq!(parse_duration_ms("30s"), Some(30_000));
        assert_eq!(parse_duration_ms("1h"), Some(3_600_000));
        assert_eq!(parse_duration_ms("0m"), None);
        assert_eq!(parse_duration_ms("ten"), None);
        assert!(parse_bin_size("7m").is_err());
        assert!(parse_bin_size("8m").is_ok());
    }

    #[test]
    fn defaults_follow_bin_size() {
        let cfg = RunConfig::resolve(layer("in.jsonl")).unwrap();
        assert_eq!((cfg.k, cfg.warmup_bins, cfg.max_gap, cfg.top_n), (3.0, 144, 1, 10));
        let cfg = RunConfig::resolve(ConfigLayer { bin_size: Some("1m".into()), ..layer("in") }).unwrap();
        assert_eq!(cfg.warmup_bins, 1440);
    }

    #[test]
    fn precedence_cli_over_file_over_defaults() {
        let file: ConfigLayer = toml::from_str("k = 4.0\nmax_gap = 2\ninput = \"file.jsonl\"\n").unwrap();
        let cli = ConfigLayer { k: Some(5.0), ..ConfigLayer::default() };
        let cfg = RunConfig::resolve(cli.or(file)).unwrap();
        assert_eq!((cfg.k, cfg.max_gap, cfg.input.as_str()), (5.0, 2, "file.jsonl"));

        let echoed: ConfigLayer = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(RunConfig::resolve(echoed).unwrap(), cfg);
    }

    #[test]
    fn invalid_values() {
        assert!(RunConfig::resolve(ConfigLayer { k: Some(0.0), ..layer("x") }).is_err());
        assert!(RunConfig::resolve(ConfigLayer { place_level: Some("galaxy".into()), ..layer("x") }).is_err());
        assert!(RunConfig::resolve(ConfigLayer::default()).is_err());
        assert!(toml::from_str::<ConfigLayer>("colour = 1").is_err());
    }

    #[test]
    fn missing_boundaries_file() {
        let cfg = RunConfig::resolve(ConfigLayer { boundaries: Some("/nonexistent/b.geojson".into()), ..layer("-") })
            .unwrap();
        assert!(matches!(cfg.check_paths(), Err(ConfigError::MissingPath { what: "boundaries file", .. })));
    }
}
