//! Command-line interface.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::PathBuf;

use chrono::Utc;
use clap::{Args, Parser, Subcommand};
use geopulse_core::score::{score, OutlierSpan};
use geopulse_core::Timestamp;
use serde_json::json;

use crate::boundaries::load_boundaries;
use crate::config::{parse_bin_size, ConfigLayer, RunConfig};
use crate::ingest::parse_timestamp;
use crate::records::{parse_events, parse_truth, BinRecord};
use crate::run::{run_detect, DetectOptions};
use crate::store::read_records;
use crate::synth::{describe, generate_stream, ScenarioConfig};

#[derive(Debug, Parser)]
#[command(name = "geopulse", version, about = "Location-based event detection over geo-tagged message streams")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Detect events in a message stream.
    Detect(DetectArgs),
    /// Generate a labelled synthetic scenario.
    Synth(SynthArgs),
    /// Score detected events against ground truth.
    Score(ScoreArgs),
    /// Export one place's binned series with its outlier flags as CSV.
    ExportSeries(ExportArgs),
    /// Resolve a coordinate to its places.
    Resolve(ResolveArgs),
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    /// TOML file with defaults for any of the flags below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// JSONL file, `-` for stdin, or tcp://host:port.
    #[arg(long)]
    pub input: Option<String>,
    /// Replay speed multiplier (0 = as fast as possible).
    #[arg(long)]
    pub rate: Option<f64>,
    /// Reordering window in seconds.
    #[arg(long)]
    pub reorder_window: Option<f64>,
    /// GeoJSON FeatureCollection of place boundaries.
    #[arg(long)]
    pub boundaries: Option<PathBuf>,
    /// country, admin, city, neighborhood or poi.
    #[arg(long)]
    pub place_level: Option<String>,
    /// Bin size such as 1m, 5m, 10m; must divide a day.
    #[arg(long)]
    pub bin_size: Option<String>,
    /// Deviation threshold in standard deviations.
    #[arg(long)]
    pub k: Option<f64>,
    #[arg(long)]
    pub warmup_bins: Option<u64>,
    /// Quiet bins allowed inside one event window.
    #[arg(long)]
    pub max_gap: Option<u64>,
    /// Novelty threshold for creating mixture components.
    #[arg(long)]
    pub tau_nov: Option<f64>,
    /// Expected peak count per bin; skips range estimation during warmup.
    #[arg(long)]
    pub expected_peak: Option<f64>,
    /// UTC midnight that bin 0 starts at.
    #[arg(long)]
    pub epoch: Option<String>,
    /// Seconds a message timestamp may lie in the future.
    #[arg(long)]
    pub max_skew: Option<f64>,
    /// Stopword file (one term per line, `#` comments).
    #[arg(long)]
    pub stopwords: Option<PathBuf>,
    #[arg(long)]
    pub top_n: Option<usize>,
    /// Directory for bins.log, events.log and checkpoints.
    #[arg(long, env = "GEOPULSE_DATA_DIR")]
    pub data_dir: Option<PathBuf>,
    /// Event JSONL output; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Continue from the newest checkpoint in the data directory.
    #[arg(long)]
    pub resume: bool,
    /// Write a checkpoint every N input lines.
    #[arg(long, default_value_t = 0)]
    pub checkpoint_every: u64,
    /// Stop after N input lines without flushing open bins.
    #[arg(long)]
    pub stop_after: Option<u64>,
    /// Accept timestamps in the future.
    #[arg(long)]
    pub no_future_check: bool,
}

impl DetectArgs {
    fn layer(&self) -> ConfigLayer {
        ConfigLayer {
            input: self.input.clone(),
            rate: self.rate,
            reorder_window: self.reorder_window,
            boundaries: self.boundaries.clone(),
            place_level: self.place_level.clone(),
            bin_size: self.bin_size.clone(),
            k: self.k,
            warmup_bins: self.warmup_bins,
            max_gap: self.max_gap,
            tau_nov: self.tau_nov,
            expected_peak: self.expected_peak,
            epoch: self.epoch.clone(),
            max_skew: self.max_skew,
            stopwords: self.stopwords.clone(),
            top_n: self.top_n,
            data_dir: self.data_dir.clone(),
            out: self.out.clone(),
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    /// Output directory for messages.jsonl, truth.jsonl and boundaries.geojson.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub events: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    /// Matching tolerance on each side of a truth event, in bins.
    #[arg(long, default_value_t = 1)]
    pub tolerance_bins: i64,
    /// Bin size for the tolerance when the events file is empty.
    #[arg(long, default_value = "10m")]
    pub bin_size: String,
    /// Print the report as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub place: String,
    #[arg(long, env = "GEOPULSE_DATA_DIR")]
    pub data_dir: PathBuf,
    /// First bin start to include (RFC 3339).
    #[arg(long)]
    pub from: Option<String>,
    /// Bin starts before this instant are included (RFC 3339).
    #[arg(long)]
    pub to: Option<String>,
    /// CSV output; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write expectations and outlier indices as JSON for plotting.
    #[arg(long)]
    pub plot: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ResolveArgs {
    #[arg(long)]
    pub boundaries: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    pub lat: f64,
    #[arg(long, allow_hyphen_values = true)]
    pub lon: f64,
}

/// A failed command: message and process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

fn config_err(e: impl ToString) -> Failure {
    Failure { code: 1, message: e.to_string() }
}

fn runtime_err(e: impl ToString) -> Failure {
    Failure { code: 2, message: e.to_string() }
}

/// Parses arguments and runs one command, returning the exit code.
pub fn main_with(args: impl IntoIterator<Item = impl Into<OsString> + Clone>, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = if e.use_stderr() { write!(err, "{e}") } else { write!(out, "{e}") };
            return code;
        }
    };
    match dispatch(cli.command, out, err) {
        Ok(()) => 0,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

fn dispatch(command: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), Failure> {
    match command {
        Command::Detect(a) => cmd_detect(a, err),
        Command::Synth(a) => cmd_synth(a, out),
        Command::Score(a) => cmd_score(a, out),
        Command::ExportSeries(a) => cmd_export_series(a, out),
        Command::Resolve(a) => cmd_resolve(a, out),
    }
}

fn cmd_detect(args: DetectArgs, err: &mut dyn Write) -> Result<(), Failure> {
    let file = match &args.config {
        Some(p) => ConfigLayer::from_file(p).map_err(config_err)?,
        None => ConfigLayer::default(),
    };
    let cfg = RunConfig::resolve(args.layer().or(file)).map_err(config_err)?;
    let _ = write!(err, "# effective config\n{}", cfg.to_toml());
    let opts = DetectOptions {
        resume: args.resume,
        checkpoint_every: args.checkpoint_every,
        stop_after: args.stop_after,
        now: (!args.no_future_check).then(|| Timestamp(Utc::now().timestamp_millis())),
    };
    let summary = run_detect(&cfg, &opts).map_err(|e| Failure { code: e.exit_code(), message: e.to_string() })?;
    let _ = writeln!(err, "{}", summary.line());
    Ok(())
}

fn cmd_synth(args: SynthArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let cfg = ScenarioConfig::from_file(&args.scenario).map_err(config_err)?;
    let scenario = generate_stream(&cfg).map_err(config_err)?;
    scenario.write_to(&args.out).map_err(runtime_err)?;
    let _ = writeln!(out, "{}", describe(&scenario));
    Ok(())
}

fn cmd_score(args: ScoreArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let read = |p: &PathBuf| fs::read_to_string(p).map_err(|e| config_err(format!("{}: {e}", p.display())));
    let events = parse_events(&read(&args.events)?).map_err(config_err)?;
    let truth = parse_truth(&read(&args.truth)?).map_err(config_err)?;
    let bin_ms = match events.first() {
        Some(e) => e.bin_secs * 1000,
        None => parse_bin_size(&args.bin_size).map_err(config_err)?.millis(),
    };
    let mut spans: Vec<OutlierSpan> = Vec::new();
    for e in &events {
        spans.extend(e.outlier_spans().map_err(config_err)?);
    }
    let report = score(&spans, &truth, args.tolerance_bins * bin_ms);
    if args.json {
        let j = json!({
            "total_outliers": report.total_outliers,
            "event_windows": events.len(),
            "detected_happened": report.detected_happened,
            "unique_events": report.unique_events,
            "duplicate_detections": report.duplicate_detections,
            "missed_events": report.missed_events,
            "precision": report.precision,
            "precision_defined": report.precision_defined,
        });
        let _ = writeln!(out, "{j}");
    } else {
        let _ = writeln!(
            out,
            "total_outliers={} event_windows={} detected_happened={} unique_events={} duplicate_detections={} missed_events={} precision={:.2}%{}",
            report.total_outliers,
            events.len(),
            report.detected_happened,
            report.unique_events,
            report.duplicate_detections,
            report.missed_events,
            report.precision_percent(),
            if report.precision_defined { "" } else { " (undefined: no outliers)" }
        );
    }
    Ok(())
}

fn cmd_export_series(args: ExportArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let bound = |s: &Option<String>| s.as_deref().map(parse_timestamp).transpose().map_err(config_err);
    let (from, to) = (bound(&args.from)?, bound(&args.to)?);
    let log = args.data_dir.join("bins.log");
    if !log.is_file() {
        return Err(config_err(format!("no bins log at {}", log.display())));
    }
    let mut rows = Vec::new();
    let mut known = false;
    for rec in read_records(&log).map_err(runtime_err)? {
        let bin = BinRecord::from_bytes(&rec).map_err(runtime_err)?;
        if bin.place_id != args.place {
            continue;
        }
        known = true;
        let start = parse_timestamp(&bin.bin_start).map_err(runtime_err)?;
        if from.is_some_and(|f| start < f) || to.is_some_and(|t| start >= t) {
            continue;
        }
        rows.push(bin);
    }
    if !known {
        return Err(config_err(format!("UnknownPlace: {} has no bins in {}", args.place, log.display())));
    }

    let flag = |b: bool| if b { 1 } else { 0 };
    let mut csv = String::from("bin_start,tweets,users,tweets_flag,users_flag,intersect_flag\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.bin_start,
            r.tweets,
            r.users,
            flag(r.tweets_flag),
            flag(r.users_flag),
            flag(r.intersect_flag)
        ));
    }
    match &args.out {
        Some(p) => fs::write(p, csv).map_err(|e| runtime_err(format!("{}: {e}", p.display())))?,
        None => {
            let _ = out.write_all(csv.as_bytes());
        }
    }
    if let Some(p) = &args.plot {
        let plot = json!({
            "place_id": args.place,
            "bin_start": rows.iter().map(|r| &r.bin_start).collect::<Vec<_>>(),
            "tweets": rows.iter().map(|r| r.tweets).collect::<Vec<_>>(),
            "users": rows.iter().map(|r| r.users).collect::<Vec<_>>(),
            "tweets_expected": rows.iter().map(|r| r.tweets_expected).collect::<Vec<_>>(),
            "users_expected": rows.iter().map(|r| r.users_expected).collect::<Vec<_>>(),
            "tweets_outliers": rows.iter().enumerate().filter(|(_, r)| r.tweets_flag).map(|(i, _)| i).collect::<Vec<_>>(),
            "users_outliers": rows.iter().enumerate().filter(|(_, r)| r.users_flag).map(|(i, _)| i).collect::<Vec<_>>(),
            "outliers": rows.iter().enumerate().filter(|(_, r)| r.intersect_flag).map(|(i, _)| i).collect::<Vec<_>>(),
        });
        fs::write(p, plot.to_string() + "\n").map_err(|e| runtime_err(format!("{}: {e}", p.display())))?;
    }
    Ok(())
}

fn cmd_resolve(args: ResolveArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let index = load_boundaries(&args.boundaries).map_err(config_err)?;
    geopulse_core::Coord::new(args.lat, args.lon).map_err(config_err)?;
    let places: Vec<_> = index
        .locate(args.lat, args.lon)
        .into_iter()
        .map(|p| json!({"place_id": p.place_id, "name": p.name, "level": p.level.as_str()}))
        .collect();
    let _ = writeln!(out, "{}", json!({"lat": args.lat, "lon": args.lon, "places": places}));
    Ok(())
}

