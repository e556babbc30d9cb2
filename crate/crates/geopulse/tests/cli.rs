use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn geopulse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_geopulse")).args(args).env_remove("GEOPULSE_DATA_DIR").output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = geopulse(args);
    assert!(out.status.success(), "geopulse {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name).to_string_lossy().into_owned()
}

struct Work {
    dir: TempDir,
}

impl Work {
    fn new() -> Self {
        let w = Work { dir: tempfile::tempdir().unwrap() };
        ok(&["synth", "--scenario", &fixture("scenario.toml"), "--out", &w.p("scn")]);
        w
    }

    fn p(&self, name: &str) -> String {
        self.path(name).to_string_lossy().into_owned()
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn detect(&self, extra: &[&str]) -> Output {
        let (input, boundaries) = (self.p("scn/messages.jsonl"), self.p("scn/boundaries.geojson"));
        let mut args = vec!["detect", "--input", &input, "--boundaries", &boundaries];
        args.extend_from_slice(extra);
        geopulse(&args)
    }
}

fn field(line: &str, key: &str) -> u64 {
    let prefix = format!("{key}=");
    line.split_whitespace().find_map(|f| f.strip_prefix(&prefix)).unwrap().trim_end_matches('%').parse().unwrap()
}

#[test]
fn detect_then_score_finds_every_event() {
    let w = Work::new();
    let run = w.detect(&["--out", &w.p("events.jsonl"), "--data-dir", &w.p("data")]);
    assert!(run.status.success(), "{}", stderr(&run));
    let err = stderr(&run);
    assert!(err.starts_with("# effective config\n"));
    assert!(err.contains("k = 3.0"));
    let summary = err.lines().last().unwrap();
    assert_eq!(field(summary, "rejected"), 0);
    assert!(field(summary, "events") >= 3);

    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(w.path("events.jsonl.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["summary"]["events"].as_u64(), Some(field(summary, "events")));
    assert_eq!(meta["counts"]["outlier_bins"].as_u64(), Some(field(summary, "outlier_bins")));

    let score = ok(&["score", "--events", &w.p("events.jsonl"), "--truth", &w.p("scn/truth.jsonl")]);
    let line = stdout(&score);
    assert_eq!(field(&line, "unique_events"), 3, "{line}");
    assert_eq!(field(&line, "missed_events"), 0, "{line}");
    assert_eq!(field(&line, "total_outliers"), field(summary, "outlier_bins"));

    let json = ok(&["score", "--events", &w.p("events.jsonl"), "--truth", &w.p("scn/truth.jsonl"), "--json"]);
    let j: serde_json::Value = serde_json::from_str(&stdout(&json)).unwrap();
    assert_eq!(j["unique_events"], 3);
    assert_eq!(j["precision_defined"], true);

    // export-series agrees with the bins log
    let csv = ok(&["export-series", "--place", "munich", "--data-dir", &w.p("data")]);
    let text = stdout(&csv);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("bin_start,tweets,users,tweets_flag,users_flag,intersect_flag"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 6 * 144);
    for r in &rows {
        let (t, u) = (r[1].parse::<u64>().unwrap(), r[2].parse::<u64>().unwrap());
        assert!(u <= t);
        assert_eq!(r[5] == "1", r[3] == "1" && r[4] == "1");
    }
    assert!(rows.iter().any(|r| r[5] == "1"));

    let window = ok(&[
        "export-series", "--place", "munich", "--data-dir", &w.p("data"),
        "--from", "2012-02-21T00:00:00Z", "--to", "2012-02-22T00:00:00Z",
    ]);
    assert_eq!(stdout(&window).lines().count(), 1 + 144);

    let unknown = geopulse(&["export-series", "--place", "atlantis", "--data-dir", &w.p("data")]);
    assert_eq!(unknown.status.code(), Some(1));
    assert!(stderr(&unknown).contains("UnknownPlace"));
}

#[test]
fn missing_boundaries_is_a_config_error() {
    let w = Work::new();
    let out = geopulse(&["detect", "--input", &w.p("scn/messages.jsonl"), "--boundaries", &w.p("nope.geojson")]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn empty_input_yields_no_events() {
    let w = Work::new();
    fs::write(w.path("empty.jsonl"), "").unwrap();
    let out = ok(&["detect", "--input", &w.p("empty.jsonl"), "--out", &w.p("ev.jsonl")]);
    assert!(stderr(&out).lines().last().unwrap().ends_with("events=0"));
    assert_eq!(fs::read_to_string(w.path("ev.jsonl")).unwrap(), "");

    let score = ok(&["score", "--events", &w.p("ev.jsonl"), "--truth", &w.p("scn/truth.jsonl")]);
    let line = stdout(&score);
    assert_eq!(field(&line, "missed_events"), 3);
    assert!(line.contains("undefined"));
}

#[test]
fn config_file_sits_between_flags_and_defaults() {
    let w = Work::new();
    fs::write(w.path("cfg.toml"), "k = 4.0\nmax_gap = 2\nbin_size = \"5m\"\n").unwrap();
    let out = w.detect(&["--config", &w.p("cfg.toml"), "--k", "5", "--out", &w.p("ev.jsonl")]);
    assert!(out.status.success(), "{}", stderr(&out));
    let err = stderr(&out);
    let lines: Vec<&str> = err.lines().collect();
    let echoed: toml::Value = toml::from_str(&lines[1..lines.len() - 1].join("\n")).unwrap();
    assert_eq!(echoed["k"].as_float(), Some(5.0));
    assert_eq!(echoed["max_gap"].as_integer(), Some(2));
    assert_eq!(echoed["bin_size"].as_str(), Some("5m"));
    assert_eq!(echoed["warmup_bins"].as_integer(), Some(288));

    fs::write(w.path("bad.toml"), "colour = \"red\"\n").unwrap();
    let bad = w.detect(&["--config", &w.p("bad.toml")]);
    assert_eq!(bad.status.code(), Some(1));
    let bad_bin = w.detect(&["--bin-size", "7m"]);
    assert_eq!(bad_bin.status.code(), Some(1));
}

#[test]
fn resume_with_changed_parameters_is_refused() {
    let w = Work::new();
    let first = w.detect(&["--data-dir", &w.p("data"), "--out", &w.p("ev.jsonl"), "--checkpoint-every", "1000", "--stop-after", "5000"]);
    assert!(first.status.success(), "{}", stderr(&first));
    assert!(stderr(&first).contains("stopped early"));
    let changed = w.detect(&["--data-dir", &w.p("data"), "--out", &w.p("ev.jsonl"), "--resume", "--k", "4"]);
    assert_eq!(changed.status.code(), Some(1));
    assert!(stderr(&changed).contains("different configuration"), "{}", stderr(&changed));
}

#[test]
fn synth_is_deterministic() {
    let w = Work::new();
    ok(&["synth", "--scenario", &fixture("scenario.toml"), "--out", &w.p("again")]);
    for f in ["messages.jsonl", "truth.jsonl", "boundaries.geojson"] {
        assert_eq!(fs::read(w.path("scn").join(f)).unwrap(), fs::read(w.path("again").join(f)).unwrap(), "{f}");
    }
    let truth = fs::read_to_string(w.path("scn/truth.jsonl")).unwrap();
    assert_eq!(truth.lines().count(), 3);
}

#[test]
fn resolve_reports_city_and_country() {
    let w = Work::new();
    let out = ok(&["resolve", "--boundaries", &w.p("scn/boundaries.geojson"), "--lat", "59.9", "--lon", "10.75"]);
    let j: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let ids: Vec<&str> = j["places"].as_array().unwrap().iter().map(|p| p["place_id"].as_str().unwrap()).collect();
    assert!(ids.contains(&"oslo"), "{ids:?}");
    assert!(ids.contains(&"country-norway"), "{ids:?}");

    let sea = ok(&["resolve", "--boundaries", &w.p("scn/boundaries.geojson"), "--lat", "-30", "--lon", "-20"]);
    let j: serde_json::Value = serde_json::from_str(&stdout(&sea)).unwrap();
    assert!(j["places"].as_array().unwrap().is_empty());

    let bad = geopulse(&["resolve", "--boundaries", &w.p("scn/boundaries.geojson"), "--lat", "95", "--lon", "0"]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn help_and_bad_arguments() {
    assert!(geopulse(&["--help"]).status.success());
    assert_eq!(geopulse(&["detect", "--k"]).status.code(), Some(1));
    assert_eq!(geopulse(&["frobnicate"]).status.code(), Some(1));
}
