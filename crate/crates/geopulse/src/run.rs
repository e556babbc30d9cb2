//! The `detect` driver: ingest, resolve, detect, persist and checkpoint.

use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};

use geopulse_core::pipeline::{PipelineError, PipelineOutput, PipelineStats};
use geopulse_core::{BoundaryIndex, Pipeline, Timestamp};
use serde::Serialize;
use thiserror::Error;

use crate::boundaries::{load_boundaries, BoundaryError};
use crate::config::{ConfigError, RunConfig};
use crate::ingest::{IngestError, IngestStats, MessageStream};
use crate::records::{BinRecord, EventRecord};
use crate::store::{Checkpoint, Store, StoreError};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Boundary(#[from] BoundaryError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("cannot write {path}: {source}")]
    Output { path: PathBuf, source: io::Error },
}

impl RunError {
    /// 1 for configuration problems, 2 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Boundary(_) => 1,
            RunError::Store(StoreError::ConfigMismatch { .. }) => 1,
            RunError::Pipeline(PipelineError::ConfigMismatch { .. } | PipelineError::Config(_)) => 1,
            _ => 2,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct DetectOptions {
    /// Continue from the newest checkpoint in the data directory.
    pub resume: bool,
    /// Write a checkpoint every this many input lines; 0 disables.
    pub checkpoint_every: u64,
    /// Stop (without the end-of-stream flush) after this many input lines.
    pub stop_after: Option<u64>,
    /// Clock for rejecting future timestamps.
    pub now: Option<Timestamp>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RunSummary {
    pub lines_read: u64,
    pub messages: u64,
    pub rejected: u64,
    pub duplicates: u64,
    pub late_dropped: u64,
    pub routed: u64,
    pub unresolved: u64,
    pub unrouted: u64,
    pub bins: u64,
    pub outlier_bins: u64,
    pub events: u64,
    pub checkpoints: u64,
    pub completed: bool,
}

impl RunSummary {
    fn new(ingest: IngestStats, pipeline: PipelineStats, checkpoints: u64, completed: bool) -> Self {
        RunSummary {
            lines_read: ingest.lines_read,
            messages: ingest.yielded,
            rejected: ingest.rejected(),
            duplicates: ingest.duplicates,
            late_dropped: ingest.late_dropped,
            routed: pipeline.routed,
            unresolved: pipeline.unresolved,
            unrouted: pipeline.unrouted,
            bins: pipeline.bins,
            outlier_bins: pipeline.outlier_bins,
            events: pipeline.events,
            checkpoints,
            completed,
        }
    }

    pub fn line(&self) -> String {
        format!(
            "lines={} messages={} rejected={} late_dropped={} bins={} outlier_bins={} events={}{}",
            self.lines_read,
            self.messages,
            self.rejected,
            self.late_dropped,
            self.bins,
            self.outlier_bins,
            self.events,
            if self.completed { "" } else { " (stopped early)" }
        )
    }
}

struct Sinks {
    store: Option<Store>,
    out: Box<dyn Write>,
    out_path: Option<PathBuf>,
    out_len: u64,
}

impl Sinks {
    fn write(&mut self, output: PipelineOutput) -> Result<(), RunError> {
        if let Some(store) = self.store.as_mut() {
            let bins: Vec<Vec<u8>> = output.verdicts.iter().map(|v| BinRecord::from_verdict(v).to_bytes()).collect();
            store.bins.append_all(bins.iter().map(Vec::as_slice))?;
        }
        for report in &output.reports {
            let line = EventRecord::from_report(report).to_line();
            if let Some(store) = self.store.as_mut() {
                store.events.append(line.as_bytes())?;
            }
            writeln!(self.out, "{line}").map_err(|e| self.out_err(e))?;
            self.out_len += line.len() as u64 + 1;
        }
        if !output.reports.is_empty() {
            self.out.flush().map_err(|e| self.out_err(e))?;
        }
        Ok(())
    }

    fn out_err(&self, source: io::Error) -> RunError {
        RunError::Output { path: self.out_path.clone().unwrap_or_else(|| "<stdout>".into()), source }
    }
}

fn open_out(path: &Path, keep: Option<u64>) -> Result<File, RunError> {
    let err = |source| RunError::Output { path: path.to_path_buf(), source };
    let file = OpenOptions::new().write(true).create(true).truncate(false).open(path).map_err(err)?;
    file.set_len(keep.unwrap_or(0)).map_err(err)?;
    let mut file = file;
    io::Seek::seek(&mut file, io::SeekFrom::End(0)).map_err(err)?;
    Ok(file)
}

/// Runs detection end to end over the configured source.
pub fn run_detect(cfg: &RunConfig, opts: &DetectOptions) -> Result<RunSummary, RunError> {
    cfg.check_paths()?;
    let index = match &cfg.boundaries {
        Some(p) => load_boundaries(p)?,
        None => BoundaryIndex::build(Vec::new()).expect("an empty index is valid"),
    };
    let reader = cfg.source().open()?;
    run_detect_with(cfg, opts, &index, reader)
}

/// [`run_detect`] over an already opened reader.
pub fn run_detect_with<R: BufRead>(
    cfg: &RunConfig,
    opts: &DetectOptions,
    index: &BoundaryIndex,
    reader: R,
) -> Result<RunSummary, RunError> {
    let pipeline_config = cfg.pipeline_config()?;
    let fingerprint = pipeline_config.fingerprint();
    let ingest_config = cfg.ingest_config(opts.now);

    let mut store = cfg.data_dir.as_ref().map(Store::open).transpose()?;
    if opts.resume && store.is_none() {
        return Err(ConfigError::Invalid { key: "data_dir", reason: "resuming needs a data directory".into() }.into());
    }
    let checkpoint = match store.as_mut() {
        Some(s) if opts.resume => s.restore(fingerprint)?,
        Some(s) => {
            s.reset()?;
            None
        }
        None => None,
    };

    let (mut pipeline, mut stream, out_keep) = match &checkpoint {
        Some(c) => {
            let s = store.as_mut().expect("checkpoint implies a store");
            s.bins.truncate(c.bins_log_len)?;
            s.events.truncate(c.events_log_len)?;
            (
                Pipeline::restore(pipeline_config, &c.pipeline)?,
                MessageStream::resume(reader, ingest_config, &c.ingest)?,
                Some(c.out_len),
            )
        }
        None => (Pipeline::new(pipeline_config)?, MessageStream::new(reader, ingest_config), None),
    };

    let out: Box<dyn Write> = match &cfg.out {
        Some(p) => Box::new(io::BufWriter::new(open_out(p, out_keep)?)),
        None => Box::new(io::stdout()),
    };
    let mut sinks = Sinks { store, out, out_path: cfg.out.clone(), out_len: out_keep.unwrap_or(0) };
    let mut checkpoints = 0;

    loop {
        let before = stream.stats().lines_read;
        let Some(batch) = stream.step()? else { break };
        for msg in batch {
            let located = index.resolve(msg);
            sinks.write(pipeline.push(&located)?)?;
        }
        let lines = stream.stats().lines_read;
        if lines == before {
            continue;
        }
        if opts.checkpoint_every > 0 && lines % opts.checkpoint_every == 0 {
            if let Some(store) = sinks.store.as_ref() {
                sinks.out.flush().map_err(|e| sinks.out_err(e))?;
                store.write_checkpoint(&Checkpoint {
                    config_hash: fingerprint,
                    bins_log_len: store.bins.len(),
                    events_log_len: store.events.len(),
                    out_len: sinks.out_len,
                    as_of_bins: pipeline.as_of_bins().into_iter().collect(),
                    pipeline: pipeline.checkpoint(),
                    ingest: stream.save_state(),
                })?;
                checkpoints += 1;
            }
        }
        if opts.stop_after == Some(lines) {
            sinks.out.flush().map_err(|e| sinks.out_err(e))?;
            return Ok(RunSummary::new(stream.stats(), pipeline.stats(), checkpoints, false));
        }
    }
    sinks.write(pipeline.finish()?)?;
    sinks.out.flush().map_err(|e| sinks.out_err(e))?;

    let summary = RunSummary::new(stream.stats(), pipeline.stats(), checkpoints, true);
    if let Some(out) = &cfg.out {
        let mut meta_path = out.clone().into_os_string();
        meta_path.push(".meta.json");
        let meta = serde_json::json!({
            "config": cfg,
            "summary": summary,
            "counts": {"outlier_bins": summary.outlier_bins, "event_windows": summary.events},
        });
        let meta_path = PathBuf::from(meta_path);
        std::fs::write(&meta_path, serde_json::to_string_pretty(&meta).expect("serializable") + "\n")
            .map_err(|source| RunError::Output { path: meta_path, source })?;
    }
    Ok(summary)
}
