//! Append-only record logs and checkpoint files under a data directory.
//!
//! ```text
//! <data_dir>/bins.log
//! <data_dir>/events.log
//! <data_dir>/checkpoints/NNN.ckpt
//! ```
//!
//! A log record is `[u32 len][u32 crc32][payload]`, little-endian. On open,
//! a torn or corrupt tail is cut off at the last good record.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use geopulse_core::codec::{DecodeError, Decoder, Encoder};
use thiserror::Error;

const FRAME_HEADER: usize = 8;
const CHECKPOINT_MAGIC: &[u8; 4] = b"GPCK";
const CHECKPOINT_VERSION: u8 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("storage full while writing {path}")]
    StorageFull { path: PathBuf },
    #[error("i/o failure on {path}: {source}")]
    IoFailure { path: PathBuf, source: io::Error },
    #[error("corrupt checkpoint {path}: {reason}")]
    CorruptCheckpoint { path: PathBuf, reason: String },
    #[error("checkpoint was written with a different configuration (fingerprint {found:016x}, expected {expected:016x})")]
    ConfigMismatch { expected: u64, found: u64 },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| match source.kind() {
        io::ErrorKind::StorageFull => StoreError::StorageFull { path: path.to_path_buf() },
        _ => StoreError::IoFailure { path: path.to_path_buf(), source },
    }
}

fn frame(payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(FRAME_HEADER + payload.len());
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(&crc32fast::hash(payload).to_le_bytes());
    out.extend_from_slice(payload);
    out
}

/// Splits `bytes` into record payloads, returning them with the length of
/// the valid prefix.
fn scan(bytes: &[u8]) -> (Vec<&[u8]>, usize) {
    let mut records = Vec::new();
    let mut pos = 0;
    while bytes.len() - pos >= FRAME_HEADER {
        let len = u32::from_le_bytes(bytes[pos..pos + 4].try_into().expect("4 bytes")) as usize;
        let crc = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().expect("4 bytes"));
        let Some(payload) = bytes.get(pos + FRAME_HEADER..pos + FRAME_HEADER + len) else {
            break;
        };
        if crc32fast::hash(payload) != crc {
            break;
        }
        records.push(payload);
        pos += FRAME_HEADER + len;
    }
    (records, pos)
}

/// Reads every intact record of a log file; a missing file is empty.
pub fn read_records(path: &Path) -> Result<Vec<Vec<u8>>, StoreError> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(path)(e)),
    };
    Ok(scan(&bytes).0.into_iter().map(<[u8]>::to_vec).collect())
}

/// Single-writer append-only log.
#[derive(Debug)]
pub struct RecordLog {
    path: PathBuf,
    file: File,
    len: u64,
}

impl RecordLog {
    /// Opens or creates the log, discarding any torn tail.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let path = path.into();
        let mut file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(false)
            .open(&path)
            .map_err(io_err(&path))?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes).map_err(io_err(&path))?;
        let (_, valid) = scan(&bytes);
        if valid < bytes.len() {
            file.set_len(valid as u64).map_err(io_err(&path))?;
            file.sync_all().map_err(io_err(&path))?;
        }
        file.seek(SeekFrom::Start(valid as u64)).map_err(io_err(&path))?;
        Ok(RecordLog { path, file, len: valid as u64 })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Byte length of the intact log.
    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn append(&mut self, payload: &[u8]) -> Result<(), StoreError> {
        self.append_all(std::iter::once(payload))
    }

    /// Appends the records in order; all of them are durable on return.
    pub fn append_all<'a>(&mut self, payloads: impl IntoIterator<Item = &'a [u8]>) -> Result<(), StoreError> {
        let mut buf = Vec::new();
        for p in payloads {
            buf.extend_from_slice(&frame(p));
        }
        if buf.is_empty() {
            return Ok(());
        }
        self.file.write_all(&buf).map_err(io_err(&self.path))?;
        self.file.sync_data().map_err(io_err(&self.path))?;
        self.len += buf.len() as u64;
        Ok(())
    }

    /// Cuts the log back to `len` bytes (a record boundary from [`RecordLog::len`]).
    pub fn truncate(&mut self, len: u64) -> Result<(), StoreError> {
        self.file.set_len(len).map_err(io_err(&self.path))?;
        self.file.seek(SeekFrom::Start(len)).map_err(io_err(&self.path))?;
        self.file.sync_all().map_err(io_err(&self.path))?;
        self.len = len;
        Ok(())
    }

    pub fn records(&self) -> Result<Vec<Vec<u8>>, StoreError> {
        read_records(&self.path)
    }
}

/// Everything needed to resume a detection run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Checkpoint {
    pub config_hash: u64,
    pub bins_log_len: u64,
    pub events_log_len: u64,
    /// Length of the events output file, if one is written.
    pub out_len: u64,
    /// Open bin index per place.
    pub as_of_bins: Vec<(String, i64)>,
    pub pipeline: Vec<u8>,
    pub ingest: Vec<u8>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        for b in CHECKPOINT_MAGIC {
            enc.u8(*b);
        }
        enc.u8(CHECKPOINT_VERSION);
        enc.u64(self.config_hash);
        enc.u64(self.bins_log_len);
        enc.u64(self.events_log_len);
        enc.u64(self.out_len);
        enc.len(self.as_of_bins.len());
        for (place, bin) in &self.as_of_bins {
            enc.str(place);
            enc.i64(*bin);
        }
        enc.bytes(&self.pipeline);
        enc.bytes(&self.ingest);
        let mut body = enc.finish();
        let crc = crc32fast::hash(&body);
        body.extend_from_slice(&crc.to_le_bytes());
        body
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, String> {
        let Some((body, crc)) = bytes.split_last_chunk::<4>() else {
            return Err("file too short".into());
        };
        if crc32fast::hash(body) != u32::from_le_bytes(*crc) {
            return Err("checksum mismatch".into());
        }
        Self::decode(body).map_err(|e| e.to_string())
    }

    fn decode(body: &[u8]) -> Result<Self, DecodeError> {
        let mut dec = Decoder::new(body);
        for b in CHECKPOINT_MAGIC {
            if dec.u8()? != *b {
                return Err(DecodeError::Invalid("not a checkpoint file"));
            }
        }
        let version = dec.u8()?;
        if version != CHECKPOINT_VERSION {
            return Err(DecodeError::Version { found: version, expected: CHECKPOINT_VERSION });
        }
        let config_hash = dec.u64()?;
        let bins_log_len = dec.u64()?;
        let events_log_len = dec.u64()?;
        let out_len = dec.u64()?;
        let n = dec.len(16)?;
        let as_of_bins = (0..n).map(|_| Ok((dec.str()?, dec.i64()?))).collect::<Result<Vec<_>, DecodeError>>()?;
        let pipeline = dec.bytes()?;
        let ingest = dec.bytes()?;
        dec.finish()?;
        Ok(Checkpoint { config_hash, bins_log_len, events_log_len, out_len, as_of_bins, pipeline, ingest })
    }
}

/// The data directory of one detector.
#[derive(Debug)]
pub struct Store {
    dir: PathBuf,
    pub bins: RecordLog,
    pub events: RecordLog,
}

impl Store {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let dir = dir.into();
        let ckpt_dir = dir.join("checkpoints");
        fs::create_dir_all(&ckpt_dir).map_err(io_err(&ckpt_dir))?;
        let bins = RecordLog::open(dir.join("bins.log"))?;
        let events = RecordLog::open(dir.join("events.log"))?;
        Ok(Store { dir, bins, events })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Empties both logs and removes all checkpoints.
    pub fn reset(&mut self) -> Result<(), StoreError> {
        self.bins.truncate(0)?;
        self.events.truncate(0)?;
        for (_, path) in self.checkpoint_files()? {
            fs::remove_file(&path).map_err(io_err(&path))?;
        }
        Ok(())
    }

    fn checkpoint_files(&self) -> Result<Vec<(u64, PathBuf)>, StoreError> {
        let ckpt_dir = self.dir.join("checkpoints");
        let mut files = Vec::new();
        for entry in fs::read_dir(&ckpt_dir).map_err(io_err(&ckpt_dir))? {
            let path = entry.map_err(io_err(&ckpt_dir))?.path();
            let seq = path
                .file_name()
                .and_then(|n| n.to_str())
                .and_then(|n| n.strip_suffix(".ckpt"))
                .and_then(|n| n.parse::<u64>().ok());
            if let Some(seq) = seq {
                files.push((seq, path));
            }
        }
        files.sort();
        Ok(files)
    }

    /// Writes the next numbered checkpoint atomically and returns its path.
    pub fn write_checkpoint(&self, ckpt: &Checkpoint) -> Result<PathBuf, StoreError> {
        let next = self.checkpoint_files()?.last().map_or(0, |(n, _)| n + 1);
        let ckpt_dir = self.dir.join("checkpoints");
        let path = ckpt_dir.join(format!("{next:03}.ckpt"));
        let tmp = ckpt_dir.join(format!("{next:03}.ckpt.tmp"));
        {
            let file = File::create(&tmp).map_err(io_err(&tmp))?;
            let mut w = BufWriter::new(file);
            w.write_all(&ckpt.to_bytes()).map_err(io_err(&tmp))?;
            let file = w.into_inner().map_err(|e| io_err(&tmp)(e.into_error()))?;
            file.sync_all().map_err(io_err(&tmp))?;
        }
        fs::rename(&tmp, &path).map_err(io_err(&path))?;
        if let Ok(d) = File::open(&ckpt_dir) {
            let _ = d.sync_all();
        }
        Ok(path)
    }

    /// The newest checkpoint, or `None` for a fresh directory. An empty
    /// checkpoint file also means a fresh start.
    pub fn latest_checkpoint(&self) -> Result<Option<Checkpoint>, StoreError> {
        let Some((_, path)) = self.checkpoint_files()?.pop() else {
            return Ok(None);
        };
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        if bytes.is_empty() {
            return Ok(None);
        }
        Checkpoint::from_bytes(&bytes)
            .map(Some)
            .map_err(|reason| StoreError::CorruptCheckpoint { path, reason })
    }

    /// Latest checkpoint, checked against the running configuration.
    pub fn restore(&self, config_hash: u64) -> Result<Option<Checkpoint>, StoreError> {
        match self.latest_checkpoint()? {
            Some(c) if c.config_hash != config_hash => {
                Err(StoreError::ConfigMismatch { expected: config_hash, found: c.config_hash })
            }
            other => Ok(other),
        }
    }
}
