//! Append-only trial logs and the storage sink they are finalized into.
//!
//! A log is UTF-8 with one JSON object per line. The first line is a
//! [`TrialHeader`]; every following line is an [`Event`]. While a session
//! runs, its log lives in a spool directory as `<sessionId>.log.partial`.
//! Finalizing appends `session_end`, closes the file and renames it into the
//! sink as `<root>/<projectId>/<sessionId>.log` next to a `.meta` document.
//! If the sink cannot take it, the log stays in the spool as
//! `<sessionId>.log` with its `.meta`.

use std::collections::HashSet;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::DemoDataset;
use crate::env::{ActionLabel, EnvId, Observation};
use crate::protocol::{ControlVerb, UiConfig};

pub const LOG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TrialHeader {
    pub version: u32,
    pub session_id: String,
    pub project_id: String,
    pub user_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    SessionStart,
    UiConfig,
    FrameEmitted,
    Command,
    Feedback,
    Click,
    Control,
    EpisodeEnd,
    SessionEnd,
    Info,
}

/// Who chose the action executed for a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionSource {
    Human,
    Agent,
    Default,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FrameRecord {
    pub frame_id: u64,
    pub episode: u64,
    pub step: u32,
    pub score: f64,
    /// State shown by this frame.
    pub obs: Vec<f64>,
    /// The transition that produced this frame, absent for episode-start frames.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transition: Option<TransitionRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TransitionRecord {
    pub state_before: Vec<f64>,
    pub action: usize,
    pub label: ActionLabel,
    pub source: ActionSource,
    pub reward: f64,
    pub done: bool,
    pub terminated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case", rename_all_fields = "camelCase")]
pub enum EventPayload {
    SessionStart {
        project_id: String,
        user_id: String,
        env_id: EnvId,
        seed: u64,
        mode: String,
        agent_kind: Option<String>,
        debug: bool,
    },
    UiConfig(UiConfig),
    FrameEmitted(FrameRecord),
    Command {
        action: ActionLabel,
        frame_id: u64,
    },
    Feedback {
        value: i64,
        frame_id: u64,
        /// Whether the agent was updated.
        applied: bool,
        budget_used: u64,
    },
    Click {
        x: u32,
        y: u32,
        frame_id: u64,
    },
    Control {
        verb: ControlVerb,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        detail: Option<String>,
    },
    EpisodeEnd {
        episode: u64,
        steps: u32,
        #[serde(rename = "return")]
        total_return: f64,
        reason: String,
    },
    SessionEnd {
        reason: String,
    },
    Info {
        text: String,
    },
}

impl EventPayload {
    pub fn kind(&self) -> EventKind {
        match self {
            EventPayload::SessionStart { .. } => EventKind::SessionStart,
            EventPayload::UiConfig(_) => EventKind::UiConfig,
            EventPayload::FrameEmitted(_) => EventKind::FrameEmitted,
            EventPayload::Command { .. } => EventKind::Command,
            EventPayload::Feedback { .. } => EventKind::Feedback,
            EventPayload::Click { .. } => EventKind::Click,
            EventPayload::Control { .. } => EventKind::Control,
            EventPayload::EpisodeEnd { .. } => EventKind::EpisodeEnd,
            EventPayload::SessionEnd { .. } => EventKind::SessionEnd,
            EventPayload::Info { .. } => EventKind::Info,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Event {
    /// Wall clock, milliseconds since the Unix epoch.
    pub timestamp_ms: u64,
    /// Milliseconds since the session started, from a monotonic clock.
    pub mono_ms: u64,
    pub session_id: String,
    #[serde(flatten)]
    pub payload: EventPayload,
}

impl Event {
    pub fn kind(&self) -> EventKind {
        self.payload.kind()
    }
}

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("event timestamp {got} is earlier than the previous {previous}")]
    NonMonotonic { previous: u64, got: u64 },
    #[error("log is closed")]
    Closed,
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TrialCounters {
    pub events: u64,
    pub frames: u64,
    pub episodes: u64,
    pub commands: u64,
    pub executed_commands: u64,
    pub feedback: u64,
    pub feedback_applied: u64,
    pub clicks: u64,
    pub dropped_events: u64,
    pub budget_used: u64,
    pub budget_max: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TrialMetadata {
    pub version: u32,
    pub session_id: String,
    pub project_id: String,
    pub user_id: String,
    pub reason: String,
    pub started_at_ms: u64,
    pub ended_at_ms: u64,
    pub duration_ms: u64,
    pub counters: TrialCounters,
}

/// Where a finalized trial ended up.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StoredTrial {
    Stored { log: PathBuf, meta: PathBuf },
    /// The sink refused the trial; it is kept in the spool directory.
    Spooled { log: PathBuf, meta: PathBuf, error: String },
}

impl StoredTrial {
    pub fn log_path(&self) -> &Path {
        match self {
            StoredTrial::Stored { log, .. } | StoredTrial::Spooled { log, .. } => log,
        }
    }

    pub fn meta_path(&self) -> &Path {
        match self {
            StoredTrial::Stored { meta, .. } | StoredTrial::Spooled { meta, .. } => meta,
        }
    }
}

/// Long-term destination for finished trials.
pub trait StorageSink: Send + Sync {
    /// Moves the closed log at `log` and the metadata document into the sink,
    /// returning the stored log and metadata paths. Must not leave a
    /// partially written log visible.
    fn store(&self, meta: &TrialMetadata, log: &Path) -> io::Result<(PathBuf, PathBuf)>;
}

/// Stores trials under `<root>/<projectId>/`. The root must already exist.
#[derive(Debug, Clone)]
pub struct LocalDirSink {
    root: PathBuf,
}

impl LocalDirSink {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        LocalDirSink { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }
}

fn write_json_atomically(path: &Path, json: &str) -> io::Result<()> {
    let tmp = path.with_extension("meta.tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(json.as_bytes())?;
        f.write_all(b"\n")?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

fn move_file(from: &Path, to: &Path) -> io::Result<()> {
    match fs::rename(from, to) {
        Ok(()) => Ok(()),
        Err(_) => {
            // different filesystem: copy beside the target, then rename
            let tmp = to.with_extension("log.tmp");
            fs::copy(from, &tmp)?;
            fs::rename(&tmp, to)?;
            fs::remove_file(from)
        }
    }
}

impl StorageSink for LocalDirSink {
    fn store(&self, meta: &TrialMetadata, log: &Path) -> io::Result<(PathBuf, PathBuf)> {
        if !self.root.is_dir() {
            return Err(io::Error::new(
                io::ErrorKind::NotFound,
                format!("sink directory {} does not exist", self.root.display()),
            ));
        }
        let dir = self.root.join(&meta.project_id);
        fs::create_dir_all(&dir)?;
        let log_dest = dir.join(format!("{}.log", meta.session_id));
        let meta_dest = dir.join(format!("{}.meta", meta.session_id));
        let json = serde_json::to_string_pretty(meta).map_err(io::Error::other)?;
        let meta_tmp = dir.join(format!(".{}.meta.tmp", meta.session_id));
        {
            let mut f = File::create(&meta_tmp)?;
            f.write_all(json.as_bytes())?;
            f.write_all(b"\n")?;
            f.sync_all()?;
        }
        move_file(log, &log_dest)?;
        fs::rename(&meta_tmp, &meta_dest)?;
        Ok((log_dest, meta_dest))
    }
}

/// Open, append-only log of one session.
#[derive(Debug)]
pub struct TrialLog {
    header: TrialHeader,
    path: PathBuf,
    spool_dir: PathBuf,
    writer: Option<BufWriter<File>>,
    last_timestamp: u64,
    lines: u64,
}

static SPOOL_LOCK: Mutex<()> = Mutex::new(());

impl TrialLog {
    /// Creates `<spool_dir>/<sessionId>.log.partial` and writes the header line.
    pub fn create(spool_dir: &Path, header: TrialHeader) -> io::Result<Self> {
        let path = {
            let _guard = SPOOL_LOCK.lock().unwrap_or_else(|e| e.into_inner());
            fs::create_dir_all(spool_dir)?;
            spool_dir.join(format!("{}.log.partial", header.session_id))
        };
        let file = OpenOptions::new().create_new(true).append(true).open(&path)?;
        let mut writer = BufWriter::new(file);
        serde_json::to_writer(&mut writer, &header).map_err(io::Error::other)?;
        writer.write_all(b"\n")?;
        writer.flush()?;
        Ok(TrialLog {
            header,
            path,
            spool_dir: spool_dir.to_path_buf(),
            writer: Some(writer),
            last_timestamp: 0,
            lines: 1,
        })
    }

    pub fn header(&self) -> &TrialHeader {
        &self.header
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn events_written(&self) -> u64 {
        self.lines - 1
    }

    pub fn last_timestamp(&self) -> u64 {
        self.last_timestamp
    }

    /// Appends one event line. Buffers are flushed on episode and session
    /// boundaries.
    pub fn record(&mut self, event: &Event) -> Result<(), RecordError> {
        let writer = self.writer.as_mut().ok_or(RecordError::Closed)?;
        if event.timestamp_ms < self.last_timestamp {
            return Err(RecordError::NonMonotonic {
                previous: self.last_timestamp,
                got: event.timestamp_ms,
            });
        }
        let mut line = serde_json::to_vec(event).map_err(io::Error::other)?;
        line.push(b'\n');
        writer.write_all(&line)?;
        if matches!(event.kind(), EventKind::EpisodeEnd | EventKind::SessionEnd) {
            writer.flush()?;
        }
        self.last_timestamp = event.timestamp_ms;
        self.lines += 1;
        Ok(())
    }

    pub fn flush(&mut self) -> io::Result<()> {
        match self.writer.as_mut() {
            Some(w) => w.flush(),
            None => Ok(()),
        }
    }

    fn close(&mut self) -> io::Result<()> {
        if let Some(mut w) = self.writer.take() {
            w.flush()?;
            w.get_ref().sync_all()?;
        }
        Ok(())
    }

    /// Appends `end` (a `session_end` event), closes the log and hands it to
    /// the sink. On sink failure the log is retained in the spool directory.
    pub fn finalize(
        mut self,
        end: &Event,
        sink: &dyn StorageSink,
        meta: &TrialMetadata,
    ) -> Result<StoredTrial, RecordError> {
        self.record(end)?;
        self.close()?;
        match sink.store(meta, &self.path) {
            Ok((log, meta)) => Ok(StoredTrial::Stored { log, meta }),
            Err(e) => {
                let _guard = SPOOL_LOCK.lock().unwrap_or_else(|e| e.into_inner());
                let log = self.spool_dir.join(format!("{}.log", self.header.session_id));
                let meta_path = self.spool_dir.join(format!("{}.meta", self.header.session_id));
                fs::rename(&self.path, &log)?;
                let json = serde_json::to_string_pretty(meta).map_err(io::Error::other)?;
                write_json_atomically(&meta_path, &json)?;
                Ok(StoredTrial::Spooled {
                    log,
                    meta: meta_path,
                    error: e.to_string(),
                })
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("log is empty")]
    Empty,
    #[error("line {line}: {reason}")]
    Corrupt { line: usize, reason: String },
}

impl LoadError {
    pub fn line(&self) -> Option<usize> {
        match self {
            LoadError::Corrupt { line, .. } => Some(*line),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedTrial {
    pub header: TrialHeader,
    pub events: Vec<Event>,
    /// Set when the final line was cut off mid-write; holds its 1-based line
    /// number. `events` then holds everything before it.
    pub truncated_at: Option<usize>,
}

pub fn load_trial(path: &Path) -> Result<LoadedTrial, LoadError> {
    load_trial_from(File::open(path)?)
}

pub fn load_trial_from<R: Read>(reader: R) -> Result<LoadedTrial, LoadError> {
    let mut reader = BufReader::new(reader);
    let mut buf = String::new();
    let mut header: Option<TrialHeader> = None;
    let mut events = Vec::new();
    let mut line_no = 0usize;
    loop {
        buf.clear();
        let n = reader.read_line(&mut buf).map_err(|e| LoadError::Corrupt {
            line: line_no + 1,
            reason: e.to_string(),
        })?;
        if n == 0 {
            break;
        }
        line_no += 1;
        let complete = buf.ends_with('\n');
        let text = buf.trim_end_matches(['\n', '\r']);
        let parsed = match &header {
            None => serde_json::from_str::<TrialHeader>(text).map(|h| {
                header = Some(h);
            }),
            Some(_) => serde_json::from_str::<Event>(text).map(|e| events.push(e)),
        };
        if let Err(e) = parsed {
            if let (false, Some(header)) = (complete, header) {
                return Ok(LoadedTrial {
                    header,
                    events,
                    truncated_at: Some(line_no),
                });
            }
            return Err(LoadError::Corrupt {
                line: line_no,
                reason: e.to_string(),
            });
        }
    }
    let header = header.ok_or(LoadError::Empty)?;
    if header.version != LOG_VERSION {
        return Err(LoadError::Corrupt {
            line: 1,
            reason: format!("unsupported log version {}", header.version),
        });
    }
    Ok(LoadedTrial {
        header,
        events,
        truncated_at: None,
    })
}

/// A broken recorder invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    NonMonotonic { index: usize },
    ForeignSession { index: usize },
    UnattributedFeedback { index: usize, frame_id: u64 },
    FrameIdNotIncreasing { index: usize },
}

/// Checks monotone timestamps, session ownership, strictly increasing frame
/// ids and that every feedback references a previously emitted frame.
pub fn verify_trial(trial: &LoadedTrial) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut last_ts = 0u64;
    let mut last_frame: Option<u64> = None;
    let mut frames = HashSet::new();
    for (index, e) in trial.events.iter().enumerate() {
        if e.timestamp_ms < last_ts {
            out.push(Violation::NonMonotonic { index });
        }
        last_ts = last_ts.max(e.timestamp_ms);
        if e.session_id != trial.header.session_id {
            out.push(Violation::ForeignSession { index });
        }
        match &e.payload {
            EventPayload::FrameEmitted(f) => {
                if last_frame.is_some_and(|p| f.frame_id <= p) {
                    out.push(Violation::FrameIdNotIncreasing { index });
                }
                last_frame = Some(f.frame_id);
                frames.insert(f.frame_id);
            }
            EventPayload::Feedback { frame_id, .. } if !frames.contains(frame_id) => {
                out.push(Violation::UnattributedFeedback {
                    index,
                    frame_id: *frame_id,
                });
            }
            _ => {}
        }
    }
    out
}

/// Demonstration pairs: every executed human command with the state it was
/// executed in.
pub fn demo_dataset(events: &[Event]) -> DemoDataset {
    let mut d = DemoDataset::new();
    for e in events {
        if let EventPayload::FrameEmitted(FrameRecord {
            transition: Some(t), ..
        }) = &e.payload
        {
            if t.source == ActionSource::Human {
                d.push(Observation::new(t.state_before.clone()), t.action);
            }
        }
    }
    d
}
