//! The human review queue: auto-annotated abstracts become tasks, reviewers correct and
//! finalize them, and every change is kept in an append-only JSON-Lines event log.
//!
//! The in-memory state is always the fold of the log: live writes append their events
//! first and then apply them with the same function replay uses. A submission is written
//! as one batch closed by a `committed` (or `finalized`) line; a batch without its closing
//! line, such as one cut short by a crash, is ignored on replay.

pub mod registry;
pub mod wire;

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{
    validate, Abstract, AbstractId, AnnotatedAbstract, Annotation, MoveLabel, Provenance, Span,
    Status, Violation,
};

pub use registry::{
    dev_micro_f1, is_dev_holdout, retrain, ModelRegistry, RegistryEntry, RetrainConfig,
    RetrainOutcome,
};

const EVENTS_FILE: &str = "events.jsonl";
const SNAPSHOT_FILE: &str = "snapshot.json";
const COMPACT_EVERY: usize = 100;

#[derive(Debug, Error)]
pub enum ReviewError {
    #[error("unknown abstract {0}")]
    UnknownId(String),
    #[error("version conflict on abstract {id}: expected {expected}, current {current}")]
    Conflict {
        id: String,
        expected: u64,
        current: u64,
    },
    #[error("invalid annotation: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Validation(Vec<Violation>),
    #[error("an annotation needs at least one span")]
    EmptyAnnotation,
    #[error("abstract {id} is {status}; {action} is not allowed")]
    WrongState {
        id: String,
        status: TaskStatus,
        action: &'static str,
    },
    #[error("event log line {line}: {message}")]
    Log { line: usize, message: String },
    #[error("{0}")]
    Other(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Pending,
    InReview,
    Done,
}

impl std::fmt::Display for TaskStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TaskStatus::Pending => "pending",
            TaskStatus::InReview => "in_review",
            TaskStatus::Done => "done",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewTask {
    pub abstract_id: AbstractId,
    pub annotation: Annotation,
    pub status: TaskStatus,
    pub version: u64,
    pub reviewer: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrectionAction {
    Relabel,
    Add,
    Delete,
    /// Finalization of an untouched auto span; `old == new`.
    Confirm,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectionEvent {
    pub abstract_id: AbstractId,
    pub action: CorrectionAction,
    pub start: usize,
    pub end: usize,
    pub old: Option<MoveLabel>,
    pub new: Option<MoveLabel>,
    pub reviewer: Option<String>,
    pub ts: u64,
}

/// One line of the event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogEvent {
    Enqueued {
        seq: u64,
        doc: Abstract,
        annotation: Annotation,
        ts: u64,
    },
    Assigned {
        abstract_id: AbstractId,
        reviewer: Option<String>,
        ts: u64,
    },
    Correction(CorrectionEvent),
    Committed {
        abstract_id: AbstractId,
        version: u64,
        ts: u64,
    },
    Finalized {
        abstract_id: AbstractId,
        version: u64,
        ts: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Entry {
    seq: u64,
    doc: Abstract,
    auto: Annotation,
    current: Annotation,
    status: TaskStatus,
    version: u64,
    reviewer: Option<String>,
}

/// The state derived from the log.
#[derive(Debug, Clone, Default, PartialEq)]
struct State {
    entries: BTreeMap<AbstractId, Entry>,
    next_seq: u64,
    corrections: Vec<CorrectionEvent>,
    finalized_total: u64,
}

/// On-disk form of [`State`]; entries are a list because ids are not string keys.
#[derive(Serialize, Deserialize)]
struct Snapshot {
    /// Number of log lines folded into the state.
    lines: usize,
    next_seq: u64,
    finalized_total: u64,
    entries: Vec<Entry>,
    corrections: Vec<CorrectionEvent>,
}

impl Snapshot {
    fn new(lines: usize, state: &State) -> Self {
        Snapshot {
            lines,
            next_seq: state.next_seq,
            finalized_total: state.finalized_total,
            entries: state.entries.values().cloned().collect(),
            corrections: state.corrections.clone(),
        }
    }

    fn into_state(self) -> State {
        State {
            entries: self
                .entries
                .into_iter()
                .map(|e| (e.doc.id.clone(), e))
                .collect(),
            next_seq: self.next_seq,
            corrections: self.corrections,
            finalized_total: self.finalized_total,
        }
    }
}

/// Counts of tasks per status.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskCounts {
    pub pending: usize,
    pub in_review: usize,
    pub done: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnqueueReport {
    pub created: usize,
    /// Abstracts that already have a task.
    pub skipped_queued: Vec<String>,
    /// Abstracts that already carry reviewed labels.
    pub skipped_labeled: Vec<String>,
    /// Abstracts the annotator could not label, with the reason.
    pub failed: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionRow {
    pub old: MoveLabel,
    pub new: MoveLabel,
    pub count: u64,
}

/// Relabel counts `(old → new)`, most frequent first.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionReport {
    pub events_considered: usize,
    pub rows: Vec<ConfusionRow>,
}

impl ConfusionReport {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn render_text(&self) -> String {
        if self.rows.is_empty() {
            return "no relabel corrections\n".to_string();
        }
        let mut out = format!("{:<6}{:<6}{:>8}\n", "From", "To", "Count");
        for r in &self.rows {
            out.push_str(&format!(
                "{:<6}{:<6}{:>8}\n",
                r.old.code(),
                r.new.code(),
                r.count
            ));
        }
        out
    }
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn sort_annotation(a: &mut Annotation) {
    let mut pairs: Vec<(Span, Provenance)> = a
        .spans
        .iter()
        .copied()
        .zip(a.provenance.iter().copied())
        .collect();
    pairs.sort_by_key(|(s, _)| *s);
    a.spans = pairs.iter().map(|(s, _)| *s).collect();
    a.provenance = pairs.iter().map(|(_, p)| *p).collect();
}

fn find_span(a: &Annotation, start: usize, end: usize, label: MoveLabel) -> Option<usize> {
    a.spans
        .iter()
        .position(|s| s.start == start && s.end == end && s.label == label)
}

impl State {
    fn entry_mut(&mut self, id: &AbstractId) -> Result<&mut Entry, String> {
        self.entries
            .get_mut(id)
            .ok_or_else(|| format!("event refers to unknown abstract {id}"))
    }

    /// Applies one event. Errors mean the log is inconsistent with itself.
    fn apply(&mut self, event: &LogEvent) -> Result<(), String> {
        match event {
            LogEvent::Enqueued {
                seq,
                doc,
                annotation,
                ..
            } => {
                let mut annotation = annotation.clone();
                sort_annotation(&mut annotation);
                self.entries.insert(
                    doc.id.clone(),
                    Entry {
                        seq: *seq,
                        doc: doc.clone(),
                        auto: annotation.clone(),
                        current: annotation,
                        status: TaskStatus::Pending,
                        version: 0,
                        reviewer: None,
                    },
                );
                self.next_seq = self.next_seq.max(seq + 1);
            }
            LogEvent::Assigned {
                abstract_id,
                reviewer,
                ..
            } => {
                let e = self.entry_mut(abstract_id)?;
                e.status = TaskStatus::InReview;
                e.reviewer = reviewer.clone();
            }
            LogEvent::Correction(c) => {
                let e = self.entry_mut(&c.abstract_id)?;
                let a = &mut e.current;
                let missing = || {
                    format!(
                        "no span [{}, {}, {:?}] on abstract {}",
                        c.start, c.end, c.old, c.abstract_id
                    )
                };
                match (c.action, c.old, c.new) {
                    (CorrectionAction::Relabel, Some(old), Some(new)) => {
                        let i = find_span(a, c.start, c.end, old).ok_or_else(missing)?;
                        a.spans[i].label = new;
                        a.provenance[i] = Provenance::Corrected;
                    }
                    (CorrectionAction::Confirm, Some(old), _) => {
                        let i = find_span(a, c.start, c.end, old).ok_or_else(missing)?;
                        a.provenance[i] = Provenance::Corrected;
                    }
                    (CorrectionAction::Delete, Some(old), None) => {
                        let i = find_span(a, c.start, c.end, old).ok_or_else(missing)?;
                        a.spans.remove(i);
                        a.provenance.remove(i);
                    }
                    (CorrectionAction::Add, None, Some(new)) => {
                        a.spans.push(Span::new(c.start, c.end, new));
                        a.provenance.push(Provenance::Corrected);
                    }
                    _ => return Err(format!("malformed correction {c:?}")),
                }
                sort_annotation(a);
                self.corrections.push(c.clone());
            }
            LogEvent::Committed {
                abstract_id,
                version,
                ..
            } => {
                let e = self.entry_mut(abstract_id)?;
                e.version = *version;
            }
            LogEvent::Finalized {
                abstract_id,
                version,
                ..
            } => {
                let e = self.entry_mut(abstract_id)?;
                e.version = *version;
                e.status = TaskStatus::Done;
                self.finalized_total += 1;
            }
        }
        Ok(())
    }
}

/// Events turning `old` into `new` for one abstract.
///
/// Spans are matched by extent: an unchanged label keeps its span, a changed label at the
/// same extent is a relabel, and anything left over is a delete or an add.
pub fn diff_spans(
    id: &AbstractId,
    old: &[Span],
    new: &[Span],
    reviewer: Option<&str>,
    ts: u64,
) -> Vec<CorrectionEvent> {
    let mut by_extent: BTreeMap<(usize, usize), (Vec<MoveLabel>, Vec<MoveLabel>)> = BTreeMap::new();
    for s in old {
        by_extent
            .entry((s.start, s.end))
            .or_default()
            .0
            .push(s.label);
    }
    for s in new {
        by_extent
            .entry((s.start, s.end))
            .or_default()
            .1
            .push(s.label);
    }
    let event = |action, (start, end): (usize, usize), old, new| CorrectionEvent {
        abstract_id: id.clone(),
        action,
        start,
        end,
        old,
        new,
        reviewer: reviewer.map(str::to_string),
        ts,
    };
    let mut events = Vec::new();
    for (extent, (o, n)) in by_extent {
        let mut gone: Vec<MoveLabel> = o.iter().copied().filter(|l| !n.contains(l)).collect();
        let mut came: Vec<MoveLabel> = n.iter().copied().filter(|l| !o.contains(l)).collect();
        gone.sort();
        came.sort();
        let paired = gone.len().min(came.len());
        for i in 0..paired {
            events.push(event(
                CorrectionAction::Relabel,
                extent,
                Some(gone[i]),
                Some(came[i]),
            ));
        }
        for &l in &gone[paired..] {
            events.push(event(CorrectionAction::Delete, extent, Some(l), None));
        }
        for &l in &came[paired..] {
            events.push(event(CorrectionAction::Add, extent, None, Some(l)));
        }
    }
    events
}

struct Log {
    path: PathBuf,
    file: File,
    lines: usize,
}

/// Task store with optional on-disk persistence.
pub struct ReviewStore {
    state: State,
    log: Option<Log>,
    dir: Option<PathBuf>,
    writes_since_compaction: usize,
}

/// Reads a log, tolerating a torn final line and dropping an unterminated final batch.
fn replay_lines(text: &str, skip: usize, state: &mut State) -> Result<usize, ReviewError> {
    let lines: Vec<&str> = text.split_inclusive('\n').collect();
    let mut batch: Vec<LogEvent> = Vec::new();
    let mut batch_start = skip;
    let mut consumed = skip;
    for (i, raw) in lines.iter().enumerate().skip(skip) {
        let line = raw.trim_end_matches(['\n', '\r']);
        if line.trim().is_empty() {
            consumed = i + 1;
            continue;
        }
        let event: LogEvent = match serde_json::from_str(line) {
            Ok(e) => e,
            Err(e) if i + 1 == lines.len() && !raw.ends_with('\n') => {
                tracing::warn!(line = i + 1, error = %e, "ignoring torn final log line");
                break;
            }
            Err(e) => {
                return Err(ReviewError::Log {
                    line: i + 1,
                    message: e.to_string(),
                })
            }
        };
        let closes = matches!(
            event,
            LogEvent::Committed { .. }
                | LogEvent::Finalized { .. }
                | LogEvent::Enqueued { .. }
                | LogEvent::Assigned { .. }
        );
        if batch.is_empty() {
            batch_start = i;
        }
        batch.push(event);
        if closes {
            for e in batch.drain(..) {
                state.apply(&e).map_err(|message| ReviewError::Log {
                    line: i + 1,
                    message,
                })?;
            }
            consumed = i + 1;
        }
    }
    if !batch.is_empty() {
        tracing::warn!(
            line = batch_start + 1,
            events = batch.len(),
            "ignoring unterminated final batch"
        );
    }
    Ok(consumed)
}

impl ReviewStore {
    /// A store that keeps everything in memory.
    pub fn in_memory() -> Self {
        ReviewStore {
            state: State::default(),
            log: None,
            dir: None,
            writes_since_compaction: 0,
        }
    }

    /// Opens (or creates) a store in `dir`, loading the snapshot and replaying the log
    /// lines after it.
    pub fn open(dir: &Path) -> Result<Self, ReviewError> {
        std::fs::create_dir_all(dir)?;
        let log_path = dir.join(EVENTS_FILE);
        let mut state = State::default();
        let mut skip = 0;
        if let Ok(text) = std::fs::read_to_string(dir.join(SNAPSHOT_FILE)) {
            let snap: Snapshot = serde_json::from_str(&text)?;
            skip = snap.lines;
            state = snap.into_state();
        }
        let text = match std::fs::read_to_string(&log_path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
            Err(e) => return Err(e.into()),
        };
        let consumed = replay_lines(&text, skip, &mut state)?;
        // Drop whatever replay ignored so new batches start on a clean line.
        let keep: usize = text
            .split_inclusive('\n')
            .take(consumed)
            .map(str::len)
            .sum();
        if keep != text.len() {
            let f = OpenOptions::new().write(true).open(&log_path)?;
            f.set_len(keep as u64)?;
            f.sync_all()?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)?;
        Ok(ReviewStore {
            state,
            log: Some(Log {
                path: log_path,
                file,
                lines: consumed,
            }),
            dir: Some(dir.to_path_buf()),
            writes_since_compaction: 0,
        })
    }

    /// Rebuilds state from a log file alone, ignoring any snapshot.
    pub fn replay_log(path: &Path) -> Result<Self, ReviewError> {
        let text = std::fs::read_to_string(path)?;
        let mut state = State::default();
        replay_lines(&text, 0, &mut state)?;
        Ok(ReviewStore {
            state,
            log: None,
            dir: None,
            writes_since_compaction: 0,
        })
    }

    pub fn log_path(&self) -> Option<&Path> {
        self.log.as_ref().map(|l| l.path.as_path())
    }

    /// Writes one batch to the log, then applies it.
    fn commit(&mut self, events: Vec<LogEvent>) -> Result<(), ReviewError> {
        if let Some(log) = &mut self.log {
            let mut buf = String::new();
            for e in &events {
                buf.push_str(&serde_json::to_string(e)?);
                buf.push('\n');
            }
            log.file.write_all(buf.as_bytes())?;
            log.file.flush()?;
            log.file.sync_data()?;
            log.lines += events.len();
        }
        for e in &events {
            self.state
                .apply(e)
                .map_err(|m| ReviewError::Other(format!("internal event error: {m}")))?;
        }
        self.writes_since_compaction += 1;
        if self.writes_since_compaction >= COMPACT_EVERY {
            self.compact()?;
        }
        Ok(())
    }

    /// Writes a snapshot of the current state covering every log line so far.
    pub fn compact(&mut self) -> Result<(), ReviewError> {
        let (Some(dir), Some(log)) = (&self.dir, &self.log) else {
            return Ok(());
        };
        let snap = Snapshot::new(log.lines, &self.state);
        let tmp = dir.join(format!("{SNAPSHOT_FILE}.tmp"));
        std::fs::write(&tmp, serde_json::to_vec(&snap)?)?;
        std::fs::rename(&tmp, dir.join(SNAPSHOT_FILE))?;
        self.writes_since_compaction = 0;
        Ok(())
    }

    /// Creates tasks. Unlabeled abstracts are labelled by `annotate`; abstracts that carry
    /// auto labels are queued as they are; reviewed abstracts and ones already queued are
    /// skipped.
    pub fn enqueue(
        &mut self,
        records: &[AnnotatedAbstract],
        annotate: &mut dyn FnMut(&Abstract) -> Result<Annotation, String>,
    ) -> Result<EnqueueReport, ReviewError> {
        let mut report = EnqueueReport::default();
        for r in records {
            let id = r.id().to_string();
            if self.state.entries.contains_key(r.id()) {
                report.skipped_queued.push(id);
                continue;
            }
            let annotation = match r.annotation.derived_status() {
                Status::Reviewed => {
                    report.skipped_labeled.push(id);
                    continue;
                }
                Status::Auto => r.annotation.clone(),
                Status::Unlabeled => match annotate(&r.doc) {
                    Ok(a) => a,
                    Err(e) => {
                        report.failed.push((id, e));
                        continue;
                    }
                },
            };
            let seq = self.state.next_seq;
            self.commit(vec![LogEvent::Enqueued {
                seq,
                doc: r.doc.clone(),
                annotation,
                ts: now_ms(),
            }])?;
            report.created += 1;
        }
        Ok(report)
    }

    /// Hands the oldest pending task to `reviewer` and marks it in review.
    pub fn next_task(&mut self, reviewer: Option<&str>) -> Result<Option<ReviewTask>, ReviewError> {
        let Some(id) = self
            .state
            .entries
            .values()
            .filter(|e| e.status == TaskStatus::Pending)
            .min_by_key(|e| e.seq)
            .map(|e| e.doc.id.clone())
        else {
            return Ok(None);
        };
        self.commit(vec![LogEvent::Assigned {
            abstract_id: id.clone(),
            reviewer: reviewer.map(str::to_string),
            ts: now_ms(),
        }])?;
        Ok(self.task(&id))
    }

    fn entry(&self, id: &AbstractId) -> Result<&Entry, ReviewError> {
        self.state
            .entries
            .get(id)
            .ok_or_else(|| ReviewError::UnknownId(id.to_string()))
    }

    pub fn task(&self, id: &AbstractId) -> Option<ReviewTask> {
        self.state.entries.get(id).map(|e| ReviewTask {
            abstract_id: e.doc.id.clone(),
            annotation: e.current.clone(),
            status: e.status,
            version: e.version,
            reviewer: e.reviewer.clone(),
        })
    }

    /// The abstract with its current annotation.
    pub fn record(&self, id: &AbstractId) -> Option<AnnotatedAbstract> {
        self.state.entries.get(id).map(|e| AnnotatedAbstract {
            doc: e.doc.clone(),
            annotation: e.current.clone(),
            status: if e.status == TaskStatus::Done {
                Status::Reviewed
            } else {
                e.current.derived_status()
            },
        })
    }

    /// The annotation the task was created with.
    pub fn original_annotation(&self, id: &AbstractId) -> Option<&Annotation> {
        self.state.entries.get(id).map(|e| &e.auto)
    }

    /// All records in queue order.
    pub fn records(&self) -> Vec<AnnotatedAbstract> {
        let mut entries: Vec<&Entry> = self.state.entries.values().collect();
        entries.sort_by_key(|e| e.seq);
        entries
            .into_iter()
            .filter_map(|e| self.record(&e.doc.id))
            .collect()
    }

    /// Finalized records in queue order.
    pub fn reviewed(&self) -> Vec<AnnotatedAbstract> {
        self.records()
            .into_iter()
            .filter(|r| r.status == Status::Reviewed)
            .collect()
    }

    pub fn finalized_total(&self) -> u64 {
        self.state.finalized_total
    }

    pub fn counts(&self) -> TaskCounts {
        let mut c = TaskCounts::default();
        for e in self.state.entries.values() {
            match e.status {
                TaskStatus::Pending => c.pending += 1,
                TaskStatus::InReview => c.in_review += 1,
                TaskStatus::Done => c.done += 1,
            }
        }
        c
    }

    pub fn corrections(&self) -> &[CorrectionEvent] {
        &self.state.corrections
    }

    /// Replaces the spans of a task under review.
    ///
    /// Returns the new version. Nothing is written if the version is stale or the spans
    /// are invalid.
    pub fn submit_correction(
        &mut self,
        id: &AbstractId,
        expected_version: u64,
        spans: Vec<Span>,
        reviewer: Option<&str>,
    ) -> Result<u64, ReviewError> {
        let e = self.entry(id)?;
        if e.version != expected_version {
            return Err(ReviewError::Conflict {
                id: id.to_string(),
                expected: expected_version,
                current: e.version,
            });
        }
        if e.status != TaskStatus::InReview {
            return Err(ReviewError::WrongState {
                id: id.to_string(),
                status: e.status,
                action: "submitting corrections",
            });
        }
        if spans.is_empty() {
            return Err(ReviewError::EmptyAnnotation);
        }
        let mut spans = spans;
        spans.sort();
        let candidate = AnnotatedAbstract::new(e.doc.clone(), Annotation::manual(spans.clone()));
        let violations = validate(&candidate);
        if !violations.is_empty() {
            return Err(ReviewError::Validation(violations));
        }
        let ts = now_ms();
        let version = e.version + 1;
        let mut events: Vec<LogEvent> = diff_spans(id, &e.current.spans, &spans, reviewer, ts)
            .into_iter()
            .map(LogEvent::Correction)
            .collect();
        events.push(LogEvent::Committed {
            abstract_id: id.clone(),
            version,
            ts,
        });
        self.commit(events)?;
        debug_assert_eq!(self.entry(id)?.current.spans, spans);
        Ok(version)
    }

    /// Confirms every remaining auto span, marks the abstract reviewed and the task done.
    pub fn finalize(
        &mut self,
        id: &AbstractId,
        reviewer: Option<&str>,
    ) -> Result<AnnotatedAbstract, ReviewError> {
        let e = self.entry(id)?;
        if e.status == TaskStatus::Done {
            return Err(ReviewError::WrongState {
                id: id.to_string(),
                status: e.status,
                action: "finalizing",
            });
        }
        if e.current.spans.is_empty() {
            return Err(ReviewError::EmptyAnnotation);
        }
        let ts = now_ms();
        let mut events: Vec<LogEvent> = e
            .current
            .spans
            .iter()
            .zip(&e.current.provenance)
            .filter(|(_, p)| **p == Provenance::Auto)
            .map(|(s, _)| {
                LogEvent::Correction(CorrectionEvent {
                    abstract_id: id.clone(),
                    action: CorrectionAction::Confirm,
                    start: s.start,
                    end: s.end,
                    old: Some(s.label),
                    new: Some(s.label),
                    reviewer: reviewer.map(str::to_string),
                    ts,
                })
            })
            .collect();
        events.push(LogEvent::Finalized {
            abstract_id: id.clone(),
            version: e.version + 1,
            ts,
        });
        self.commit(events)?;
        Ok(self.record(id).expect("entry exists"))
    }

    /// Relabel counts over the last `last` correction events (all when `None`).
    pub fn confusion_report(&self, last: Option<usize>) -> ConfusionReport {
        let all = &self.state.corrections;
        let window = &all[all.len() - last.unwrap_or(all.len()).min(all.len())..];
        confusion_from_events(window)
    }

    /// Equality of the derived state, used to compare a live store with a replay.
    pub fn same_state(&self, other: &ReviewStore) -> bool {
        self.state == other.state
    }
}

impl Drop for ReviewStore {
    fn drop(&mut self) {
        if self.writes_since_compaction > 0 {
            if let Err(e) = self.compact() {
                tracing::warn!(error = %e, "snapshot on close failed");
            }
        }
    }
}

/// Relabel counts `(old → new)` over `events`, most frequent first.
pub fn confusion_from_events(events: &[CorrectionEvent]) -> ConfusionReport {
    let mut counts: HashMap<(MoveLabel, MoveLabel), u64> = HashMap::new();
    for c in events {
        if let (CorrectionAction::Relabel, Some(o), Some(n)) = (c.action, c.old, c.new) {
            *counts.entry((o, n)).or_insert(0) += 1;
        }
    }
    let mut rows: Vec<ConfusionRow> = counts
        .into_iter()
        .map(|((old, new), count)| ConfusionRow { old, new, count })
        .collect();
    rows.sort_by(|a, b| {
        b.count
            .cmp(&a.count)
            .then(a.old.cmp(&b.old))
            .then(a.new.cmp(&b.new))
    });
    ConfusionReport {
        events_considered: events.len(),
        rows,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use MoveLabel::{Background, Gap, Method, Purpose};

    const TEXT: &str = "Models are popular. They fail on typos. We propose a fix.";

    fn auto_record(id: i64) -> AnnotatedAbstract {
        let doc = Abstract::new(id, TEXT).unwrap();
        let spans = vec![
            Span::new(0, 19, Background),
            Span::new(20, 39, Method),
            Span::new(40, 57, Method),
        ];
        AnnotatedAbstract::new(doc, Annotation::auto(spans, "m1"))
    }

    fn no_model(_: &Abstract) -> Result<Annotation, String> {
        Err("no model".into())
    }

    #[test]
    fn relabel_is_one_event_and_bumps_version() {
        let mut store = ReviewStore::in_memory();
        store.enqueue(&[auto_record(1)], &mut no_model).unwrap();
        let task = store.next_task(Some("ann")).unwrap().unwrap();
        let mut spans = task.annotation.spans.clone();
        spans[2].label = Purpose;
        let v = store
            .submit_correction(&task.abstract_id, 0, spans, Some("ann"))
            .unwrap();
        assert_eq!(v, 1);
        assert_eq!(store.corrections().len(), 1);
        let rec = store.record(&task.abstract_id).unwrap();
        assert_eq!(
            rec.annotation.provenance,
            vec![Provenance::Auto, Provenance::Auto, Provenance::Corrected]
        );
    }

    #[test]
    fn stale_version_conflicts_without_writing() {
        let mut store = ReviewStore::in_memory();
        store.enqueue(&[auto_record(1)], &mut no_model).unwrap();
        let task = store.next_task(None).unwrap().unwrap();
        let spans = task.annotation.spans.clone();
        store
            .submit_correction(&task.abstract_id, 0, spans.clone(), None)
            .unwrap();
        let before = store.task(&task.abstract_id).unwrap();
        let err = store
            .submit_correction(&task.abstract_id, 0, spans, None)
            .unwrap_err();
        assert!(matches!(err, ReviewError::Conflict { current: 1, .. }));
        assert_eq!(store.task(&task.abstract_id).unwrap(), before);
    }

    #[test]
    fn split_produces_two_corrected_spans() {
        let mut store = ReviewStore::in_memory();
        let doc = Abstract::new(1, TEXT).unwrap();
        let aa = AnnotatedAbstract::new(
            doc,
            Annotation::auto(vec![Span::new(0, 57, Background)], "m"),
        );
        store.enqueue(&[aa], &mut no_model).unwrap();
        let id = store.next_task(None).unwrap().unwrap().abstract_id;
        let spans = vec![Span::new(0, 19, Background), Span::new(20, 57, Gap)];
        store.submit_correction(&id, 0, spans, None).unwrap();
        let rec = store.record(&id).unwrap();
        assert_eq!(rec.annotation.spans.len(), 2);
        assert!(rec
            .annotation
            .provenance
            .iter()
            .all(|p| *p == Provenance::Corrected));
    }

    #[test]
    fn invalid_spans_are_rejected() {
        let mut store = ReviewStore::in_memory();
        store.enqueue(&[auto_record(1)], &mut no_model).unwrap();
        let id = store.next_task(None).unwrap().unwrap().abstract_id;
        let bad = vec![Span::new(0, 30, Background), Span::new(20, 40, Gap)];
        assert!(matches!(
            store.submit_correction(&id, 0, bad, None),
            Err(ReviewError::Validation(_))
        ));
        assert!(matches!(
            store.submit_correction(&id, 0, vec![], None),
            Err(ReviewError::EmptyAnnotation)
        ));
        assert_eq!(store.task(&id).unwrap().version, 0);
    }

    #[test]
    fn enqueue_is_idempotent_and_skips_reviewed() {
        let mut store = ReviewStore::in_memory();
        let reviewed = AnnotatedAbstract::new(
            Abstract::new(9, TEXT).unwrap(),
            Annotation::manual(vec![Span::new(0, 19, Background)]),
        );
        let r = store
            .enqueue(&[auto_record(1), reviewed], &mut no_model)
            .unwrap();
        assert_eq!(r.created, 1);
        assert_eq!(r.skipped_labeled, vec!["9"]);
        let again = store.enqueue(&[auto_record(1)], &mut no_model).unwrap();
        assert_eq!(again.created, 0);
        assert_eq!(again.skipped_queued, vec!["1"]);
    }

    #[test]
    fn queue_is_fifo_without_double_assignment() {
        let mut store = ReviewStore::in_memory();
        let recs: Vec<_> = [5, 3, 8, 1, 4].into_iter().map(auto_record).collect();
        store.enqueue(&recs, &mut no_model).unwrap();
        let mut seen = Vec::new();
        while let Some(t) = store.next_task(Some("r")).unwrap() {
            seen.push(t.abstract_id.to_string());
        }
        assert_eq!(seen, vec!["5", "3", "8", "1", "4"]);
        assert!(store.next_task(None).unwrap().is_none());
    }

    #[test]
    fn finalize_confirms_remaining_auto_spans() {
        let mut store = ReviewStore::in_memory();
        store.enqueue(&[auto_record(1)], &mut no_model).unwrap();
        let id = store.next_task(None).unwrap().unwrap().abstract_id;
        let rec = store.finalize(&id, None).unwrap();
        assert_eq!(rec.status, Status::Reviewed);
        assert!(!rec.annotation.has_auto());
        assert_eq!(store.corrections().len(), 3);
        assert!(store
            .corrections()
            .iter()
            .all(|c| c.action == CorrectionAction::Confirm));
        assert_eq!(store.task(&id).unwrap().version, 1);
        assert!(store.finalize(&id, None).is_err());
    }

    #[test]
    fn confusion_sorted_descending() {
        let ev = |o, n| CorrectionEvent {
            abstract_id: AbstractId::Int(1),
            action: CorrectionAction::Relabel,
            start: 0,
            end: 1,
            old: Some(o),
            new: Some(n),
            reviewer: None,
            ts: 0,
        };
        let mut events: Vec<_> = (0..5).map(|_| ev(Method, Purpose)).collect();
        events.push(ev(Purpose, Method));
        let r = confusion_from_events(&events);
        assert_eq!(
            r.rows[0],
            ConfusionRow {
                old: Method,
                new: Purpose,
                count: 5
            }
        );
        assert!(confusion_from_events(&[]).is_empty());
    }

    #[test]
    fn log_replay_matches_and_tolerates_torn_tail() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut store = ReviewStore::open(dir.path()).unwrap();
            store
                .enqueue(&[auto_record(1), auto_record(2)], &mut no_model)
                .unwrap();
            let t = store.next_task(Some("a")).unwrap().unwrap();
            let mut spans = t.annotation.spans.clone();
            spans[1].label = Gap;
            store
                .submit_correction(&t.abstract_id, 0, spans, Some("a"))
                .unwrap();
            store.finalize(&t.abstract_id, Some("a")).unwrap();
            let replayed = ReviewStore::replay_log(store.log_path().unwrap()).unwrap();
            assert!(store.same_state(&replayed));
        }
        let log = dir.path().join(EVENTS_FILE);
        let mut f = OpenOptions::new().append(true).open(&log).unwrap();
        // an unterminated batch followed by a torn line
        writeln!(
            f,
            "{}",
            serde_json::to_string(&LogEvent::Correction(CorrectionEvent {
                abstract_id: AbstractId::Int(2),
                action: CorrectionAction::Delete,
                start: 0,
                end: 19,
                old: Some(Background),
                new: None,
                reviewer: None,
                ts: 0,
            }))
            .unwrap()
        )
        .unwrap();
        write!(f, "{{\"event\":\"commi").unwrap();
        drop(f);
        let store = ReviewStore::open(dir.path()).unwrap();
        assert_eq!(
            store
                .record(&AbstractId::Int(2))
                .unwrap()
                .annotation
                .spans
                .len(),
            3
        );
        assert_eq!(store.counts().done, 1);
    }
}
