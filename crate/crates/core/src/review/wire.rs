//! JSON bodies exchanged by the review service and its clients.

use serde::{Deserialize, Serialize};

use super::{EnqueueReport, RetrainOutcome, ReviewTask, TaskCounts, TaskStatus};
use crate::corpus::{
    AbstractId, AbstractMeta, AnnotatedAbstract, MoveLabel, Provenance, Sentence, Span, Status,
    Violation,
};
use crate::stats::CorpusStats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskView {
    pub status: TaskStatus,
    pub version: u64,
    pub reviewer: Option<String>,
}

impl From<&ReviewTask> for TaskView {
    fn from(t: &ReviewTask) -> Self {
        TaskView {
            status: t.status,
            version: t.version,
            reviewer: t.reviewer.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceView {
    pub index: usize,
    pub start: usize,
    pub end: usize,
}

impl From<&Sentence> for SentenceView {
    fn from(s: &Sentence) -> Self {
        SentenceView {
            index: s.index,
            start: s.start,
            end: s.end,
        }
    }
}

/// An abstract as the review UI sees it: the doccano fields plus task state and
/// sentence boundaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbstractView {
    pub id: AbstractId,
    pub data: String,
    pub label: Vec<Span>,
    pub provenance: Vec<Provenance>,
    pub status: Status,
    pub model_version: Option<String>,
    #[serde(default, skip_serializing_if = "AbstractMeta::is_empty")]
    pub meta: AbstractMeta,
    pub task: TaskView,
    pub sentences: Vec<SentenceView>,
}

impl AbstractView {
    pub fn new(record: &AnnotatedAbstract, task: &ReviewTask, sentences: &[Sentence]) -> Self {
        AbstractView {
            id: record.doc.id.clone(),
            data: record.doc.text.clone(),
            label: record.annotation.spans.clone(),
            provenance: record.annotation.provenance.clone(),
            status: record.status,
            model_version: record.annotation.model_version.clone(),
            meta: record.doc.meta.clone(),
            task: task.into(),
            sentences: sentences.iter().map(SentenceView::from).collect(),
        }
    }
}

/// Replacement spans for a task under review.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationUpdate {
    pub label: Vec<Span>,
    pub expected_version: u64,
    #[serde(default)]
    pub reviewer: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FinalizeRequest {
    #[serde(default)]
    pub reviewer: Option<String>,
}

/// Records in doccano form; each one is parsed and validated on its own.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EnqueueRequest {
    pub records: Vec<serde_json::Value>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnqueueResponse {
    #[serde(flatten)]
    pub report: EnqueueReport,
    /// Records that did not parse, as `(position in the request, reason)`.
    pub invalid: Vec<(usize, String)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RetrainStatus {
    pub running: bool,
    pub threshold: u64,
    pub reviewed_since_training: u64,
    pub last: Option<RetrainOutcome>,
    pub last_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsView {
    pub tasks: TaskCounts,
    pub active_model: Option<String>,
    pub reviewed_total: u64,
    pub reviewed_since_training: u64,
    pub retrain_threshold: u64,
    /// Label statistics over the reviewed abstracts.
    pub corpus: CorpusStats,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelInfo {
    pub code: MoveLabel,
    pub name: String,
    pub definition: String,
    pub color: String,
}

/// Body of every non-2xx response.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub current_version: Option<u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub violations: Vec<Violation>,
}

impl ErrorBody {
    pub fn new(error: impl Into<String>) -> Self {
        ErrorBody {
            error: error.into(),
            ..Default::default()
        }
    }
}
