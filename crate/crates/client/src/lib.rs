//! Typed async client for the review service's JSON API.

use movekit::corpus::{serialize_doccano, AbstractId, AnnotatedAbstract, Span};
use movekit::review::wire::{
    AbstractView, AnnotationUpdate, EnqueueRequest, EnqueueResponse, ErrorBody, FinalizeRequest,
    LabelInfo, RetrainStatus, StatsView,
};
use movekit::review::ConfusionReport;
use movekit::saliency::SaliencyVector;
use movekit::stats::Partition;
use reqwest::{Method, RequestBuilder, Response, StatusCode};
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClientError {
    /// The service answered with a non-success status.
    #[error("{status}: {}", .body.error)]
    Api { status: StatusCode, body: ErrorBody },
    #[error("cannot reach the review service: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("unexpected response: {0}")]
    Decode(String),
}

impl ClientError {
    pub fn status(&self) -> Option<StatusCode> {
        match self {
            ClientError::Api { status, .. } => Some(*status),
            _ => None,
        }
    }

    pub fn is_conflict(&self) -> bool {
        self.status() == Some(StatusCode::CONFLICT)
    }
}

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

fn id_segment(id: &AbstractId) -> String {
    // Ids are plain numbers or short text keys; escape the few characters that would
    // break the path.
    id.to_string()
        .chars()
        .map(|c| match c {
            '/' => "%2F".to_string(),
            '?' => "%3F".to_string(),
            '#' => "%23".to_string(),
            '%' => "%25".to_string(),
            ' ' => "%20".to_string(),
            c => c.to_string(),
        })
        .collect()
}

impl Client {
    /// `base` is the service root, e.g. `http://127.0.0.1:8080`.
    pub fn new(base: impl Into<String>) -> Self {
        Client {
            base: base.into().trim_end_matches('/').to_string(),
            http: reqwest::Client::new(),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn request(&self, method: Method, path: &str) -> RequestBuilder {
        self.http
            .request(method, format!("{}/api{path}", self.base))
    }

    async fn check(resp: Response) -> Result<Response, ClientError> {
        let status = resp.status();
        if status.is_success() {
            return Ok(resp);
        }
        let text = resp.text().await?;
        let body =
            serde_json::from_str::<ErrorBody>(&text).unwrap_or_else(|_| ErrorBody::new(text));
        Err(ClientError::Api { status, body })
    }

    async fn json<T: DeserializeOwned>(resp: Response) -> Result<T, ClientError> {
        let text = Self::check(resp).await?.text().await?;
        serde_json::from_str(&text).map_err(|e| ClientError::Decode(format!("{e}: {text}")))
    }

    async fn send<B: Serialize, T: DeserializeOwned>(
        &self,
        method: Method,
        path: &str,
        body: Option<&B>,
    ) -> Result<T, ClientError> {
        let mut req = self.request(method, path);
        if let Some(b) = body {
            req = req.json(b);
        }
        Self::json(req.send().await?).await
    }

    /// Assigns the oldest pending task; `None` when the queue is empty.
    pub async fn next_task(
        &self,
        reviewer: Option<&str>,
    ) -> Result<Option<AbstractView>, ClientError> {
        let mut req = self.request(Method::GET, "/tasks/next");
        if let Some(r) = reviewer {
            req = req.query(&[("reviewer", r)]);
        }
        let resp = Self::check(req.send().await?).await?;
        if resp.status() == StatusCode::NO_CONTENT {
            return Ok(None);
        }
        Self::json(resp).await.map(Some)
    }

    pub async fn enqueue(
        &self,
        records: &[AnnotatedAbstract],
    ) -> Result<EnqueueResponse, ClientError> {
        let records = records
            .iter()
            .map(|r| serde_json::from_str(&serialize_doccano(r)))
            .collect::<Result<Vec<serde_json::Value>, _>>()
            .map_err(|e| ClientError::Decode(e.to_string()))?;
        self.enqueue_raw(records).await
    }

    /// Sends doccano objects as they are; the service validates each one.
    pub async fn enqueue_raw(
        &self,
        records: Vec<serde_json::Value>,
    ) -> Result<EnqueueResponse, ClientError> {
        self.send(Method::POST, "/tasks", Some(&EnqueueRequest { records }))
            .await
    }

    pub async fn get_abstract(&self, id: &AbstractId) -> Result<AbstractView, ClientError> {
        self.send::<(), _>(Method::GET, &format!("/abstracts/{}", id_segment(id)), None)
            .await
    }

    pub async fn submit(
        &self,
        id: &AbstractId,
        spans: Vec<Span>,
        expected_version: u64,
        reviewer: Option<&str>,
    ) -> Result<AbstractView, ClientError> {
        let body = AnnotationUpdate {
            label: spans,
            expected_version,
            reviewer: reviewer.map(str::to_string),
        };
        self.send(
            Method::PUT,
            &format!("/abstracts/{}/annotation", id_segment(id)),
            Some(&body),
        )
        .await
    }

    pub async fn finalize(
        &self,
        id: &AbstractId,
        reviewer: Option<&str>,
    ) -> Result<AbstractView, ClientError> {
        let body = FinalizeRequest {
            reviewer: reviewer.map(str::to_string),
        };
        self.send(
            Method::POST,
            &format!("/abstracts/{}/finalize", id_segment(id)),
            Some(&body),
        )
        .await
    }

    pub async fn confusion(&self, last: Option<usize>) -> Result<ConfusionReport, ClientError> {
        let mut req = self.request(Method::GET, "/reports/confusion");
        if let Some(n) = last {
            req = req.query(&[("last", n)]);
        }
        Self::json(req.send().await?).await
    }

    /// Starts retraining; with `wait` the call returns once the job has finished.
    pub async fn retrain(&self, wait: bool, force: bool) -> Result<RetrainStatus, ClientError> {
        let req = self
            .request(Method::POST, "/retrain")
            .query(&[("wait", wait), ("force", force)]);
        Self::json(req.send().await?).await
    }

    pub async fn retrain_status(&self) -> Result<RetrainStatus, ClientError> {
        self.send::<(), _>(Method::GET, "/retrain", None).await
    }

    pub async fn stats(&self, partition: Option<Partition>) -> Result<StatsView, ClientError> {
        let mut req = self.request(Method::GET, "/stats");
        if let Some(p) = partition {
            let key = match p {
                Partition::Field => "field",
                Partition::Discipline => "discipline",
                Partition::None => "none",
            };
            req = req.query(&[("partition", key)]);
        }
        Self::json(req.send().await?).await
    }

    pub async fn saliency(
        &self,
        id: &AbstractId,
        sentence_index: usize,
    ) -> Result<SaliencyVector, ClientError> {
        self.send::<(), _>(
            Method::GET,
            &format!("/saliency/{}/{sentence_index}", id_segment(id)),
            None,
        )
        .await
    }

    pub async fn labels(&self) -> Result<Vec<LabelInfo>, ClientError> {
        self.send::<(), _>(Method::GET, "/labels", None).await
    }
}
