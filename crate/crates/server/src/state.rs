//! Shared service state: the review store, the active model and the retraining job.
//!
//! Everything here is synchronous; handlers call it from blocking tasks. The store lock is
//! held only for store operations, never while a model runs, so retraining and
//! auto-annotation do not stall reviewers.

use std::collections::{BTreeSet, HashMap};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};

use movekit::classifier::{Model, SentenceContext};
use movekit::corpus::{
    parse_doccano_record, read_jsonl_file, AbstractId, AnnotatedAbstract, Status,
};
use movekit::ingest::{segment_sentences, SegmenterConfig};
use movekit::palette::palette;
use movekit::review::wire::{
    AbstractView, AnnotationUpdate, EnqueueResponse, LabelInfo, RetrainStatus, StatsView,
};
use movekit::review::{
    is_dev_holdout, retrain, ConfusionReport, ModelRegistry, RegistryEntry, RetrainOutcome,
    ReviewStore,
};
use movekit::saliency::SaliencyVector;
use movekit::stats::{corpus_stats, Partition};
use movekit::MoveLabel;

use crate::api::ApiError;
use crate::config::ServerConfig;
use crate::ServerError;

#[derive(Debug, Default)]
struct RetrainJob {
    running: bool,
    last: Option<RetrainOutcome>,
    last_error: Option<String>,
}

pub struct AppState {
    config: ServerConfig,
    segmenter: SegmenterConfig,
    store: Mutex<ReviewStore>,
    model: RwLock<Option<Arc<Model>>>,
    registry: Mutex<ModelRegistry>,
    job: Mutex<RetrainJob>,
    dev: Option<Vec<AnnotatedAbstract>>,
    gold: Vec<AnnotatedAbstract>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    // A panic while holding a lock leaves the data consistent for our uses (every store
    // write is applied only after it is durably logged), so poisoning is not fatal.
    m.lock().unwrap_or_else(|e| e.into_inner())
}

fn load_reviewed(
    path: &std::path::Path,
    what: &str,
) -> Result<Vec<AnnotatedAbstract>, ServerError> {
    let records = read_jsonl_file(path)
        .map_err(|e| ServerError::Config(format!("{what} {}: {e}", path.display())))?;
    let reviewed: Vec<_> = records
        .into_iter()
        .filter(|r| r.status == Status::Reviewed)
        .collect();
    if reviewed.is_empty() {
        return Err(ServerError::Config(format!(
            "{what} {} has no reviewed records",
            path.display()
        )));
    }
    Ok(reviewed)
}

impl AppState {
    /// Opens the store and registry named by `config`, importing `initial_model` into an
    /// empty registry.
    pub fn open(config: ServerConfig) -> Result<Self, ServerError> {
        config.check()?;
        let segmenter = config.segmenter_config()?;
        let store = ReviewStore::open(&config.data_dir)?;
        let mut registry = ModelRegistry::open(&config.model_dir)?;
        if registry.active_version().is_none() {
            if let Some(dir) = &config.initial_model {
                let model = Model::load(dir)
                    .map_err(|e| ServerError::Config(format!("{}: {e}", dir.display())))?;
                tracing::info!(version = %model.version, "importing initial model");
                let entry = RegistryEntry {
                    version: model.version.clone(),
                    parent: None,
                    dev_micro_f1: None,
                    promoted: true,
                    trained_on: 0,
                    reviewed_at_training: 0,
                };
                registry.add(&model, entry)?;
            }
        }
        let model = registry.load_active()?.map(Arc::new);
        match &model {
            Some(m) => tracing::info!(version = %m.version, "active model loaded"),
            None => tracing::warn!("no active model; unlabeled abstracts cannot be enqueued"),
        }
        let dev = config
            .dev_file
            .as_deref()
            .map(|p| load_reviewed(p, "dev file"))
            .transpose()?;
        let gold = match &config.gold_file {
            Some(p) => load_reviewed(p, "gold file")?,
            None => Vec::new(),
        };
        Ok(AppState {
            config,
            segmenter,
            store: Mutex::new(store),
            model: RwLock::new(model),
            registry: Mutex::new(registry),
            job: Mutex::new(RetrainJob::default()),
            dev,
            gold,
        })
    }

    pub fn config(&self) -> &ServerConfig {
        &self.config
    }

    pub fn active_model(&self) -> Option<Arc<Model>> {
        self.model.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    /// Writes a snapshot so the next start does not replay the whole log.
    pub fn flush(&self) -> Result<(), ServerError> {
        lock(&self.store).compact()?;
        Ok(())
    }

    fn view_locked(
        store: &ReviewStore,
        id: &AbstractId,
        seg: &SegmenterConfig,
    ) -> Result<AbstractView, ApiError> {
        let task = store.task(id).ok_or_else(|| ApiError::unknown(id))?;
        let record = store.record(id).ok_or_else(|| ApiError::unknown(id))?;
        let sentences = segment_sentences(record.text(), seg);
        Ok(AbstractView::new(&record, &task, &sentences))
    }

    pub fn view(&self, id: &AbstractId) -> Result<AbstractView, ApiError> {
        Self::view_locked(&lock(&self.store), id, &self.segmenter)
    }

    pub fn next_task(&self, reviewer: Option<&str>) -> Result<Option<AbstractView>, ApiError> {
        let mut store = lock(&self.store);
        match store.next_task(reviewer)? {
            Some(task) => Ok(Some(Self::view_locked(
                &store,
                &task.abstract_id,
                &self.segmenter,
            )?)),
            None => Ok(None),
        }
    }

    /// Parses, auto-annotates (outside the store lock) and queues doccano records.
    pub fn enqueue(&self, records: &[serde_json::Value]) -> Result<EnqueueResponse, ApiError> {
        let mut invalid = Vec::new();
        let mut parsed = Vec::new();
        for (i, v) in records.iter().enumerate() {
            match parse_doccano_record(&v.to_string()) {
                Ok(r) => parsed.push(r),
                Err(e) => invalid.push((i, e.to_string())),
            }
        }
        let queued: BTreeSet<AbstractId> = {
            let store = lock(&self.store);
            parsed
                .iter()
                .filter(|r| store.task(r.id()).is_some())
                .map(|r| r.id().clone())
                .collect()
        };
        let model = self.active_model();
        let mut annotations = HashMap::new();
        for r in &parsed {
            if r.status != Status::Unlabeled || queued.contains(r.id()) {
                continue;
            }
            let result = match &model {
                Some(m) => m
                    .predict_abstract(&r.doc, &self.segmenter)
                    .map(|p| p.annotation)
                    .map_err(|e| e.to_string())
                    .and_then(|a| {
                        if a.spans.is_empty() {
                            Err("abstract has no sentences".to_string())
                        } else {
                            Ok(a)
                        }
                    }),
                None => Err("no active model".to_string()),
            };
            annotations.insert(r.id().clone(), result);
        }
        let report = lock(&self.store).enqueue(&parsed, &mut |doc| {
            annotations
                .remove(&doc.id)
                .unwrap_or_else(|| Err("no annotation computed".to_string()))
        })?;
        Ok(EnqueueResponse { report, invalid })
    }

    pub fn submit(
        &self,
        id: &AbstractId,
        update: AnnotationUpdate,
    ) -> Result<AbstractView, ApiError> {
        let mut store = lock(&self.store);
        store.submit_correction(
            id,
            update.expected_version,
            update.label,
            update.reviewer.as_deref(),
        )?;
        Self::view_locked(&store, id, &self.segmenter)
    }

    pub fn finalize(
        &self,
        id: &AbstractId,
        reviewer: Option<&str>,
    ) -> Result<AbstractView, ApiError> {
        let mut store = lock(&self.store);
        store.finalize(id, reviewer)?;
        Self::view_locked(&store, id, &self.segmenter)
    }

    pub fn confusion(&self, last: Option<usize>) -> ConfusionReport {
        lock(&self.store).confusion_report(last)
    }

    fn reviewed_since_training(&self) -> u64 {
        let total = lock(&self.store).finalized_total();
        total.saturating_sub(lock(&self.registry).reviewed_at_last_training())
    }

    pub fn stats(&self, partition: Partition) -> StatsView {
        let (tasks, reviewed, total) = {
            let store = lock(&self.store);
            (store.counts(), store.reviewed(), store.finalized_total())
        };
        StatsView {
            tasks,
            active_model: self.active_model().map(|m| m.version.clone()),
            reviewed_total: total,
            reviewed_since_training: self.reviewed_since_training(),
            retrain_threshold: self.config.retrain_threshold,
            corpus: corpus_stats(&reviewed, partition, &self.segmenter),
        }
    }

    pub fn retrain_status(&self) -> RetrainStatus {
        let since = self.reviewed_since_training();
        let job = lock(&self.job);
        RetrainStatus {
            running: job.running,
            threshold: self.config.retrain_threshold,
            reviewed_since_training: since,
            last: job.last.clone(),
            last_error: job.last_error.clone(),
        }
    }

    /// Claims the retraining slot; fails when a job is running or, unless `force`, when
    /// too few abstracts were reviewed since the last training.
    pub fn begin_retrain(&self, force: bool) -> Result<(), ApiError> {
        let since = self.reviewed_since_training();
        let mut job = lock(&self.job);
        if job.running {
            return Err(ApiError::conflict("a retraining job is already running"));
        }
        if !force && since < self.config.retrain_threshold {
            return Err(ApiError::conflict(format!(
                "{since} abstracts reviewed since the last training; {} needed",
                self.config.retrain_threshold
            )));
        }
        job.running = true;
        job.last_error = None;
        Ok(())
    }

    /// Runs a claimed retraining job to completion and releases the slot.
    pub fn run_retrain(&self) {
        let result = self.retrain_once();
        let mut job = lock(&self.job);
        job.running = false;
        match result {
            Ok(outcome) => job.last = Some(outcome),
            Err(e) => {
                tracing::error!(error = %e, "retraining failed; active model unchanged");
                job.last_error = Some(e);
            }
        }
    }

    fn retrain_once(&self) -> Result<RetrainOutcome, String> {
        let (reviewed, reviewed_total) = {
            let store = lock(&self.store);
            (store.reviewed(), store.finalized_total())
        };
        let mut pool: Vec<AnnotatedAbstract> = Vec::new();
        let reviewed_ids: BTreeSet<&AbstractId> = reviewed.iter().map(|r| r.id()).collect();
        pool.extend(
            self.gold
                .iter()
                .filter(|g| !reviewed_ids.contains(g.id()))
                .cloned(),
        );
        pool.extend(reviewed.iter().cloned());

        let (train_set, dev_set): (Vec<_>, Vec<_>) = match &self.dev {
            Some(dev) => {
                let dev_ids: BTreeSet<&AbstractId> = dev.iter().map(|r| r.id()).collect();
                let train_set = pool
                    .into_iter()
                    .filter(|r| !dev_ids.contains(r.id()))
                    .collect();
                (train_set, dev.clone())
            }
            None => pool
                .into_iter()
                .partition(|r| !is_dev_holdout(r.id(), self.config.dev_percent)),
        };
        tracing::info!(train = train_set.len(), dev = dev_set.len(), "retraining");

        let active = self.active_model();
        let cfg = self.config.retrain_config();
        let (candidate, outcome) = retrain(
            active.as_deref(),
            &train_set,
            &dev_set,
            &cfg,
            &self.segmenter,
        )
        .map_err(|e| e.to_string())?;
        {
            let mut registry = lock(&self.registry);
            let entry = RegistryEntry {
                version: candidate.version.clone(),
                parent: outcome.parent_version.clone(),
                dev_micro_f1: Some(outcome.candidate_dev_f1),
                promoted: outcome.promoted,
                trained_on: train_set.len(),
                reviewed_at_training: reviewed_total,
            };
            registry.add(&candidate, entry).map_err(|e| e.to_string())?;
            registry.append_log(&outcome).map_err(|e| e.to_string())?;
        }
        tracing::info!(
            candidate = %outcome.candidate_version,
            candidate_f1 = outcome.candidate_dev_f1,
            active_f1 = ?outcome.active_dev_f1,
            promoted = outcome.promoted,
            "retraining finished"
        );
        if outcome.promoted {
            *self.model.write().unwrap_or_else(|e| e.into_inner()) = Some(Arc::new(candidate));
        }
        Ok(outcome)
    }

    /// Occlusion saliency of one sentence for the label the active model predicts for it.
    pub fn saliency(&self, id: &AbstractId, index: usize) -> Result<SaliencyVector, ApiError> {
        let text = {
            let store = lock(&self.store);
            store
                .record(id)
                .ok_or_else(|| ApiError::unknown(id))?
                .doc
                .text
        };
        let model = self
            .active_model()
            .ok_or_else(|| ApiError::unavailable("no active model"))?;
        let sentences = segment_sentences(&text, &self.segmenter);
        let texts: Vec<&str> = sentences.iter().map(|s| s.text.as_str()).collect();
        let target = texts.get(index).ok_or_else(|| {
            ApiError::not_found(format!(
                "abstract {id} has {} sentences; no sentence {index}",
                texts.len()
            ))
        })?;
        let ctx = SentenceContext::of(&texts, index, model.config.context_window);
        let label = model.predict(target, &ctx)?.top_label();
        Ok(model.saliency(target, &ctx, label)?)
    }
}

pub fn labels() -> Vec<LabelInfo> {
    palette()
        .into_iter()
        .map(|(l, style)| LabelInfo {
            code: l,
            name: MoveLabel::name(l).to_string(),
            definition: l.definition().to_string(),
            color: style.color,
        })
        .collect()
}
