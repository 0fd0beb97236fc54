//! Model versions on disk and the retraining promotion gate.
//!
//! Layout of a model directory:
//!
//! * `registry.json`: every known version with its parent, dev score and whether it was
//!   promoted, plus the active version,
//! * `versions/<version>/`: one model artifact per version,
//! * `retrain_log.jsonl`: one [`RetrainOutcome`] per retraining run.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ReviewError;
use crate::classifier::{
    examples_from_corpus, train, ClassifierError, Model, ModelConfig, TrainConfig,
};
use crate::corpus::{AbstractId, AnnotatedAbstract, LabelSet};
use crate::eval::micro_prf_aligned;
use crate::ingest::SegmenterConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistryEntry {
    pub version: String,
    pub parent: Option<String>,
    pub dev_micro_f1: Option<f64>,
    pub promoted: bool,
    pub trained_on: usize,
    /// Reviewed abstracts in the store when this version was trained.
    pub reviewed_at_training: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct RegistryFile {
    active: Option<String>,
    models: Vec<RegistryEntry>,
}

/// Versioned model storage with one active version.
#[derive(Debug)]
pub struct ModelRegistry {
    dir: PathBuf,
    file: RegistryFile,
}

impl ModelRegistry {
    pub fn open(dir: &Path) -> Result<Self, ReviewError> {
        std::fs::create_dir_all(dir.join("versions"))?;
        let file = match std::fs::read_to_string(dir.join("registry.json")) {
            Ok(text) => serde_json::from_str(&text)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => RegistryFile::default(),
            Err(e) => return Err(e.into()),
        };
        Ok(ModelRegistry {
            dir: dir.to_path_buf(),
            file,
        })
    }

    fn save(&self) -> Result<(), ReviewError> {
        let tmp = self.dir.join("registry.json.tmp");
        std::fs::write(&tmp, serde_json::to_string_pretty(&self.file)?)?;
        std::fs::rename(&tmp, self.dir.join("registry.json"))?;
        Ok(())
    }

    pub fn version_dir(&self, version: &str) -> PathBuf {
        self.dir.join("versions").join(version)
    }

    pub fn active_version(&self) -> Option<&str> {
        self.file.active.as_deref()
    }

    pub fn entries(&self) -> &[RegistryEntry] {
        &self.file.models
    }

    pub fn entry(&self, version: &str) -> Option<&RegistryEntry> {
        self.file.models.iter().find(|e| e.version == version)
    }

    /// Reviewed-abstract count recorded for the active version (0 when there is none).
    pub fn reviewed_at_last_training(&self) -> u64 {
        self.file
            .models
            .iter()
            .map(|e| e.reviewed_at_training)
            .max()
            .unwrap_or(0)
    }

    pub fn load_active(&self) -> Result<Option<Model>, ReviewError> {
        match &self.file.active {
            Some(v) => Model::load(&self.version_dir(v))
                .map(Some)
                .map_err(|e| ReviewError::Other(format!("cannot load model {v}: {e}"))),
            None => Ok(None),
        }
    }

    /// Stores `model` under its version; with `promote` it also becomes active.
    pub fn add(&mut self, model: &Model, entry: RegistryEntry) -> Result<(), ReviewError> {
        model
            .save(&self.version_dir(&model.version))
            .map_err(|e| ReviewError::Other(format!("cannot save model: {e}")))?;
        if entry.promoted {
            self.file.active = Some(entry.version.clone());
        }
        self.file.models.retain(|e| e.version != entry.version);
        self.file.models.push(entry);
        self.save()
    }

    pub fn append_log(&self, outcome: &RetrainOutcome) -> Result<(), ReviewError> {
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.dir.join("retrain_log.jsonl"))?;
        writeln!(f, "{}", serde_json::to_string(outcome)?)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrainConfig {
    /// Newly reviewed abstracts needed before a retrain runs.
    pub threshold: u64,
    /// Largest allowed dev micro-F1 drop, in percentage points.
    pub epsilon: f64,
    /// Share of abstracts (by id hash, in percent) held out as the frozen dev split when
    /// no dev file is configured.
    pub dev_percent: u64,
    pub train: TrainConfig,
    pub model: ModelConfig,
}

impl Default for RetrainConfig {
    fn default() -> Self {
        RetrainConfig {
            threshold: 50,
            epsilon: 0.5,
            dev_percent: 20,
            train: TrainConfig::default(),
            model: ModelConfig::default(),
        }
    }
}

/// Stable id-hash holdout, so an abstract stays on the same side across retrains.
pub fn is_dev_holdout(id: &AbstractId, percent: u64) -> bool {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in id.to_string().bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h % 100 < percent
}

/// Sentence-level micro-F1 (percent) of `model` on gold records.
pub fn dev_micro_f1(
    model: &Model,
    dev: &[AnnotatedAbstract],
    segmenter: &SegmenterConfig,
) -> Result<f64, ClassifierError> {
    let (examples, _) = examples_from_corpus(dev, segmenter, model.config.context_window)?;
    let gold: Vec<LabelSet> = examples.iter().map(|e| e.labels).collect();
    let pred = examples
        .iter()
        .map(|e| model.predict(&e.sentence, &e.context).map(|p| p.labels))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(micro_prf_aligned(&gold, &pred).f1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrainOutcome {
    pub candidate_version: String,
    pub parent_version: Option<String>,
    pub candidate_dev_f1: f64,
    pub active_dev_f1: Option<f64>,
    pub epsilon: f64,
    pub promoted: bool,
    pub train_abstracts: usize,
    pub dev_abstracts: usize,
}

/// Trains a candidate and applies the gate: promote iff there is no active model or the
/// candidate's dev micro-F1 is at least the active model's minus `epsilon`.
pub fn retrain(
    active: Option<&Model>,
    train_records: &[AnnotatedAbstract],
    dev_records: &[AnnotatedAbstract],
    cfg: &RetrainConfig,
    segmenter: &SegmenterConfig,
) -> Result<(Model, RetrainOutcome), ClassifierError> {
    let mc = match active {
        Some(m) => {
            let mut mc = cfg.model.clone();
            mc.variant = m.config.variant;
            mc.sentence_position_feature = m.config.sentence_position_feature;
            mc
        }
        None => cfg.model.clone(),
    };
    let (examples, skipped) = examples_from_corpus(train_records, segmenter, mc.context_window)?;
    if skipped > 0 {
        tracing::warn!(skipped, "sentences without labels left out of training");
    }
    let candidate = train(&examples, None, &cfg.train, &mc)?;
    let candidate_f1 = dev_micro_f1(&candidate, dev_records, segmenter)?;
    let active_f1 = active
        .map(|m| dev_micro_f1(m, dev_records, segmenter))
        .transpose()?;
    let promoted = active_f1.is_none_or(|a| candidate_f1 >= a - cfg.epsilon);
    let outcome = RetrainOutcome {
        candidate_version: candidate.version.clone(),
        parent_version: active.map(|m| m.version.clone()),
        candidate_dev_f1: candidate_f1,
        active_dev_f1: active_f1,
        epsilon: cfg.epsilon,
        promoted,
        train_abstracts: train_records.len(),
        dev_abstracts: dev_records.len(),
    };
    Ok((candidate, outcome))
}
