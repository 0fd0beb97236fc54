//! Model directories on disk.
//!
//! | file            | content                                                        |
//! |-----------------|----------------------------------------------------------------|
//! | `config.json`   | `{"version": ..., "config": ModelConfig}`                      |
//! | `vocab.txt`     | one vocabulary piece per line, line `i` is id `i`              |
//! | `manifest.json` | `{"dtype": "f64-le", "total": N, "tensors": [{name, shape, offset, len}]}` |
//! | `weights.bin`   | `N` little-endian `f64` values, tensors back to back in manifest order |
//! | `metrics.jsonl` | one `{"epoch", "loss", "dev_micro_f1"}` record per training epoch |
//!
//! Offsets and lengths count values, not bytes.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::TensorSpec;
use super::{ClassifierError, EpochMetrics, Layout, Model, ModelConfig, Tokenizer};

const DTYPE: &str = "f64-le";

#[derive(Serialize, Deserialize)]
struct ConfigFile {
    version: String,
    config: ModelConfig,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    dtype: String,
    total: usize,
    tensors: Vec<TensorSpec>,
}

fn artifact_err(path: &Path, message: impl std::fmt::Display) -> ClassifierError {
    ClassifierError::Artifact(format!("{}: {message}", path.display()))
}

impl Model {
    /// Writes the model directory, creating it if needed.
    pub fn save(&self, dir: &Path) -> Result<(), ClassifierError> {
        std::fs::create_dir_all(dir)?;
        let cfg = ConfigFile {
            version: self.version.clone(),
            config: self.config.clone(),
        };
        std::fs::write(dir.join("config.json"), serde_json::to_string_pretty(&cfg)?)?;
        self.tokenizer.save(&dir.join("vocab.txt"))?;
        let manifest = Manifest {
            dtype: DTYPE.into(),
            total: self.layout.total,
            tensors: self.layout.tensors.clone(),
        };
        std::fs::write(
            dir.join("manifest.json"),
            serde_json::to_string_pretty(&manifest)?,
        )?;
        let mut bytes = Vec::with_capacity(self.params.len() * 8);
        for v in &self.params {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(dir.join("weights.bin"), bytes)?;
        let mut metrics = std::fs::File::create(dir.join("metrics.jsonl"))?;
        for m in &self.history {
            writeln!(metrics, "{}", serde_json::to_string(m)?)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Model, ClassifierError> {
        let cfg_path = dir.join("config.json");
        let cfg: ConfigFile = serde_json::from_str(&std::fs::read_to_string(&cfg_path)?)
            .map_err(|e| artifact_err(&cfg_path, e))?;
        cfg.config.check()?;
        let tokenizer = Tokenizer::load(&dir.join("vocab.txt"))?;
        if tokenizer.len() != cfg.config.encoder.vocab_size {
            return Err(artifact_err(
                &dir.join("vocab.txt"),
                format!(
                    "{} entries but the config says {}",
                    tokenizer.len(),
                    cfg.config.encoder.vocab_size
                ),
            ));
        }
        let layout = Layout::new(&cfg.config.encoder, cfg.config.saliency_buckets);
        let man_path = dir.join("manifest.json");
        let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(&man_path)?)
            .map_err(|e| artifact_err(&man_path, e))?;
        if manifest.dtype != DTYPE {
            return Err(artifact_err(
                &man_path,
                format!("unsupported dtype {}", manifest.dtype),
            ));
        }
        if manifest.tensors != layout.tensors || manifest.total != layout.total {
            return Err(artifact_err(
                &man_path,
                "tensor layout does not match the config",
            ));
        }
        let w_path = dir.join("weights.bin");
        let bytes = std::fs::read(&w_path)?;
        if bytes.len() != layout.total * 8 {
            return Err(artifact_err(
                &w_path,
                format!("{} bytes, expected {}", bytes.len(), layout.total * 8),
            ));
        }
        let params = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let history = match std::fs::read_to_string(dir.join("metrics.jsonl")) {
            Ok(text) => text
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(serde_json::from_str::<EpochMetrics>)
                .collect::<Result<_, _>>()?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        Ok(Model {
            config: cfg.config,
            tokenizer,
            layout,
            params,
            version: cfg.version,
            history,
        })
    }
}
