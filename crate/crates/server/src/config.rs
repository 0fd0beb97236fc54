//! The service configuration file (JSON).

use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};

use movekit::classifier::{ModelConfig, TrainConfig};
use movekit::ingest::SegmenterConfig;
use movekit::review::RetrainConfig;
use serde::{Deserialize, Serialize};

use crate::ServerError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    /// 0 picks a free port.
    pub port: u16,
    pub bind: IpAddr,
    /// Event log and snapshot.
    pub data_dir: PathBuf,
    /// Model registry.
    pub model_dir: PathBuf,
    /// Newly reviewed abstracts needed before a retrain.
    pub retrain_threshold: u64,
    /// Largest tolerated dev micro-F1 drop on retrain, in points.
    pub epsilon: f64,
    /// Holdout share used as the dev split when `dev_file` is absent.
    pub dev_percent: u64,
    /// Frozen dev split (doccano JSON-Lines with reviewed labels).
    pub dev_file: Option<PathBuf>,
    /// Reviewed abstracts added to every retraining set.
    pub gold_file: Option<PathBuf>,
    /// Model artifact imported into an empty registry at start-up.
    pub initial_model: Option<PathBuf>,
    /// Segmenter settings (JSON); built-in defaults when absent.
    pub segmenter: Option<PathBuf>,
    /// Built review UI served at `/`.
    pub ui_dir: Option<PathBuf>,
    pub log_level: String,
    pub train: TrainConfig,
    pub model: ModelConfig,
}

impl Default for ServerConfig {
    fn default() -> Self {
        let retrain = RetrainConfig::default();
        ServerConfig {
            port: 8080,
            bind: IpAddr::V4(Ipv4Addr::LOCALHOST),
            data_dir: PathBuf::from("data"),
            model_dir: PathBuf::from("models"),
            retrain_threshold: retrain.threshold,
            epsilon: retrain.epsilon,
            dev_percent: retrain.dev_percent,
            dev_file: None,
            gold_file: None,
            initial_model: None,
            segmenter: None,
            ui_dir: None,
            log_level: "info".to_string(),
            train: retrain.train,
            model: retrain.model,
        }
    }
}

impl ServerConfig {
    /// Reads a config file; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, ServerError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ServerError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: ServerConfig = serde_json::from_str(&text)
            .map_err(|e| ServerError::Config(format!("{}: {e}", path.display())))?;
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        cfg.check()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data_dir);
        fix(&mut self.model_dir);
        for p in [
            &mut self.dev_file,
            &mut self.gold_file,
            &mut self.initial_model,
            &mut self.segmenter,
            &mut self.ui_dir,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    pub fn check(&self) -> Result<(), ServerError> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(ServerError::Config(format!(
                "epsilon must be a non-negative number, got {}",
                self.epsilon
            )));
        }
        if self.dev_percent > 100 {
            return Err(ServerError::Config(format!(
                "dev_percent must be at most 100, got {}",
                self.dev_percent
            )));
        }
        self.train
            .check()
            .and_then(|_| self.model.check())
            .map_err(|e| ServerError::Config(e.to_string()))
    }

    pub fn addr(&self) -> SocketAddr {
        SocketAddr::new(self.bind, self.port)
    }

    pub fn retrain_config(&self) -> RetrainConfig {
        RetrainConfig {
            threshold: self.retrain_threshold,
            epsilon: self.epsilon,
            dev_percent: self.dev_percent,
            train: self.train.clone(),
            model: self.model.clone(),
        }
    }

    pub fn segmenter_config(&self) -> Result<SegmenterConfig, ServerError> {
        match &self.segmenter {
            Some(p) => SegmenterConfig::from_json_file(p)
                .map_err(|e| ServerError::Config(format!("{}: {e}", p.display()))),
            None => Ok(SegmenterConfig::default()),
        }
    }
}
