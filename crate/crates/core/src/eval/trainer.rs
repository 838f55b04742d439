//! Configs for an external neural trainer. Nothing here trains a network.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::corpus::atomic_write;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainerKind {
    /// Decoder pretrained with next-token prediction.
    Causal,
    /// Encoder pretrained with masked language modeling.
    Masked,
}

impl fmt::Display for TrainerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrainerKind::Causal => "causal",
            TrainerKind::Masked => "masked",
        })
    }
}

impl FromStr for TrainerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "causal" => Ok(TrainerKind::Causal),
            "masked" => Ok(TrainerKind::Masked),
            other => Err(format!("unknown trainer kind {other:?}; expected causal or masked")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerConfig {
    pub kind: TrainerKind,
    pub batch_sequences: u32,
    pub sequence_length: u32,
    pub epochs: u32,
    pub learning_rate: f64,
    pub warmup_fraction: f64,
    pub warmup_schedule: String,
    pub precision: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mlm_probability: Option<f64>,
    /// Manifest of the pretraining corpus.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus_manifest: Option<String>,
}

impl TrainerConfig {
    pub fn new(kind: TrainerKind) -> Self {
        Self {
            kind,
            batch_sequences: 512,
            sequence_length: 128,
            epochs: 5,
            learning_rate: 5e-5,
            warmup_fraction: 0.10,
            warmup_schedule: "linear".into(),
            precision: "full".into(),
            mlm_probability: (kind == TrainerKind::Masked).then_some(0.15),
            corpus_manifest: None,
        }
    }

    pub fn with_manifest(mut self, manifest: impl Into<String>) -> Self {
        self.corpus_manifest = Some(manifest.into());
        self
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }
}

/// Write the config for `kind` to `out_path` and return it.
pub fn export_trainer_config(
    kind: TrainerKind,
    corpus_manifest: Option<&str>,
    out_path: &Path,
) -> Result<TrainerConfig, EvalError> {
    let mut cfg = TrainerConfig::new(kind);
    cfg.corpus_manifest = corpus_manifest.map(String::from);
    atomic_write(out_path, cfg.to_json().as_bytes()).map_err(|e| match e {
        crate::corpus::StoreError::Io { path, source } => EvalError::Io { path, source },
        other => EvalError::Store(other),
    })?;
    Ok(cfg)
}
