//! JSON checkpoints for correlation matrices and classifiers.
//!
//! Every float is stored as its shortest round-trip decimal string, so
//! `load(save(x))` reproduces `x` bit for bit.

use std::path::Path;

use pclab_core::model::ClassifierState;
use pclab_core::{CorrelationMatrix, LabelSpace};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const FORMAT_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Checkpoint {
    Pcm(CorrelationMatrix),
    Classifier(ClassifierState),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PcmPayload {
    num_classes: usize,
    entries: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PcmMeta {
    version: u64,
    mu_history: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClassifierPayload {
    num_classes: usize,
    dim: usize,
    weights: Vec<String>,
    bias: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClassifierMeta {
    seed: u64,
    step: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Body {
    Pcm {
        payload: PcmPayload,
        metadata: PcmMeta,
    },
    Classifier {
        payload: ClassifierPayload,
        metadata: ClassifierMeta,
    },
}

#[derive(Serialize, Deserialize)]
struct File {
    format_version: u64,
    #[serde(flatten)]
    body: Body,
}

#[derive(Deserialize)]
struct VersionProbe {
    format_version: u64,
}

fn encode(values: &[f64]) -> Vec<String> {
    values.iter().map(|v| format!("{v:?}")).collect()
}

fn decode(values: &[String]) -> Result<Vec<f64>, String> {
    values
        .iter()
        .map(|s| {
            s.parse::<f64>()
                .map_err(|e| format!("bad float {s:?}: {e}"))
        })
        .collect()
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        let body = match self {
            Self::Pcm(pcm) => Body::Pcm {
                payload: PcmPayload {
                    num_classes: pcm.size(),
                    entries: encode(pcm.entries()),
                },
                metadata: PcmMeta {
                    version: pcm.version(),
                    mu_history: encode(pcm.mu_history()),
                },
            },
            Self::Classifier(state) => Body::Classifier {
                payload: ClassifierPayload {
                    num_classes: state.num_classes(),
                    dim: state.dim(),
                    weights: encode(state.weights()),
                    bias: encode(state.bias()),
                },
                metadata: ClassifierMeta {
                    seed: state.seed(),
                    step: state.step(),
                },
            },
        };
        let file = File {
            format_version: FORMAT_VERSION,
            body,
        };
        let mut text = serde_json::to_string_pretty(&file).expect("checkpoint serializes");
        text.push('\n');
        text
    }

    /// `path` only labels errors.
    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let corrupt = |reason: String| CliError::CorruptFile {
            path: path.to_path_buf(),
            reason,
        };
        let probe: VersionProbe = serde_json::from_str(text).map_err(|e| corrupt(e.to_string()))?;
        if probe.format_version != FORMAT_VERSION {
            return Err(CliError::UnsupportedVersion {
                path: path.to_path_buf(),
                version: probe.format_version,
            });
        }
        let file: File = serde_json::from_str(text).map_err(|e| corrupt(e.to_string()))?;
        match file.body {
            Body::Pcm { payload, metadata } => {
                let entries = decode(&payload.entries).map_err(corrupt)?;
                let mu_history = decode(&metadata.mu_history).map_err(corrupt)?;
                CorrelationMatrix::from_parts(
                    payload.num_classes,
                    entries,
                    metadata.version,
                    mu_history,
                )
                .map(Self::Pcm)
                .map_err(|e| corrupt(e.to_string()))
            }
            Body::Classifier { payload, metadata } => {
                let labels =
                    LabelSpace::new(payload.num_classes).map_err(|e| corrupt(e.to_string()))?;
                let weights = decode(&payload.weights).map_err(corrupt)?;
                let bias = decode(&payload.bias).map_err(corrupt)?;
                ClassifierState::from_parts(
                    &labels,
                    payload.dim,
                    weights,
                    bias,
                    metadata.step,
                    metadata.seed,
                )
                .map(Self::Classifier)
                .map_err(|e| corrupt(e.to_string()))
            }
        }
    }
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    std::fs::write(path, checkpoint.to_json()).map_err(|e| CliError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Checkpoint::from_json(&text, path)
}

pub fn load_pcm(path: &Path) -> Result<CorrelationMatrix> {
    match load_checkpoint(path)? {
        Checkpoint::Pcm(pcm) => Ok(pcm),
        Checkpoint::Classifier(_) => Err(CliError::CorruptFile {
            path: path.to_path_buf(),
            reason: "expected a pcm checkpoint, found a classifier".into(),
        }),
    }
}

pub fn load_classifier(path: &Path) -> Result<ClassifierState> {
    match load_checkpoint(path)? {
        Checkpoint::Classifier(state) => Ok(state),
        Checkpoint::Pcm(_) => Err(CliError::CorruptFile {
            path: path.to_path_buf(),
            reason: "expected a classifier checkpoint, found a pcm".into(),
        }),
    }
}
