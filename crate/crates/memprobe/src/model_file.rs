//! Sparse-autoencoder model files (`.memsae`).
//!
//! Same framing as activation dumps: 6-byte magic `MEMSAE`, u32-LE header
//! length, JSON header, then the parameters as f32-LE in the order
//! `W1, b1, W2, b2`. The header carries the training configuration, the
//! per-dimension normalisation statistics applied to inputs and the loss
//! conventions, so a model file is self-describing.

use std::io::Write;
use std::path::Path;

use memprobe_core::sae::{OptimizerKind, Regime, SaeConfig, SaeModel};
use memprobe_core::stats::Standardizer;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::provenance::Provenance;

pub const MAGIC: &[u8; 6] = b"MEMSAE";
pub const FORMAT_VERSION: u32 = 1;
/// Per-image reconstruction loss convention recorded in every model file.
pub const RECON_LOSS: &str = "sum_squared_error";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigRecord {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub sparsity_weight: f64,
    pub seed: u64,
    pub regime: String,
    pub optimizer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adam: Option<[f64; 3]>,
}

impl From<&SaeConfig> for ConfigRecord {
    fn from(c: &SaeConfig) -> Self {
        Self {
            input_dim: c.input_dim,
            hidden_dim: c.hidden_dim,
            learning_rate: c.learning_rate,
            batch_size: c.batch_size,
            epochs: c.epochs,
            sparsity_weight: c.sparsity_weight,
            seed: c.seed,
            regime: c.regime.name().into(),
            optimizer: c.optimizer.name().into(),
            adam: match c.optimizer {
                OptimizerKind::Adam { beta1, beta2, eps } => Some([beta1, beta2, eps]),
                OptimizerKind::Sgd => None,
            },
        }
    }
}

impl ConfigRecord {
    pub fn to_config(&self) -> Result<SaeConfig> {
        let regime: Regime = self.regime.parse()?;
        let optimizer = match (self.optimizer.as_str(), self.adam) {
            ("adam", Some([beta1, beta2, eps])) => OptimizerKind::Adam { beta1, beta2, eps },
            ("adam", None) => OptimizerKind::ADAM,
            ("sgd", _) => OptimizerKind::Sgd,
            (other, _) => return Err(Error::BadHeader(format!("unknown optimizer `{other}`"))),
        };
        Ok(SaeConfig {
            input_dim: self.input_dim,
            hidden_dim: self.hidden_dim,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            sparsity_weight: self.sparsity_weight,
            seed: self.seed,
            regime,
            optimizer,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelHeader {
    format_version: u32,
    recon_loss: String,
    /// Which dump tensor the model was trained on, e.g. `cls@L12` or `pooled`.
    representation: String,
    config: ConfigRecord,
    normalization: Normalization,
    params: Vec<ParamEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<ProvenanceRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ProvenanceRecord {
    tool: String,
    version: String,
    config_hash: String,
    seed: u64,
}

/// Everything persisted for a trained autoencoder.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub config: SaeConfig,
    pub normalization: Standardizer,
    pub representation: String,
    pub model: SaeModel,
}

pub fn save_model(path: &Path, file: &ModelFile, provenance: Option<&Provenance>) -> Result<()> {
    let (d, h) = (file.model.input_dim(), file.model.hidden_dim());
    let header = ModelHeader {
        format_version: FORMAT_VERSION,
        recon_loss: RECON_LOSS.into(),
        representation: file.representation.clone(),
        config: ConfigRecord::from(&file.config),
        normalization: Normalization {
            mean: file.normalization.mean.clone(),
            std: file.normalization.std.clone(),
        },
        params: vec![
            ParamEntry { name: "W1".into(), shape: vec![h, d] },
            ParamEntry { name: "b1".into(), shape: vec![h] },
            ParamEntry { name: "W2".into(), shape: vec![d, h] },
            ParamEntry { name: "b2".into(), shape: vec![d] },
        ],
        provenance: provenance.map(|p| ProvenanceRecord {
            tool: p.tool.clone(),
            version: p.version.clone(),
            config_hash: p.config_hash.clone(),
            seed: p.seed,
        }),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::BadHeader(e.to_string()))?;
    let mut buf = Vec::with_capacity(10 + json.len() + 4 * file.model.params().len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    for &p in file.model.params() {
        buf.extend_from_slice(&(p as f32).to_le_bytes());
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<ModelFile> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 6 || &bytes[..6] != MAGIC {
        return Err(Error::BadMagic {
            found: bytes[..bytes.len().min(6)].to_vec(),
            expected: MAGIC,
        });
    }
    if bytes.len() < 10 {
        return Err(Error::Truncated("model file ends inside the preamble".into()));
    }
    let header_len = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let body = bytes
        .get(10..10 + header_len)
        .ok_or_else(|| Error::Truncated("model header".into()))?;
    let header: ModelHeader = serde_json::from_slice(body).map_err(|e| Error::BadHeader(e.to_string()))?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::BadHeader(format!("unsupported model format version {}", header.format_version)));
    }
    if header.recon_loss != RECON_LOSS {
        return Err(Error::BadHeader(format!("unsupported loss convention `{}`", header.recon_loss)));
    }
    let config = header.config.to_config()?;
    let (d, h) = (config.input_dim, config.hidden_dim);
    if header.normalization.mean.len() != d || header.normalization.std.len() != d {
        return Err(Error::BadHeader("normalisation statistics do not match input_dim".into()));
    }
    let payload = &bytes[10 + header_len..];
    let expected = 4 * (2 * d * h + d + h);
    if payload.len() != expected {
        return Err(Error::Truncated(format!(
            "model payload has {} bytes, expected {expected}",
            payload.len()
        )));
    }
    let params = payload
        .chunks_exact(4)
        .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
        .collect();
    Ok(ModelFile {
        model: SaeModel::from_params(d, h, params)?,
        config,
        normalization: Standardizer {
            mean: header.normalization.mean,
            std: header.normalization.std,
        },
        representation: header.representation,
    })
}
