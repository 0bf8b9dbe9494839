//! Binary checkpoint format.
//!
//! ```text
//! "XRB1" | u32 LE header length | JSON header | f32 LE parameter data
//! ```
//!
//! The header lists every parameter tensor by name and shape; the tensors
//! follow concatenated in header order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{CnnModel, Layers, PARAM_NAMES};
use crate::optim::AdamWConfig;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"XRB1";
pub const DTYPE: &str = "f32le";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub layers: Vec<LayerEntry>,
    pub dtype: String,
    pub seed: u64,
    pub epoch: usize,
    pub val_auc: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<AdamWConfig>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub model: CnnModel<f32>,
}

impl Checkpoint {
    pub fn new(model: CnnModel<f32>, seed: u64, epoch: usize, val_auc: f64, optimizer: Option<AdamWConfig>) -> Self {
        let layers = PARAM_NAMES
            .iter()
            .zip(model.layers().tensors())
            .map(|(name, t)| LayerEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect();
        Self {
            header: CheckpointHeader {
                layers,
                dtype: DTYPE.into(),
                seed,
                epoch,
                val_auc,
                optimizer,
            },
            model,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let mut out = Vec::with_capacity(8 + header.len() + self.model.param_count() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for t in self.model.layers().tensors() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::format(path, reason);
        if bytes.len() < 8 || &bytes[..4] != MAGIC {
            return Err(bad("not an XRB1 checkpoint".into()));
        }
        let hlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let body_start = 8 + hlen;
        if bytes.len() < body_start {
            return Err(bad("truncated header".into()));
        }
        let header: CheckpointHeader =
            serde_json::from_slice(&bytes[8..body_start]).map_err(|e| bad(format!("header: {e}")))?;
        if header.dtype != DTYPE {
            return Err(bad(format!("unsupported dtype `{}`", header.dtype)));
        }
        let reference = Layers::<f32>::zeros();
        if header.layers.len() != PARAM_NAMES.len() {
            return Err(Error::InvalidShape(format!(
                "checkpoint has {} tensors, architecture needs {}",
                header.layers.len(),
                PARAM_NAMES.len()
            )));
        }
        for ((entry, name), want) in header.layers.iter().zip(PARAM_NAMES).zip(reference.tensors()) {
            if entry.name != name || entry.shape != want.shape() {
                return Err(Error::InvalidShape(format!(
                    "checkpoint tensor `{}` {:?} does not match architecture `{name}` {:?}",
                    entry.name,
                    entry.shape,
                    want.shape()
                )));
            }
        }
        let total: usize = header.layers.iter().map(|l| l.shape.iter().product::<usize>()).sum();
        let body = &bytes[body_start..];
        if body.len() != total * 4 {
            return Err(bad(format!(
                "expected {} bytes of parameters, found {}",
                total * 4,
                body.len()
            )));
        }
        let mut values = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()));
        let mut layers = Layers::<f32>::zeros();
        for (t, name) in layers.tensors_mut().into_iter().zip(PARAM_NAMES) {
            let n = t.len();
            let data: Vec<f32> = values.by_ref().take(n).collect();
            *t = Tensor::new(t.shape(), data)?;
            t.check_finite(name)?;
        }
        Ok(Self {
            header,
            model: CnnModel::try_from_layers(layers)?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
