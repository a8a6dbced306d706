use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::denoiser::{Denoiser, DenoiserConfig, LayerSpec};
use crate::error::{Error, Result};
use crate::nn::AdamState;

const MAGIC: &[u8; 8] = b"LUPCKPT1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    config: DenoiserConfig,
    manifest: Vec<LayerSpec>,
    tensors: Vec<TensorEntry>,
    optimizer_step: u64,
    train_step: u64,
    epoch: usize,
}

/// Everything needed to continue training: weights, optimizer moments and counters.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Denoiser,
    pub adam: AdamState,
    /// Number of optimizer steps taken by the training loop.
    pub train_step: u64,
    /// Number of completed epochs.
    pub epoch: usize,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let params = self.model.params();
        let header = Header {
            config: self.model.config().clone(),
            manifest: self.model.manifest().to_vec(),
            tensors: params
                .iter()
                .map(|t| TensorEntry { name: t.name.clone(), shape: t.shape.clone() })
                .collect(),
            optimizer_step: self.adam.step,
            train_step: self.train_step,
            epoch: self.epoch,
        };
        let json = serde_json::to_vec(&header)?;
        let scalars = params.num_scalars();
        let mut out = Vec::with_capacity(16 + json.len() + 24 * scalars);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        let blocks = [
            params.iter().map(|t| t.data.as_slice()).collect::<Vec<_>>(),
            self.adam.m.iter().map(Vec::as_slice).collect(),
            self.adam.v.iter().map(Vec::as_slice).collect(),
        ];
        for block in blocks {
            for x in block.into_iter().flatten() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    /// Decodes an archive; with `expected` set, a differing model config is refused.
    pub fn from_bytes(bytes: &[u8], expected: Option<&DenoiserConfig>) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint archive"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = bytes.get(16..).ok_or_else(|| bad("truncated header"))?;
        if body.len() < hlen {
            return Err(bad("truncated header"));
        }
        let header: Header = serde_json::from_slice(&body[..hlen])?;
        if let Some(cfg) = expected {
            if *cfg != header.config {
                return Err(bad("model config differs from the one stored in the checkpoint"));
            }
        }
        let mut model = Denoiser::new(header.config.clone(), 0)?;
        if model.manifest() != header.manifest.as_slice() {
            return Err(bad("layer manifest does not match the stored config"));
        }
        let entries: Vec<TensorEntry> = model
            .params()
            .iter()
            .map(|t| TensorEntry { name: t.name.clone(), shape: t.shape.clone() })
            .collect();
        if entries != header.tensors {
            return Err(bad("tensor names or shapes do not match the stored config"));
        }
        let n = model.params().num_scalars();
        let data = &body[hlen..];
        if data.len() != 3 * n * 8 {
            return Err(bad(&format!("expected {} tensor bytes, found {}", 3 * n * 8, data.len())));
        }
        let floats: Vec<f64> = data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        model.params_mut().assign_flat(&floats[..n]);
        let split = |flat: &[f64]| {
            let mut off = 0;
            entries
                .iter()
                .map(|e| {
                    let len: usize = e.shape.iter().product();
                    let v = flat[off..off + len].to_vec();
                    off += len;
                    v
                })
                .collect::<Vec<_>>()
        };
        let adam = AdamState {
            step: header.optimizer_step,
            m: split(&floats[n..2 * n]),
            v: split(&floats[2 * n..]),
        };
        Ok(Self { model, adam, train_step: header.train_step, epoch: header.epoch })
    }
}

/// Writes through a temporary file so an interrupted save never clobbers the previous archive.
pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = ckpt.to_bytes()?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path, expected: Option<&DenoiserConfig>) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes, expected)
}
