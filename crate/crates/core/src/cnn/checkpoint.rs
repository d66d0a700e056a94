//! JSON checkpoints with base64-encoded little-endian `f64` tensors.

use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{AdamConfig, CnnModel, ConvLayer, Gradients, OptimizerState};
use crate::error::{Error, Result};
use crate::features::ChannelLayout;

const FORMAT: &str = "spac-cnn";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct LayerRecord {
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    relu: bool,
    weights: String,
    bias: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct MomentRecord {
    weights: Vec<String>,
    bias: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct OptimizerRecord {
    config: AdamConfig,
    step: u64,
    epoch: usize,
    m: MomentRecord,
    v: MomentRecord,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    channel_order: String,
    channel_names: Vec<String>,
    layout: ChannelLayout,
    layers: Vec<LayerRecord>,
    optimizer: Option<OptimizerRecord>,
}

/// A model with (optionally) the optimizer state needed to resume training.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: CnnModel,
    pub optimizer: Option<OptimizerState>,
}

fn encode(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    B64.encode(bytes)
}

fn decode(text: &str, expected: usize) -> Result<Vec<f64>> {
    let bytes = B64.decode(text).map_err(|e| Error::Malformed {
        what: "checkpoint tensor",
        detail: e.to_string(),
    })?;
    if bytes.len() != expected * 8 {
        return Err(Error::Malformed {
            what: "checkpoint tensor",
            detail: format!("expected {expected} values, found {} bytes", bytes.len()),
        });
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

fn moments(g: &Gradients) -> MomentRecord {
    MomentRecord {
        weights: g.weights.iter().map(|w| encode(w.as_slice().expect("standard layout"))).collect(),
        bias: g.bias.iter().map(|b| encode(b.as_slice().expect("standard layout"))).collect(),
    }
}

fn restore_moments(rec: &MomentRecord, model: &CnnModel) -> Result<Gradients> {
    if rec.weights.len() != model.layers.len() || rec.bias.len() != model.layers.len() {
        return Err(Error::Malformed {
            what: "checkpoint optimizer",
            detail: "moment count differs from layer count".into(),
        });
    }
    let mut g = Gradients::zeros_like(model);
    for (i, layer) in model.layers.iter().enumerate() {
        let w = decode(&rec.weights[i], layer.weights.len())?;
        g.weights[i] = Array2::from_shape_vec(layer.weights.dim(), w).expect("checked length");
        g.bias[i] = Array1::from(decode(&rec.bias[i], layer.bias.len())?);
    }
    Ok(g)
}

pub fn save_checkpoint(path: &Path, model: &CnnModel, optimizer: Option<&OptimizerState>) -> Result<()> {
    let file = CheckpointFile {
        format: FORMAT.into(),
        version: VERSION,
        channel_order: model.layout.tag(),
        channel_names: model.layout.names(),
        layout: model.layout,
        layers: model
            .layers
            .iter()
            .map(|l| LayerRecord {
                in_ch: l.in_ch,
                out_ch: l.out_ch,
                kernel: l.kernel,
                relu: l.relu,
                weights: encode(l.weights.as_slice().expect("standard layout")),
                bias: encode(l.bias.as_slice().expect("standard layout")),
            })
            .collect(),
        optimizer: optimizer.map(|s| OptimizerRecord {
            config: s.config,
            step: s.step,
            epoch: s.epoch,
            m: moments(&s.m),
            v: moments(&s.v),
        }),
    };
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, serde_json::to_vec(&file)?)?;
    fs::rename(tmp, path)?;
    Ok(())
}

/// Loads a checkpoint. With `expected` set, a checkpoint built for another
/// channel layout is refused.
pub fn load_checkpoint(path: &Path, expected: Option<&ChannelLayout>) -> Result<Checkpoint> {
    let file: CheckpointFile = serde_json::from_slice(&fs::read(path)?)?;
    if file.format != FORMAT || file.version != VERSION {
        return Err(Error::Malformed {
            what: "checkpoint",
            detail: format!("unsupported format {} v{}", file.format, file.version),
        });
    }
    if let Some(exp) = expected {
        if exp.channels() != file.layout.channels() || exp.tag() != file.channel_order {
            return Err(Error::ChannelMismatch {
                expected: exp.tag(),
                found: file.channel_order,
            });
        }
    }
    if file.layers.first().map(|l| l.in_ch) != Some(file.layout.channels()) {
        return Err(Error::ChannelMismatch {
            expected: file.layout.tag(),
            found: format!("{:?} input channels", file.layers.first().map(|l| l.in_ch)),
        });
    }
    let layers = file
        .layers
        .iter()
        .map(|r| {
            let mut l = ConvLayer::zeros(r.in_ch, r.out_ch, r.kernel, r.relu);
            let w = decode(&r.weights, l.weights.len())?;
            l.weights = Array2::from_shape_vec(l.weights.dim(), w).expect("checked length");
            l.bias = Array1::from(decode(&r.bias, r.out_ch)?);
            Ok(l)
        })
        .collect::<Result<Vec<_>>>()?;
    let model = CnnModel {
        layers,
        layout: file.layout,
    };
    let optimizer = file
        .optimizer
        .map(|o| -> Result<OptimizerState> {
            Ok(OptimizerState {
                config: o.config,
                m: restore_moments(&o.m, &model)?,
                v: restore_moments(&o.v, &model)?,
                step: o.step,
                epoch: o.epoch,
            })
        })
        .transpose()?;
    Ok(Checkpoint { model, optimizer })
}
