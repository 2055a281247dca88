//! `model.json` (configuration, network specs, class map, optimizer step)
//! plus `model.bin` (parameters, batchnorm buffers and Adam moments).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{ModelConfig, RffModel};
use super::train::ClassMap;
use crate::error::{Error, Result};
use crate::nn::{build_bcnn, checkpoint, Adam, AdamConfig, Bcnn, BcnnSpec};
use crate::rng::stream;

pub const MODEL_JSON: &str = "model.json";
pub const MODEL_BIN: &str = "model.bin";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub model: ModelConfig,
    /// Specs in storage order: omega, phi (NS pipelines only), rff.
    pub networks: Vec<BcnnSpec>,
    pub classes: ClassMap,
    pub parameter_count: usize,
    pub adam: Option<AdamConfig>,
    pub step: u64,
}

/// A loaded checkpoint.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: RffModel,
    pub meta: CheckpointMeta,
    pub optimizer: Option<Adam>,
}

/// Write `model` (and optionally the optimizer state) under `dir`.
pub fn save_checkpoint(
    dir: &Path,
    model: &RffModel,
    classes: &ClassMap,
    optimizer: Option<&Adam>,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let nets = model.networks();
    let meta = CheckpointMeta {
        format_version: FORMAT_VERSION,
        model: model.config().clone(),
        networks: nets.iter().map(|n| n.spec().clone()).collect(),
        classes: classes.clone(),
        parameter_count: model.parameter_count(),
        adam: optimizer.map(|o| o.config),
        step: optimizer.map_or(0, Adam::steps),
    };
    let mut arrays: Vec<&[f64]> = Vec::new();
    for net in &nets {
        arrays.extend(net.params().into_iter().map(|t| t.data()));
        arrays.extend(net.buffers().into_iter().map(|t| t.data()));
    }
    if let Some(opt) = optimizer {
        let (m, v) = opt.moments();
        arrays.extend(m.iter().map(Vec::as_slice));
        arrays.extend(v.iter().map(Vec::as_slice));
    }
    checkpoint::write_arrays(&dir.join(MODEL_BIN), &arrays)?;
    fs::write(dir.join(MODEL_JSON), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

fn fill(net: &mut Bcnn, arrays: &mut std::vec::IntoIter<Vec<f64>>, path: &str) -> Result<()> {
    let bad = |reason: String| Error::Format {
        path: path.to_string(),
        reason,
    };
    let mut targets = net.params_mut();
    let mut buffers: Vec<_> = Vec::new();
    // params and buffers borrow the same network; fill params first.
    for t in targets.iter_mut() {
        let a = arrays
            .next()
            .ok_or_else(|| bad("missing parameter array".into()))?;
        if a.len() != t.len() {
            return Err(bad(format!(
                "parameter array of {} values, expected {}",
                a.len(),
                t.len()
            )));
        }
        t.data_mut().copy_from_slice(&a);
    }
    drop(targets);
    buffers.extend(net.buffers_mut());
    for t in buffers.iter_mut() {
        let a = arrays
            .next()
            .ok_or_else(|| bad("missing buffer array".into()))?;
        if a.len() != t.len() {
            return Err(bad(format!(
                "buffer array of {} values, expected {}",
                a.len(),
                t.len()
            )));
        }
        t.data_mut().copy_from_slice(&a);
    }
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let json_path = dir.join(MODEL_JSON);
    let bin_path = dir.join(MODEL_BIN);
    let path = bin_path.display().to_string();
    let meta: CheckpointMeta = serde_json::from_str(&fs::read_to_string(&json_path)?)?;
    if meta.format_version != FORMAT_VERSION {
        return Err(Error::Format {
            path: json_path.display().to_string(),
            reason: format!("unsupported checkpoint version {}", meta.format_version),
        });
    }
    let bad = |reason: &str| Error::Format {
        path: path.clone(),
        reason: reason.to_string(),
    };
    let mut arrays = checkpoint::read_arrays(&bin_path)?.into_iter();
    let mut nets = Vec::with_capacity(meta.networks.len());
    for spec in &meta.networks {
        // Initial weights are overwritten; the stream only fixes the shapes.
        let mut net = build_bcnn(spec, &mut stream(0, "checkpoint"))?;
        fill(&mut net, &mut arrays, &path)?;
        nets.push(net);
    }
    let rff = nets
        .pop()
        .ok_or_else(|| bad("checkpoint lists no networks"))?;
    let (omega, phi) = match nets.len() {
        0 => (None, None),
        2 => {
            let phi = nets.pop();
            (nets.pop(), phi)
        }
        _ => return Err(bad("unexpected number of networks")),
    };
    let model = RffModel::from_parts(meta.model.clone(), omega, phi, rff)?;
    let optimizer = match meta.adam {
        Some(cfg) => {
            let rest: Vec<Vec<f64>> = arrays.collect();
            if !rest.len().is_multiple_of(2) {
                return Err(bad("odd number of optimizer arrays"));
            }
            let v = rest[rest.len() / 2..].to_vec();
            let m = rest[..rest.len() / 2].to_vec();
            Some(Adam::restore(cfg, meta.step, m, v)?)
        }
        None => {
            if arrays.next().is_some() {
                return Err(bad("trailing arrays after model parameters"));
            }
            None
        }
    };
    Ok(Checkpoint {
        model,
        meta,
        optimizer,
    })
}
