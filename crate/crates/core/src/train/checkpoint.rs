//! Checkpoint files: u64 LE header length, JSON header, then f32 LE tensors.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::optim::AdamW;
use crate::classes::ClassSet;
use crate::swin::{param_specs, ModelConfig, ParamStore};
use crate::{Error, Result};

const FORMAT: &str = "langswin-checkpoint-v1";
const AUX_PREFIX: &str = "aux.";
const M_PREFIX: &str = "optim.m.";
const V_PREFIX: &str = "optim.v.";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset from the start of the blob section.
    offset: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    model: ModelConfig,
    run: RunConfig,
    classes: ClassSet,
    inference_only: bool,
    optimizer_step: u64,
    betas: [f64; 2],
    weight_decay: f64,
    tensors: Vec<TensorEntry>,
}

/// A trained model plus, for resumable checkpoints, the training-only state.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub run: RunConfig,
    pub classes: ClassSet,
    /// Inference parameters.
    pub backbone: ParamStore<f32>,
    /// Training-only parameters (the visual projection), all named `aux.*`.
    pub aux: ParamStore<f32>,
    /// Moments over backbone then aux parameters.
    pub optimizer: Option<AdamW<f32>>,
}

impl Checkpoint {
    /// Drop everything not needed to run the network.
    pub fn strip(&self) -> Checkpoint {
        Checkpoint {
            aux: ParamStore::default(),
            optimizer: None,
            ..self.clone()
        }
    }

    pub fn is_inference_only(&self) -> bool {
        self.aux.is_empty() && self.optimizer.is_none()
    }
}

fn push(entries: &mut Vec<TensorEntry>, blob: &mut Vec<u8>, name: String, shape: &[usize], data: &[f32]) {
    entries.push(TensorEntry {
        name,
        shape: shape.to_vec(),
        offset: blob.len() as u64,
    });
    for v in data {
        blob.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn checkpoint_bytes(ck: &Checkpoint, inference_only: bool) -> Result<Vec<u8>> {
    let ck = if inference_only { ck.strip() } else { ck.clone() };
    let mut entries = Vec::new();
    let mut blob = Vec::new();
    for (name, p) in ck.backbone.iter() {
        push(&mut entries, &mut blob, name.to_string(), &p.shape, &p.data);
    }
    for (name, p) in ck.aux.iter() {
        if !name.starts_with(AUX_PREFIX) {
            return Err(Error::Format(format!("auxiliary parameter {name} must start with {AUX_PREFIX}")));
        }
        push(&mut entries, &mut blob, name.to_string(), &p.shape, &p.data);
    }
    let (step, betas, wd) = match &ck.optimizer {
        Some(o) => {
            for (prefix, store) in [(M_PREFIX, &o.m), (V_PREFIX, &o.v)] {
                for (name, p) in store.iter() {
                    push(&mut entries, &mut blob, format!("{prefix}{name}"), &p.shape, &p.data);
                }
            }
            (o.step, [o.beta1, o.beta2], o.weight_decay)
        }
        None => (0, ck.run.betas, ck.run.weight_decay),
    };
    let header = Header {
        format: FORMAT.into(),
        model: ck.model.clone(),
        run: ck.run.clone(),
        classes: ck.classes.clone(),
        inference_only: ck.is_inference_only(),
        optimizer_step: step,
        betas,
        weight_decay: wd,
        tensors: entries,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(8 + json.len() + blob.len());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&blob);
    Ok(out)
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint, inference_only: bool) -> Result<()> {
    std::fs::write(path, checkpoint_bytes(ck, inference_only)?).map_err(|e| Error::io(path, e))
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let fmt = |m: String| Error::Format(format!("checkpoint: {m}"));
    if bytes.len() < 8 {
        return Err(fmt("truncated header length".into()));
    }
    let hlen = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
    let blob_start = 8usize
        .checked_add(hlen)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| fmt("header length exceeds file".into()))?;
    let header: Header = serde_json::from_slice(&bytes[8..blob_start])?;
    if header.format != FORMAT {
        return Err(fmt(format!("unknown format {:?}", header.format)));
    }
    let blob = &bytes[blob_start..];
    let mut backbone = ParamStore::default();
    let mut aux = ParamStore::default();
    let mut m = ParamStore::default();
    let mut v = ParamStore::default();
    let mut expected_offset = 0u64;
    for e in &header.tensors {
        let n: usize = e.shape.iter().product();
        if e.offset != expected_offset {
            return Err(fmt(format!("tensor {} at offset {}, expected {expected_offset}", e.name, e.offset)));
        }
        let start = e.offset as usize;
        let end = start + 4 * n;
        if end > blob.len() {
            return Err(fmt(format!("tensor {} runs past the end of the file", e.name)));
        }
        let data: Vec<f32> = blob[start..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        expected_offset = end as u64;
        let (store, name) = if e.name.starts_with(AUX_PREFIX) {
            (&mut aux, e.name.as_str())
        } else if let Some(n) = e.name.strip_prefix(M_PREFIX) {
            (&mut m, n)
        } else if let Some(n) = e.name.strip_prefix(V_PREFIX) {
            (&mut v, n)
        } else {
            (&mut backbone, e.name.as_str())
        };
        store.insert(name, e.shape.clone(), data)?;
    }
    if expected_offset as usize != blob.len() {
        return Err(fmt(format!("{} unreferenced trailing bytes", blob.len() - expected_offset as usize)));
    }
    backbone.check_against(&param_specs(&header.model)?)?;
    if header.model.num_classes != header.classes.len() {
        return Err(fmt(format!(
            "model has {} outputs but {} classes are listed",
            header.model.num_classes,
            header.classes.len()
        )));
    }
    let optimizer = if m.is_empty() {
        None
    } else {
        let names: Vec<String> = backbone.names().chain(aux.names()).map(String::from).collect();
        let m_names: Vec<&str> = m.names().collect();
        if m_names != names || v.names().collect::<Vec<_>>() != m_names {
            return Err(fmt("optimizer moments do not match the parameter list".into()));
        }
        Some(AdamW {
            beta1: header.betas[0],
            beta2: header.betas[1],
            weight_decay: header.weight_decay,
            step: header.optimizer_step,
            m,
            v,
        })
    };
    let ck = Checkpoint {
        model: header.model,
        run: header.run,
        classes: header.classes,
        backbone,
        aux,
        optimizer,
    };
    if header.inference_only != ck.is_inference_only() {
        return Err(fmt("inference_only flag disagrees with the stored tensors".into()));
    }
    Ok(ck)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&bytes)
}

/// Load and require the backbone to fit `model` exactly.
pub fn load_checkpoint_for(path: &Path, model: &ModelConfig) -> Result<Checkpoint> {
    let ck = load_checkpoint(path)?;
    ck.backbone.check_against(&param_specs(model)?)?;
    Ok(ck)
}
