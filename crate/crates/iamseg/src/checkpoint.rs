//! `TNSR1` tensor files and checkpoint directories.
//!
//! A tensor file is the magic `TNSR1`, a little-endian `u32` rank, that many
//! `u32` dimensions and the row-major `f64` data in little-endian order. A
//! checkpoint is a directory with `manifest.json` (config plus the file,
//! name and shape of every parameter) and one tensor file per parameter.

use std::fs;
use std::path::Path;

use iamseg_core::model::{Model, ModelConfig};
use iamseg_core::tensor::ParamStore;
use iamseg_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::json;

const MAGIC: &[u8; 5] = b"TNSR1";

pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(9 + 4 * t.rank() + 8 * t.len());
    out.extend_from_slice(MAGIC);
    out.extend((t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend((d as u32).to_le_bytes());
    }
    for &v in t.data() {
        out.extend(v.to_le_bytes());
    }
    out
}

pub fn decode_tensor(path: &Path, bytes: &[u8]) -> Result<Tensor> {
    let bad = |m: String| Error::format(path, m);
    if bytes.len() < 9 || &bytes[..5] != MAGIC {
        return Err(bad("missing TNSR1 header".into()));
    }
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes")) as usize;
    let rank = u32_at(5);
    let body = 9 + 4 * rank;
    if bytes.len() < body {
        return Err(bad(format!("truncated shape for rank {rank}")));
    }
    let shape: Vec<usize> = (0..rank).map(|i| u32_at(9 + 4 * i)).collect();
    let len: usize = shape.iter().product();
    if bytes.len() != body + 8 * len {
        return Err(bad(format!(
            "shape {shape:?} needs {} data bytes, found {}",
            8 * len,
            bytes.len() - body
        )));
    }
    let data = bytes[body..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(Tensor::from_vec(&shape, data)?)
}

pub fn write_tensor(path: &Path, t: &Tensor) -> Result<()> {
    fs::write(path, encode_tensor(t)).map_err(Error::io(path))
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    decode_tensor(path, &bytes)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub file: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub config: ModelConfig,
    pub params: Vec<ParamEntry>,
}

pub fn save_checkpoint(dir: &Path, model: &Model) -> Result<()> {
    fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let mut params = Vec::new();
    for (i, (name, t)) in model.params.iter().enumerate() {
        let file = format!("{i:03}_{name}.tnsr");
        write_tensor(&dir.join(&file), t)?;
        params.push(ParamEntry {
            name: name.to_string(),
            file,
            shape: t.shape().to_vec(),
        });
    }
    let manifest = Manifest {
        format: "TNSR1".into(),
        config: model.cfg.clone(),
        params,
    };
    json::write_canonical(&dir.join("manifest.json"), &manifest)
}

/// Loads a checkpoint and checks it against the architecture its config describes.
pub fn load_checkpoint(dir: &Path) -> Result<Model> {
    let path = dir.join("manifest.json");
    let manifest: Manifest = json::read_json(&path)?;
    let reference = Model::init(&manifest.config)?;
    let mut store = ParamStore::new();
    for entry in &manifest.params {
        let t = read_tensor(&dir.join(&entry.file))?;
        if t.shape() != entry.shape.as_slice() {
            return Err(Error::format(&path, format!("{}: manifest shape differs from file", entry.name)));
        }
        store.insert(entry.name.clone(), t)?;
    }
    let expected: Vec<(&str, &[usize])> = reference.params.iter().map(|(n, t)| (n, t.shape())).collect();
    let found: Vec<(&str, &[usize])> = store.iter().map(|(n, t)| (n, t.shape())).collect();
    if expected != found {
        return Err(Error::format(&path, "parameter set does not match the configured architecture"));
    }
    Ok(Model {
        cfg: manifest.config,
        params: store,
    })
}
