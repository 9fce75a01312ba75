use std::fs;
use std::io::Cursor;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::Architecture;
use super::model::Model;
use crate::error::{Error, Result};
use crate::network::NetworkSpec;
use crate::tensor::{read_container, write_container, Tensor};

const CHECKPOINT_KIND: &str = "domattn-checkpoint";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub kind: String,
    pub architecture: Architecture,
    pub specs: Vec<NetworkSpec>,
}

pub fn encode_checkpoint(model: &Model) -> Result<Vec<u8>> {
    let header = CheckpointHeader {
        kind: CHECKPOINT_KIND.to_owned(),
        architecture: model.architecture,
        specs: model.specs(),
    };
    let tensors: Vec<(String, &Tensor)> = model
        .members
        .iter()
        .enumerate()
        .flat_map(|(k, m)| {
            m.params()
                .iter()
                .map(move |p| (format!("{k}:{}", p.name), &p.tensor))
        })
        .collect();
    let mut buf = Vec::new();
    write_container(&mut buf, &serde_json::to_value(&header)?, &tensors)?;
    Ok(buf)
}

fn split_members(
    model_len: usize,
    tensors: Vec<(String, Tensor)>,
) -> Result<Vec<Vec<(String, Tensor)>>> {
    let mut out = vec![Vec::new(); model_len];
    for (name, t) in tensors {
        let (k, rest) = name
            .split_once(':')
            .and_then(|(k, r)| Some((k.parse::<usize>().ok()?, r.to_owned())))
            .ok_or_else(|| Error::SpecMismatch(format!("malformed tensor name {name}")))?;
        out.get_mut(k)
            .ok_or_else(|| Error::SpecMismatch(format!("tensor {name} for missing member {k}")))?
            .push((rest, t));
    }
    Ok(out)
}

fn parse(bytes: &[u8]) -> Result<(CheckpointHeader, Vec<(String, Tensor)>)> {
    let (meta, tensors) = read_container(&mut Cursor::new(bytes))?;
    let header: CheckpointHeader = serde_json::from_value(meta)
        .map_err(|e| Error::parse(0, format!("checkpoint header: {e}")))?;
    if header.kind != CHECKPOINT_KIND {
        return Err(Error::parse(
            0,
            format!("not a checkpoint: kind {}", header.kind),
        ));
    }
    Ok((header, tensors))
}

/// Rebuilds the model from the stored specs and loads its parameters.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Model> {
    let (header, tensors) = parse(bytes)?;
    let mut model = Model::build(header.architecture, &header.specs, 0)?;
    let parts = split_members(model.members.len(), tensors)?;
    for (m, p) in model.members.iter_mut().zip(parts) {
        m.load_params(p)?;
    }
    Ok(model)
}

/// Loads parameters into an existing model whose specs must match the stored ones.
pub fn load_checkpoint_into(model: &mut Model, path: &Path) -> Result<()> {
    let (header, tensors) = parse(&fs::read(path)?)?;
    if header.architecture != model.architecture || header.specs != model.specs() {
        return Err(Error::SpecMismatch(format!(
            "checkpoint holds {} with {} member spec(s) that differ from the target model",
            header.architecture,
            header.specs.len()
        )));
    }
    let parts = split_members(model.members.len(), tensors)?;
    for (m, p) in model.members.iter_mut().zip(parts) {
        m.load_params(p)?;
    }
    Ok(())
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, encode_checkpoint(model)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    if !path.exists() {
        return Err(Error::MissingData(format!(
            "checkpoint {} not found; produce one with `domattn train`",
            path.display()
        )));
    }
    decode_checkpoint(&fs::read(path)?)
}

/// SHA-256 of the encoded checkpoint.
pub fn checkpoint_digest(model: &Model) -> Result<String> {
    Ok(format!("{:x}", Sha256::digest(encode_checkpoint(model)?)))
}
