//! Checkpoints: the model config plus every named parameter as `f64`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::{self, put_f64s};
use crate::error::{Error, Result};
use crate::model::{HvpModel, ModelConfig};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"HVPC";

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    model: ModelConfig,
    dtype: String,
    params: Vec<ParamEntry>,
}

pub fn encode_checkpoint(model: &HvpModel) -> Result<Vec<u8>> {
    let mut params = Vec::with_capacity(model.store.len());
    let mut payload = Vec::with_capacity(model.store.num_scalars() * 8);
    for (_, p) in model.store.iter() {
        params.push(ParamEntry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
        });
        put_f64s(&mut payload, p.value.data());
    }
    let header = CheckpointHeader {
        model: model.config.clone(),
        dtype: "f64".into(),
        params,
    };
    container::encode(CHECKPOINT_MAGIC, &header, &payload)
}

pub fn decode_checkpoint(buf: &[u8]) -> Result<HvpModel> {
    let (header, mut r): (CheckpointHeader, _) = container::decode(buf, CHECKPOINT_MAGIC)?;
    if header.dtype != "f64" {
        return Err(Error::format(8, format!("unsupported checkpoint dtype {:?}", header.dtype)));
    }
    // Initialization is overwritten below; the seed only fixes the layout.
    let mut model = HvpModel::new(header.model, 0)?;
    if header.params.len() != model.store.len() {
        return Err(Error::format(
            r.offset(),
            format!(
                "checkpoint lists {} parameters, the model has {}",
                header.params.len(),
                model.store.len()
            ),
        ));
    }
    for entry in &header.params {
        let at = r.offset();
        let id = model
            .store
            .find(&entry.name)
            .ok_or_else(|| Error::format(at, format!("unknown parameter {:?}", entry.name)))?;
        let p = model.store.get_mut(id);
        if p.value.shape() != entry.shape.as_slice() {
            return Err(Error::format(
                at,
                format!("parameter {:?} has shape {:?}, expected {:?}", entry.name, entry.shape, p.value.shape()),
            ));
        }
        let data = r.f64s(p.value.len(), &entry.name)?;
        p.value.data_mut().copy_from_slice(&data);
    }
    r.finish()?;
    Ok(model)
}

pub fn save_checkpoint(model: &HvpModel, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_checkpoint(model)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<HvpModel> {
    decode_checkpoint(&std::fs::read(path)?)
}
