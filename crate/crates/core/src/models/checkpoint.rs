use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Model;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "mnist1d-checkpoint/1";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    format: String,
    model: Model,
}

/// JSON checkpoint echoing the spec alongside named parameters and masks.
/// Floats use shortest round-trip formatting, so reloading is exact.
pub fn save_checkpoint(path: &Path, model: &Model) -> Result<()> {
    if model.params.iter().any(|p| p.value.data().iter().any(|v| !v.is_finite())) {
        return Err(Error::Data("cannot checkpoint non-finite parameters".into()));
    }
    let body = serde_json::to_vec(&Checkpoint {
        format: CHECKPOINT_FORMAT.into(),
        model: model.clone(),
    })?;
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let ck: Checkpoint = serde_json::from_slice(&bytes)?;
    if ck.format != CHECKPOINT_FORMAT {
        return Err(Error::Data(format!("unsupported checkpoint format {:?}", ck.format)));
    }
    ck.model.spec.validate()?;
    let m = ck.model;
    let fresh = super::init_model(&m.spec)?;
    let congruent = fresh.params.len() == m.params.len()
        && fresh.params.iter().zip(&m.params).all(|(a, b)| a.name == b.name && a.value.shape() == b.value.shape());
    if !congruent {
        return Err(Error::Data("checkpoint parameters do not match its spec".into()));
    }
    if let Some(masks) = &m.masks {
        let mut check = m.unmasked();
        check.set_mask(masks.clone())?;
    }
    Ok(m)
}
