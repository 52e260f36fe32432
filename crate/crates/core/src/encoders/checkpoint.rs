//! Versioned JSON checkpoints. Floats are written in shortest round-trip
//! form and parsed exactly, so save → load → save is byte-identical.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{HptError, Result};

pub const CHECKPOINT_FORMAT: &str = "hpt-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    format: String,
    version: u32,
    payload: T,
}

pub fn to_checkpoint_string<T: Serialize>(payload: &T) -> Result<String> {
    let env = Envelope {
        format: CHECKPOINT_FORMAT.to_string(),
        version: CHECKPOINT_VERSION,
        payload,
    };
    Ok(serde_json::to_string(&env)?)
}

pub fn from_checkpoint_str<T: DeserializeOwned>(text: &str) -> Result<T> {
    let env: Envelope<T> = serde_json::from_str(text)?;
    if env.format != CHECKPOINT_FORMAT {
        return Err(HptError::Config(format!(
            "not a checkpoint: format {:?}",
            env.format
        )));
    }
    if env.version != CHECKPOINT_VERSION {
        return Err(HptError::Config(format!(
            "unsupported checkpoint version {}",
            env.version
        )));
    }
    Ok(env.payload)
}

pub fn save_checkpoint<T: Serialize>(path: &Path, payload: &T) -> Result<()> {
    fs::write(path, to_checkpoint_string(payload)?)?;
    Ok(())
}

pub fn load_checkpoint<T: DeserializeOwned>(path: &Path) -> Result<T> {
    from_checkpoint_str(&fs::read_to_string(path)?)
}
