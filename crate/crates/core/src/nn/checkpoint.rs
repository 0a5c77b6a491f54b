//! Checkpoint container: a safetensors file whose metadata carries a format
//! version, the network kind and a JSON echo of the configuration.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::safetensors::Load;
use candle_core::{Device, Tensor};
use safetensors::SafeTensors;
use serde::de::DeserializeOwned;
use serde::Serialize;

use super::params::ParamStore;
use crate::error::{Error, Result};

pub const FORMAT: &str = "motionboost-checkpoint";
pub const VERSION: &str = "1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckpointKind {
    Mqpm,
    Refine,
}

impl CheckpointKind {
    fn as_str(self) -> &'static str {
        match self {
            CheckpointKind::Mqpm => "mqpm",
            CheckpointKind::Refine => "refine",
        }
    }
}

pub struct Checkpoint {
    pub kind: CheckpointKind,
    pub config_json: String,
    pub tensors: HashMap<String, Tensor>,
}

impl Checkpoint {
    pub fn config<T: DeserializeOwned>(&self) -> Result<T> {
        Ok(serde_json::from_str(&self.config_json)?)
    }
}

pub fn save<C: Serialize>(
    path: &Path,
    kind: CheckpointKind,
    config: &C,
    params: &ParamStore,
) -> Result<()> {
    let mut meta = HashMap::new();
    meta.insert("format".to_string(), FORMAT.to_string());
    meta.insert("version".to_string(), VERSION.to_string());
    meta.insert("kind".to_string(), kind.as_str().to_string());
    meta.insert("config".to_string(), serde_json::to_string(config)?);
    let tensors: Vec<(String, Tensor)> = params
        .named()
        .map(|(n, v)| (n.to_string(), v.as_tensor().clone()))
        .collect();
    let bytes = safetensors::serialize(tensors.iter().map(|(n, t)| (n.as_str(), t)), Some(meta))
        .map_err(|e| Error::Format(format!("serializing checkpoint: {e}")))?;
    let bytes = canonical_header(bytes)?;
    crate::map::ensure_parent(path)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Rewrites the JSON header with sorted keys. The metadata map is hashed with
/// a random seed, so without this two saves of the same weights differ.
fn canonical_header(bytes: Vec<u8>) -> Result<Vec<u8>> {
    let bad = || Error::Format("serialized checkpoint has a malformed header".into());
    let n = u64::from_le_bytes(bytes.get(..8).ok_or_else(bad)?.try_into().unwrap()) as usize;
    let header = bytes.get(8..8 + n).ok_or_else(bad)?;
    let sorted: BTreeMap<String, BTreeMap<String, serde_json::Value>> =
        serde_json::from_slice(header)?;
    let mut json = serde_json::to_vec(&sorted)?;
    json.resize(json.len().div_ceil(8) * 8, b' ');
    let mut out = Vec::with_capacity(8 + json.len() + bytes.len() - 8 - n);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&bytes[8 + n..]);
    Ok(out)
}

pub fn load(path: &Path, expected: CheckpointKind) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: String| Error::Integration(format!("{}: {msg}", path.display()));
    let (_, header) =
        SafeTensors::read_metadata(&bytes).map_err(|e| bad(format!("not a checkpoint: {e}")))?;
    let meta = header
        .metadata()
        .clone()
        .ok_or_else(|| bad("missing checkpoint metadata".into()))?;
    if meta.get("format").map(String::as_str) != Some(FORMAT) {
        return Err(bad("not a motionboost checkpoint".into()));
    }
    if meta.get("version").map(String::as_str) != Some(VERSION) {
        return Err(bad(format!(
            "unsupported checkpoint version {:?}",
            meta.get("version")
        )));
    }
    let kind = match meta.get("kind").map(String::as_str) {
        Some("mqpm") => CheckpointKind::Mqpm,
        Some("refine") => CheckpointKind::Refine,
        other => return Err(bad(format!("unknown checkpoint kind {other:?}"))),
    };
    if kind != expected {
        return Err(bad(format!(
            "expected a {} checkpoint, found {}",
            expected.as_str(),
            kind.as_str()
        )));
    }
    let config_json = meta
        .get("config")
        .cloned()
        .ok_or_else(|| bad("missing config echo".into()))?;
    let st = SafeTensors::deserialize(&bytes).map_err(|e| bad(e.to_string()))?;
    let mut tensors = HashMap::new();
    for (name, view) in st.tensors() {
        tensors.insert(name, view.load(&Device::Cpu)?);
    }
    Ok(Checkpoint {
        kind,
        config_json,
        tensors,
    })
}
