//! Checkpoint directories: `manifest.json` plus a little-endian `f32`
//! payload `params.bin` in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::params::ModelParams;
use crate::scale::RationalScale;
use crate::tensor::{Shape, Tensor};
use crate::trainer::{AdamState, TrainConfig, TrainState};
use crate::wrrd::{Model, ModelConfig};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PAYLOAD_FILE: &str = "params.bin";
const FORMAT: &str = "rawscale-checkpoint-1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryRole {
    Param,
    AdamM,
    AdamV,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub role: EntryRole,
    pub shape: [usize; 3],
    /// Byte offset into the payload.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub iteration: usize,
    /// FNV-1a over the canonical JSON of `(model, scales)`.
    pub config_hash: String,
    pub model: ModelConfig,
    pub scales: Vec<RationalScale>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub adam_step: Option<u64>,
    pub entries: Vec<ManifestEntry>,
    pub payload_bytes: usize,
}

/// Hash identifying an architecture; stored in every manifest.
pub fn config_hash(model: &ModelConfig, scales: &[RationalScale]) -> String {
    let json = serde_json::to_string(&(model, scales)).expect("config serializes");
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in json.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    format!("{h:016x}")
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub scales: Vec<RationalScale>,
    pub train: Option<TrainConfig>,
    pub iteration: usize,
    pub params: ModelParams<f32>,
    pub adam: Option<AdamState<f32>>,
}

impl Checkpoint {
    pub fn from_state(model: &Model, train: Option<TrainConfig>, state: &TrainState) -> Self {
        Checkpoint {
            model: model.config().clone(),
            scales: model.scales().to_vec(),
            train,
            iteration: state.iteration,
            params: state.params.clone(),
            adam: Some(state.adam.clone()),
        }
    }

    pub fn build_model(&self) -> Result<Model> {
        let model = Model::new(self.model.clone(), &self.scales)?;
        model.layout().check(&self.params)?;
        Ok(model)
    }

    /// Training state; fresh moments when none were stored.
    pub fn into_state(self) -> TrainState {
        let adam = self.adam.unwrap_or_else(|| AdamState::new(&self.params));
        TrainState { iteration: self.iteration, params: self.params, adam }
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut entries = Vec::new();
        let mut payload: Vec<u8> = Vec::with_capacity(4 * self.params.num_elements() * 3);
        let mut push = |name: &str, role: EntryRole, t: &Tensor<f32>, payload: &mut Vec<u8>| {
            entries.push(ManifestEntry {
                name: name.to_string(),
                role,
                shape: t.shape().as_array(),
                offset: payload.len(),
            });
            for v in t.data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        };
        for (name, t) in self.params.iter() {
            push(name, EntryRole::Param, t, &mut payload);
        }
        if let Some(adam) = &self.adam {
            for (name, t) in self.params.names().iter().zip(&adam.m) {
                push(name, EntryRole::AdamM, t, &mut payload);
            }
            for (name, t) in self.params.names().iter().zip(&adam.v) {
                push(name, EntryRole::AdamV, t, &mut payload);
            }
        }
        let manifest = Manifest {
            format: FORMAT.into(),
            iteration: self.iteration,
            config_hash: config_hash(&self.model, &self.scales),
            model: self.model.clone(),
            scales: self.scales.clone(),
            train: self.train.clone(),
            adam_step: self.adam.as_ref().map(|a| a.step),
            entries,
            payload_bytes: payload.len(),
        };
        fs::write(dir.join(PAYLOAD_FILE), &payload)?;
        fs::write(dir.join(MANIFEST_FILE), serde_json::to_vec_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?)
            .map_err(|e| Error::format(format!("checkpoint manifest: {e}")))?;
        let payload = fs::read(dir.join(PAYLOAD_FILE))?;
        if manifest.format != FORMAT {
            return Err(Error::format(format!("unknown checkpoint format {:?}", manifest.format)));
        }
        if manifest.config_hash != config_hash(&manifest.model, &manifest.scales) {
            return Err(Error::format("checkpoint config hash does not match its manifest".to_string()));
        }
        if payload.len() != manifest.payload_bytes {
            return Err(Error::format(format!(
                "checkpoint payload has {} bytes, manifest says {}",
                payload.len(),
                manifest.payload_bytes
            )));
        }
        let read = |e: &ManifestEntry| -> Result<Tensor<f32>> {
            let shape = Shape::new(e.shape[0], e.shape[1], e.shape[2]);
            let end = e.offset + 4 * shape.len();
            if end > payload.len() {
                return Err(Error::format(format!("entry {} overruns the payload", e.name)));
            }
            let data =
                payload[e.offset..end].chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
            Tensor::new(shape, data)
        };
        let mut names = Vec::new();
        let (mut params, mut m, mut v) = (Vec::new(), Vec::new(), Vec::new());
        for e in &manifest.entries {
            let t = read(e)?;
            match e.role {
                EntryRole::Param => {
                    names.push(e.name.clone());
                    params.push(t);
                }
                EntryRole::AdamM => m.push(t),
                EntryRole::AdamV => v.push(t),
            }
        }
        let params = ModelParams::from_parts(names, params)?;
        let adam = match manifest.adam_step {
            Some(step) => {
                ensure!(
                    m.len() == params.len() && v.len() == params.len(),
                    "checkpoint has {} params but {}/{} moment tensors",
                    params.len(),
                    m.len(),
                    v.len()
                );
                Some(AdamState { step, m, v })
            }
            None => None,
        };
        let ckpt = Checkpoint {
            model: manifest.model,
            scales: manifest.scales,
            train: manifest.train,
            iteration: manifest.iteration,
            params,
            adam,
        };
        ckpt.build_model()?;
        Ok(ckpt)
    }
}
