//! Model checkpoints in the tensor container format.
//!
//! Parameters are stored as f32 in canonical order. Training runs in f64,
//! so loading yields the f32-rounded model; saving a loaded model
//! reproduces the file byte for byte.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ArchConfig, GuidedVae};
use crate::autodiff::Tensor;
use crate::container::{Container, TensorData};
use crate::error::{Error, Result};
use crate::spiking::LifParams;

pub const CHECKPOINT_KIND: &str = "checkpoint";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointConfig {
    arch: ArchConfig,
    lif: LifParams,
}

impl GuidedVae {
    /// `meta` carries free-form training information.
    pub fn to_container(&self, meta: serde_json::Value) -> Result<Container> {
        let config = CheckpointConfig {
            arch: self.arch().clone(),
            lif: *self.lif(),
        };
        let mut c = Container::new(CHECKPOINT_KIND, serde_json::to_value(config)?, meta);
        for (s, p) in self.specs().iter().zip(self.params()) {
            let data = p.data().iter().map(|&v| v as f32).collect();
            c.push(s.name.clone(), s.shape.clone(), TensorData::F32(data))?;
        }
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<(Self, serde_json::Value)> {
        if c.kind != CHECKPOINT_KIND {
            return Err(Error::Container(format!("expected a checkpoint, found {:?}", c.kind)));
        }
        let cfg: CheckpointConfig = serde_json::from_value(c.config.clone())?;
        let specs = cfg.arch.param_specs();
        if c.entries.len() != specs.len() {
            return Err(Error::Container(format!(
                "checkpoint has {} tensors, architecture needs {}",
                c.entries.len(),
                specs.len()
            )));
        }
        let mut params = Vec::with_capacity(specs.len());
        for s in &specs {
            let e = c
                .get(&s.name)
                .ok_or_else(|| Error::Container(format!("missing tensor {}", s.name)))?;
            if e.shape != s.shape {
                return Err(Error::Container(format!("{}: shape {:?}, expected {:?}", s.name, e.shape, s.shape)));
            }
            let TensorData::F32(v) = &e.data else {
                return Err(Error::Container(format!("{}: expected f32 data", s.name)));
            };
            params.push(Tensor::new(s.shape.clone(), v.iter().map(|&x| x as f64).collect())?);
        }
        Ok((GuidedVae::from_params(cfg.arch, cfg.lif, params)?, c.meta.clone()))
    }

    pub fn save(&self, path: &Path, meta: serde_json::Value) -> Result<()> {
        self.to_container(meta)?.write(path)
    }

    pub fn load(path: &Path) -> Result<(Self, serde_json::Value)> {
        Self::from_container(&Container::read(path)?)
    }
}
