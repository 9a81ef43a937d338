//! Model checkpoints: every parameter tensor as consecutive f64 RTEN records,
//! plus a JSON manifest (same stem, `.json`) naming them in order.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ModelParams;
use crate::dataio::dataset::{ensure_writable, read_json, write_json};
use crate::dataio::rten::{self, DType};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    #[serde(rename = "K")]
    pub phases: usize,
    pub channels: usize,
    /// 1 when the parallel branches share parameters.
    pub branches: usize,
    pub step: u64,
    pub names: Vec<String>,
    pub shapes: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub branches: Vec<ModelParams>,
    pub step: u64,
}

pub fn manifest_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

impl Checkpoint {
    pub fn manifest(&self) -> Result<CheckpointManifest> {
        let first = self
            .branches
            .first()
            .ok_or_else(|| Error::contract("Checkpoint", "no branches"))?;
        let mut names = Vec::new();
        let mut shapes = Vec::new();
        for (b, params) in self.branches.iter().enumerate() {
            if params.num_phases() != first.num_phases() || params.channels != first.channels {
                return Err(Error::contract("Checkpoint", "branches differ in shape"));
            }
            for (name, t) in params.named_tensors() {
                names.push(format!("branch{}.{name}", b + 1));
                shapes.push(t.shape().to_vec());
            }
        }
        Ok(CheckpointManifest {
            phases: first.num_phases(),
            channels: first.channels,
            branches: self.branches.len(),
            step: self.step,
            names,
            shapes,
        })
    }

    pub fn save(&self, path: &Path, force: bool) -> Result<()> {
        let manifest = self.manifest()?;
        ensure_writable(path, force)?;
        let tensors: Vec<Tensor> = self
            .branches
            .iter()
            .flat_map(|p| p.named_tensors().into_iter().map(|(_, t)| t.clone()))
            .collect();
        rten::write_tensors(path, &tensors, DType::F64)?;
        write_json(&manifest_path(path), &manifest, force)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let manifest: CheckpointManifest = read_json(&manifest_path(path))?;
        let tensors = rten::read_tensors(path)?;
        if tensors.len() != manifest.names.len() || manifest.names.len() != manifest.shapes.len() {
            return Err(Error::Format(format!(
                "{}: {} tensors but manifest lists {}",
                path.display(),
                tensors.len(),
                manifest.names.len()
            )));
        }
        let mut it = tensors.into_iter().zip(&manifest.shapes);
        let mut branches = Vec::with_capacity(manifest.branches);
        for _ in 0..manifest.branches {
            // template fixes the order and expected shapes
            let mut params = ModelParams::init(manifest.phases, manifest.channels, 0)?;
            for slot in params.tensors_mut() {
                let (t, shape) = it
                    .next()
                    .ok_or_else(|| Error::Format("checkpoint ended early".into()))?;
                if t.shape() != shape.as_slice() || t.shape() != slot.shape() {
                    return Err(Error::Format(format!(
                        "tensor shape {:?} does not match expected {:?}",
                        t.shape(),
                        slot.shape()
                    )));
                }
                *slot = t;
            }
            branches.push(params);
        }
        if it.next().is_some() {
            return Err(Error::Format("checkpoint has extra tensors".into()));
        }
        Ok(Self {
            branches,
            step: manifest.step,
        })
    }

    /// Branch `index` (0-based); a shared checkpoint serves every index.
    pub fn branch(&self, index: usize) -> Result<&ModelParams> {
        if self.branches.len() == 1 {
            return Ok(&self.branches[0]);
        }
        self.branches
            .get(index)
            .ok_or_else(|| Error::Config(format!("checkpoint has no branch {}", index + 1)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = Checkpoint {
            branches: vec![ModelParams::init(2, 3, 1).unwrap(), ModelParams::init(2, 3, 2).unwrap()],
            step: 17,
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.rten");
        ck.save(&p, false).unwrap();
        let back = Checkpoint::load(&p).unwrap();
        assert_eq!(back, ck);
        let m: CheckpointManifest = read_json(&manifest_path(&p)).unwrap();
        assert_eq!(m.phases, 2);
        assert_eq!(m.names[0], "branch1.phase0.rho");
        assert!(ck.save(&p, false).is_err());
    }

    #[test]
    fn shared_checkpoint_serves_both_branches() {
        let ck = Checkpoint {
            branches: vec![ModelParams::init(1, 2, 1).unwrap()],
            step: 0,
        };
        assert_eq!(ck.branch(1).unwrap(), ck.branch(0).unwrap());
    }
}
