//! Trainable parameters and their on-disk format.
//!
//! Weights are saved as two files: `<stem>.json` lists every tensor's name,
//! group and shape in order, and `<stem>.bin` holds all values back to back as
//! little-endian `f64`.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::NetError;

/// Learning-rate group a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Cell,
    Tissue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub group: Group,
    pub tensor: Tensor,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    group: Group,
    shape: Vec<usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, group: Group, tensor: Tensor) -> usize {
        self.entries.push(ParamEntry {
            name: name.into(),
            group,
            tensor,
        });
        self.entries.len() - 1
    }

    /// A conv kernel `[out, in, k, k]` with He-uniform init and a zero bias.
    pub fn add_conv(
        &mut self,
        name: &str,
        group: Group,
        cin: usize,
        cout: usize,
        k: usize,
        rng: &mut impl Rng,
    ) -> (usize, usize) {
        let bound = (6.0 / (cin * k * k) as f64).sqrt();
        let mut w = Tensor::zeros(&[cout, cin, k, k]);
        for v in &mut w.data {
            *v = rng.random_range(-bound..bound);
        }
        let wi = self.add(format!("{name}.weight"), group, w);
        let bi = self.add(format!("{name}.bias"), group, Tensor::zeros(&[cout]));
        (wi, bi)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn get(&self, id: usize) -> &Tensor {
        &self.entries[id].tensor
    }

    pub fn get_mut(&mut self, id: usize) -> &mut Tensor {
        &mut self.entries[id].tensor
    }

    pub fn group(&self, id: usize) -> Group {
        self.entries[id].group
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|e| e.tensor.data.iter().all(|v| v.is_finite()))
    }

    pub fn save(&self, stem: &Path) -> Result<(), NetError> {
        let manifest: Vec<ManifestEntry> = self
            .entries
            .iter()
            .map(|e| ManifestEntry {
                name: e.name.clone(),
                group: e.group,
                shape: e.tensor.shape.clone(),
            })
            .collect();
        fs::write(stem.with_extension("json"), serde_json::to_vec_pretty(&manifest)?)?;
        let mut bytes = Vec::with_capacity(self.num_scalars() * 8);
        for e in &self.entries {
            for v in &e.tensor.data {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        fs::write(stem.with_extension("bin"), bytes)?;
        Ok(())
    }

    pub fn load(stem: &Path) -> Result<Self, NetError> {
        let manifest: Vec<ManifestEntry> =
            serde_json::from_slice(&fs::read(stem.with_extension("json"))?)?;
        let bytes = fs::read(stem.with_extension("bin"))?;
        let expected: usize = manifest.iter().map(|m| m.shape.iter().product::<usize>()).sum();
        if bytes.len() != expected * 8 {
            return Err(NetError::Config(format!(
                "weights file holds {} bytes, manifest needs {}",
                bytes.len(),
                expected * 8
            )));
        }
        let mut vals = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let mut out = Self::new();
        for m in manifest {
            let n = m.shape.iter().product();
            let data: Vec<f64> = vals.by_ref().take(n).collect();
            out.add(m.name, m.group, Tensor { shape: m.shape, data });
        }
        Ok(out)
    }

    /// Copies values from `other`, which must have identical names and shapes.
    pub fn copy_from(&mut self, other: &ParamStore) -> Result<(), NetError> {
        if self.entries.len() != other.entries.len() {
            return Err(NetError::Config(format!(
                "parameter count {} vs {}",
                other.entries.len(),
                self.entries.len()
            )));
        }
        for (a, b) in self.entries.iter_mut().zip(&other.entries) {
            if a.name != b.name || a.tensor.shape != b.tensor.shape {
                return Err(NetError::Config(format!(
                    "parameter {} {:?} does not match {} {:?}",
                    b.name, b.tensor.shape, a.name, a.tensor.shape
                )));
            }
            a.tensor.data.clone_from(&b.tensor.data);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn save_load_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = ParamStore::new();
        p.add_conv("a", Group::Cell, 3, 4, 3, &mut rng);
        p.add_conv("b", Group::Tissue, 4, 2, 1, &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("w");
        p.save(&stem).unwrap();
        assert_eq!(ParamStore::load(&stem).unwrap(), p);
    }
}
