//! Named parameter storage shared by the networks, plus the checkpoint
//! format: one flat little-endian f64 array in declaration order with a JSON
//! manifest carrying (name, shape, byte offset) triples.

use crate::autodiff::{Graph, TensorId};
use crate::error::{Error, Result};
use crate::scalar::Real;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Clone, Debug)]
pub struct Param<F> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<F>,
}

#[derive(Clone, Debug, Default)]
pub struct ParamSet<F> {
    params: Vec<Param<F>>,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset of this parameter's data in the flat array file.
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    params: Vec<ManifestEntry>,
    total_scalars: u64,
    hash: String,
}

impl<F: Real> ParamSet<F> {
    pub fn new() -> Self {
        ParamSet { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<F>) -> usize {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        self.params.push(Param {
            name: name.into(),
            shape,
            data,
        });
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, i: usize) -> &Param<F> {
        &self.params[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Param<F> {
        &mut self.params[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<F>> {
        self.params.iter()
    }

    pub fn total_scalars(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    /// Insert every parameter into a graph as a differentiable leaf
    /// (or as a constant when `frozen`), in declaration order.
    pub fn bind(&self, g: &mut Graph<F>, frozen: bool) -> Vec<TensorId> {
        self.params
            .iter()
            .map(|p| {
                if frozen {
                    g.constant(p.shape.clone(), p.data.clone())
                } else {
                    g.param(p.shape.clone(), p.data.clone())
                }
            })
            .collect()
    }

    /// Gradients for each bound parameter after a backward pass; missing
    /// gradients come back as None.
    pub fn collect_grads(&self, g: &Graph<F>, ids: &[TensorId]) -> Vec<Option<Vec<F>>> {
        ids.iter().map(|&id| g.grad(id).map(|s| s.to_vec())).collect()
    }

    fn flat_f64(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.total_scalars());
        for p in &self.params {
            flat.extend(p.data.iter().map(|v| v.as_f64()));
        }
        flat
    }

    /// Content hash over the flat little-endian f64 encoding.
    pub fn content_hash(&self) -> String {
        crate::io::hash_f64s(&self.flat_f64())
    }

    /// Write `<base>.bin` and `<base>.json`.
    pub fn save(&self, base: &Path) -> Result<()> {
        let flat = self.flat_f64();
        let mut entries = Vec::new();
        let mut offset = 0u64;
        for p in &self.params {
            entries.push(ManifestEntry {
                name: p.name.clone(),
                shape: p.shape.clone(),
                offset: offset * 8,
            });
            offset += p.data.len() as u64;
        }
        let manifest = Manifest {
            params: entries,
            total_scalars: flat.len() as u64,
            hash: crate::io::hash_f64s(&flat),
        };
        crate::io::write_f64s(&base.with_extension("bin"), &flat)?;
        crate::io::write_json(&base.with_extension("json"), &manifest)?;
        Ok(())
    }

    pub fn load(base: &Path) -> Result<Self> {
        let manifest: Manifest = crate::io::read_json(&base.with_extension("json"))?;
        let flat = crate::io::read_f64s(&base.with_extension("bin"))?;
        if flat.len() as u64 != manifest.total_scalars {
            return Err(Error::Parse {
                path: base.display().to_string(),
                detail: format!(
                    "manifest says {} scalars, file has {}",
                    manifest.total_scalars,
                    flat.len()
                ),
            });
        }
        let got = crate::io::hash_f64s(&flat);
        if got != manifest.hash {
            return Err(Error::HashMismatch {
                kind: "checkpoint",
                expected: manifest.hash,
                got,
            });
        }
        let mut set = ParamSet::new();
        for e in manifest.params {
            let n: usize = e.shape.iter().product();
            let start = (e.offset / 8) as usize;
            let data = flat[start..start + n]
                .iter()
                .map(|&v| F::of_f64(v))
                .collect();
            set.add(e.name, e.shape, data);
        }
        Ok(set)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_roundtrip() {
        let dir = std::env::temp_dir().join("mrfkit-params-test");
        std::fs::create_dir_all(&dir).unwrap();
        let mut set: ParamSet<f64> = ParamSet::new();
        set.add("w1", vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        set.add("b1", vec![2], vec![-0.5, 0.5]);
        let base = dir.join("ck");
        set.save(&base).unwrap();
        let loaded: ParamSet<f64> = ParamSet::load(&base).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded.get(0).name, "w1");
        assert_eq!(loaded.get(0).data, set.get(0).data);
        assert_eq!(loaded.content_hash(), set.content_hash());
    }
}
