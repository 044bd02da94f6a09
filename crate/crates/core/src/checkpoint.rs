//! Binary tensor container shared by model checkpoints and mixture files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "RGMP" | u32 version | [u8; 4] tag | u32 meta_len | meta JSON
//! u32 entry count | per entry: u32 name_len, name, u32 rank, u64 dims.., u64 offset, u64 length
//! f64 data
//! ```
//!
//! Offsets and lengths count `f64` values from the start of the data block.

use crate::error::{Error, Result};
use crate::gmm::{GmmParams, Mat6, Vec6, DIM};
use crate::model::{ModelConfig, PolicyModel};
use crate::numerics::{DenseTensor, ParameterSet};
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"RGMP";
pub const VERSION: u32 = 1;
pub const MODEL_TAG: &[u8; 4] = b"ARGN";
pub const GMM_TAG: &[u8; 4] = b"GMM0";

/// A tagged set of named tensors with JSON metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub tag: [u8; 4],
    pub meta: serde_json::Value,
    pub entries: Vec<(String, DenseTensor)>,
}

impl Container {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.tag);
        let meta = serde_json::to_vec(&self.meta)?;
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        let mut offset = 0u64;
        for (name, t) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.extend_from_slice(&offset.to_le_bytes());
            out.extend_from_slice(&(t.len() as u64).to_le_bytes());
            offset += t.len() as u64;
        }
        for (_, t) in &self.entries {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("not an RGMP container (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!(
                "unsupported container version {version}"
            )));
        }
        let tag: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
        let meta_len = r.u32()? as usize;
        let meta = serde_json::from_slice(r.take(meta_len)?)?;
        let count = r.u32()? as usize;
        let mut index = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::Format("entry name is not UTF-8".into()))?;
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let offset = r.u64()? as usize;
            let len = r.u64()? as usize;
            if shape.iter().product::<usize>() != len {
                return Err(Error::Format(format!(
                    "entry {name}: shape {shape:?} does not hold {len} values"
                )));
            }
            index.push((name, shape, offset, len));
        }
        let data = &bytes[r.pos..];
        let mut entries = Vec::with_capacity(index.len());
        for (name, shape, offset, len) in index {
            let end = offset
                .checked_add(len)
                .and_then(|e| e.checked_mul(8))
                .filter(|&e| e <= data.len())
                .ok_or_else(|| {
                    Error::Format(format!("entry {name} runs past the end of the file"))
                })?;
            let values = data[offset * 8..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            entries.push((name, DenseTensor::new(&shape, values)?));
        }
        Ok(Self { tag, meta, entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    fn expect_tag(&self, tag: &[u8; 4]) -> Result<()> {
        if &self.tag != tag {
            return Err(Error::Format(format!(
                "expected a {} file, found tag {}",
                String::from_utf8_lossy(tag),
                String::from_utf8_lossy(&self.tag)
            )));
        }
        Ok(())
    }

    fn get(&self, name: &str) -> Result<&DenseTensor> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Format(format!("missing entry {name}")))
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("truncated container".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}

pub fn model_to_container(model: &PolicyModel) -> Result<Container> {
    let mut entries = Vec::new();
    model.visit(&mut |p| entries.push((p.name.clone(), p.value.clone())));
    Ok(Container {
        tag: *MODEL_TAG,
        meta: serde_json::to_value(&model.config)?,
        entries,
    })
}

pub fn model_from_container(c: &Container) -> Result<PolicyModel> {
    c.expect_tag(MODEL_TAG)?;
    let config: ModelConfig = serde_json::from_value(c.meta.clone())?;
    let mut model = PolicyModel::zeros(config)?;
    let mut err = None;
    let mut used = 0usize;
    model.visit_mut(&mut |p| {
        if err.is_some() {
            return;
        }
        match c.get(&p.name) {
            Ok(t) if t.shape() == p.value.shape() => {
                p.value = t.clone();
                used += 1;
            }
            Ok(t) => {
                err = Some(Error::Format(format!(
                    "parameter {} has shape {:?} in the file, expected {:?}",
                    p.name,
                    t.shape(),
                    p.value.shape()
                )))
            }
            Err(e) => err = Some(e),
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    if used != c.entries.len() {
        return Err(Error::Format(format!(
            "checkpoint has {} entries, the model uses {used}",
            c.entries.len()
        )));
    }
    Ok(model)
}

pub fn save_model(model: &PolicyModel, path: impl AsRef<Path>) -> Result<()> {
    model_to_container(model)?.save(path)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<PolicyModel> {
    model_from_container(&Container::load(path)?)
}

pub fn gmm_to_container(theta: &GmmParams) -> Result<Container> {
    theta.validate()?;
    let k = theta.k();
    let means = theta.means.iter().flatten().copied().collect();
    let covs = theta
        .covariances
        .iter()
        .flatten()
        .flatten()
        .copied()
        .collect();
    Ok(Container {
        tag: *GMM_TAG,
        meta: serde_json::json!({ "k": k, "dim": DIM }),
        entries: vec![
            (
                "priors".into(),
                DenseTensor::new(&[k], theta.priors.clone())?,
            ),
            ("means".into(), DenseTensor::new(&[k, DIM], means)?),
            (
                "covariances".into(),
                DenseTensor::new(&[k, DIM, DIM], covs)?,
            ),
        ],
    })
}

pub fn gmm_from_container(c: &Container) -> Result<GmmParams> {
    c.expect_tag(GMM_TAG)?;
    let priors = c.get("priors")?;
    let k = priors.len();
    let means = c.get("means")?;
    let covs = c.get("covariances")?;
    if means.shape() != [k, DIM] || covs.shape() != [k, DIM, DIM] {
        return Err(Error::Format(format!(
            "mixture entries have shapes {:?} and {:?} for K = {k}",
            means.shape(),
            covs.shape()
        )));
    }
    let theta = GmmParams {
        priors: priors.data().to_vec(),
        means: means
            .data()
            .chunks_exact(DIM)
            .map(|c| -> Vec6 { c.try_into().expect("DIM values") })
            .collect(),
        covariances: covs
            .data()
            .chunks_exact(DIM * DIM)
            .map(|c| -> Mat6 { std::array::from_fn(|i| std::array::from_fn(|j| c[i * DIM + j])) })
            .collect(),
    };
    theta.validate()?;
    Ok(theta)
}

pub fn save_gmm(theta: &GmmParams, path: impl AsRef<Path>) -> Result<()> {
    gmm_to_container(theta)?.save(path)
}

pub fn load_gmm(path: impl AsRef<Path>) -> Result<GmmParams> {
    gmm_from_container(&Container::load(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn container_round_trip() {
        let c = Container {
            tag: *b"TEST",
            meta: serde_json::json!({"a": 1}),
            entries: vec![
                (
                    "x".into(),
                    DenseTensor::new(&[2, 2], vec![1.0, -0.0, f64::MIN_POSITIVE, 3.5]).unwrap(),
                ),
                ("y".into(), DenseTensor::new(&[0], vec![]).unwrap()),
            ],
        };
        let back = Container::from_bytes(&c.to_bytes().unwrap()).unwrap();
        assert_eq!(back.tag, c.tag);
        assert_eq!(back.meta, c.meta);
        for ((n1, t1), (n2, t2)) in back.entries.iter().zip(&c.entries) {
            assert_eq!(n1, n2);
            assert_eq!(t1.shape(), t2.shape());
            assert!(t1
                .data()
                .iter()
                .zip(t2.data())
                .all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn truncated_and_foreign_files_rejected() {
        let c = Container {
            tag: *GMM_TAG,
            meta: serde_json::json!({}),
            entries: vec![],
        };
        let bytes = c.to_bytes().unwrap();
        assert!(Container::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(Container::from_bytes(b"NOPE").is_err());
        assert!(model_from_container(&c).is_err());
    }
}
