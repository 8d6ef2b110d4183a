//! Trained model bundles and their on-disk format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! u32  format version (currently 1)
//! u32  feature dimension d
//! u64  tag count T
//! T x  vocabulary entry: u16 byte length, then UTF-8 tag bytes
//! T x  tag record: d x f64 weights, f64 bias, f64 pi, f64 gamma, f64 beta
//! ```
//!
//! Tag records appear in vocabulary order.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TagModel;

pub const BUNDLE_FORMAT_VERSION: u32 = 1;

/// One trained model per vocabulary tag, all sharing a feature dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub dim: usize,
    pub models: Vec<TagModel>,
}

impl ModelBundle {
    pub fn new(dim: usize, models: Vec<TagModel>) -> Result<Self> {
        for m in &models {
            if m.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: m.dim(),
                });
            }
        }
        Ok(Self { dim, models })
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn vocab(&self) -> impl Iterator<Item = &str> {
        self.models.iter().map(|m| m.tag.as_str())
    }

    pub fn tag_index(&self) -> HashMap<&str, usize> {
        self.models
            .iter()
            .enumerate()
            .map(|(i, m)| (m.tag.as_str(), i))
            .collect()
    }

    pub fn get(&self, tag: &str) -> Option<&TagModel> {
        self.models.iter().find(|m| m.tag == tag)
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(&BUNDLE_FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&u32::try_from(self.dim).map_err(|_| bad("dimension exceeds u32"))?.to_le_bytes())?;
        w.write_all(&(self.models.len() as u64).to_le_bytes())?;
        for m in &self.models {
            let bytes = m.tag.as_bytes();
            let len = u16::try_from(bytes.len()).map_err(|_| bad("tag longer than 65535 bytes"))?;
            w.write_all(&len.to_le_bytes())?;
            w.write_all(bytes)?;
        }
        for m in &self.models {
            for v in &m.weights {
                w.write_all(&v.to_le_bytes())?;
            }
            w.write_all(&m.bias.to_le_bytes())?;
            w.write_all(&m.pi.to_le_bytes())?;
            w.write_all(&m.gamma.to_le_bytes())?;
            w.write_all(&m.beta.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let version = read_u32(&mut r)?;
        if version != BUNDLE_FORMAT_VERSION {
            return Err(bad(format!("unsupported format version {version}")));
        }
        let dim = read_u32(&mut r)? as usize;
        let count = read_u64(&mut r)? as usize;
        let mut tags = Vec::with_capacity(count);
        for _ in 0..count {
            let len = read_u16(&mut r)? as usize;
            let mut buf = vec![0u8; len];
            r.read_exact(&mut buf)?;
            let tag = String::from_utf8(buf).map_err(|e| bad(format!("invalid UTF-8 tag: {e}")))?;
            tags.push(tag);
        }
        let mut models = Vec::with_capacity(count);
        for tag in tags {
            let mut weights = Vec::with_capacity(dim);
            for _ in 0..dim {
                weights.push(read_f64(&mut r)?);
            }
            let bias = read_f64(&mut r)?;
            let pi = read_f64(&mut r)?;
            let gamma = read_f64(&mut r)?;
            let beta = read_f64(&mut r)?;
            models.push(TagModel {
                tag,
                weights,
                bias,
                pi,
                gamma,
                beta,
            });
        }
        Ok(Self { dim, models })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

fn bad(message: impl Into<String>) -> Error {
    Error::BundleFormat(message.into())
}

fn read_u16(r: &mut impl Read) -> Result<u16> {
    let mut buf = [0u8; 2];
    r.read_exact(&mut buf)?;
    Ok(u16::from_le_bytes(buf))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}
