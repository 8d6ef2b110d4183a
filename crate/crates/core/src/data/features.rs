//! Indexed store of feature vectors with binary and TSV readers.
//!
//! Binary layout (integers and floats little-endian):
//!
//! ```text
//! 8 bytes  magic "NTLFEAT1"
//! u32      dimension d
//! u64      record count
//! per record: u16 id byte length, UTF-8 id, d x f32 values
//! ```

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::FeatureVector;

pub const FEATURE_MAGIC: &[u8; 8] = b"NTLFEAT1";

#[derive(Debug, Clone, Default)]
pub struct FeatureStore {
    dim: usize,
    ids: Vec<String>,
    vectors: Vec<FeatureVector>,
    index: HashMap<String, usize>,
}

impl FeatureStore {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ids: Vec::new(),
            vectors: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn push(&mut self, id: impl Into<String>, vector: FeatureVector) -> Result<usize> {
        if vector.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: vector.dim(),
            });
        }
        let id = id.into();
        let idx = self.vectors.len();
        self.index.insert(id.clone(), idx);
        self.ids.push(id);
        self.vectors.push(vector);
        Ok(idx)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn vectors(&self) -> &[FeatureVector] {
        &self.vectors
    }

    pub fn get(&self, idx: usize) -> &FeatureVector {
        &self.vectors[idx]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn by_id(&self, id: &str) -> Option<&FeatureVector> {
        self.index_of(id).map(|i| &self.vectors[i])
    }

    /// Dispatches on extension: `.tsv` uses the text fallback, anything else
    /// the binary format.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("tsv")) {
            Self::load_tsv(path)
        } else {
            Self::load_binary(path)
        }
    }

    pub fn load_binary(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = CountingReader::new(BufReader::new(File::open(path)?));

        let mut magic = [0u8; 8];
        r.read_exact_at(&mut magic, "magic")?;
        if &magic != FEATURE_MAGIC {
            return Err(Error::FeatureFormat {
                offset: 0,
                message: format!("bad magic {magic:?}, expected {FEATURE_MAGIC:?}"),
            });
        }
        let mut buf4 = [0u8; 4];
        r.read_exact_at(&mut buf4, "dimension")?;
        let dim = u32::from_le_bytes(buf4) as usize;
        let mut buf8 = [0u8; 8];
        r.read_exact_at(&mut buf8, "record count")?;
        let count = u64::from_le_bytes(buf8) as usize;

        let mut store = Self::new(dim);
        let mut float_buf = vec![0u8; dim * 4];
        for _ in 0..count {
            let mut len_buf = [0u8; 2];
            r.read_exact_at(&mut len_buf, "id length")?;
            let id_len = u16::from_le_bytes(len_buf) as usize;
            let mut id_buf = vec![0u8; id_len];
            r.read_exact_at(&mut id_buf, "id")?;
            let id = String::from_utf8(id_buf).map_err(|e| Error::FeatureFormat {
                offset: r.offset,
                message: format!("id is not UTF-8: {e}"),
            })?;
            r.read_exact_at(&mut float_buf, "vector values")?;
            let mut values = Vec::with_capacity(dim);
            for chunk in float_buf.chunks_exact(4) {
                values.push(f32::from_le_bytes(chunk.try_into().unwrap()));
            }
            let vector = FeatureVector::new(values).map_err(|_| Error::FeatureFormat {
                offset: r.offset,
                message: format!("non-finite value in record '{id}'"),
            })?;
            store.push(id, vector)?;
        }
        Ok(store)
    }

    /// Text fallback: one record per line, `id` then `dim` decimal floats,
    /// tab-separated.
    pub fn load_tsv(path: impl AsRef<Path>) -> Result<Self> {
        let content = std::fs::read_to_string(path)?;
        let mut store: Option<FeatureStore> = None;
        for (lineno, line) in content.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split('\t');
            let id = fields.next().unwrap_or_default();
            if id.is_empty() {
                return Err(Error::Parse {
                    line: lineno + 1,
                    message: "missing id".into(),
                });
            }
            let mut values = Vec::new();
            for f in fields {
                let v: f32 = f.parse().map_err(|e| Error::Parse {
                    line: lineno + 1,
                    message: format!("bad float '{f}': {e}"),
                })?;
                values.push(v);
            }
            let vector = FeatureVector::new(values).map_err(|_| Error::Parse {
                line: lineno + 1,
                message: format!("non-finite value in record '{id}'"),
            })?;
            match &mut store {
                None => {
                    let mut s = FeatureStore::new(vector.dim());
                    s.push(id, vector)?;
                    store = Some(s);
                }
                Some(s) => {
                    if vector.dim() != s.dim() {
                        return Err(Error::Parse {
                            line: lineno + 1,
                            message: format!(
                                "record '{id}' has {} values, expected {}",
                                vector.dim(),
                                s.dim()
                            ),
                        });
                    }
                    s.push(id, vector)?;
                }
            }
        }
        Ok(store.unwrap_or_default())
    }

    pub fn save_binary(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(FEATURE_MAGIC)?;
        w.write_all(&u32::try_from(self.dim).map_err(|_| Error::InvalidParameter("dimension exceeds u32".into()))?.to_le_bytes())?;
        w.write_all(&(self.vectors.len() as u64).to_le_bytes())?;
        for (id, vector) in self.ids.iter().zip(&self.vectors) {
            let bytes = id.as_bytes();
            let len = u16::try_from(bytes.len())
                .map_err(|_| Error::InvalidParameter(format!("id '{id}' longer than 65535 bytes")))?;
            w.write_all(&len.to_le_bytes())?;
            w.write_all(bytes)?;
            for v in vector.values() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

struct CountingReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> CountingReader<R> {
    fn new(inner: R) -> Self {
        Self { inner, offset: 0 }
    }

    fn read_exact_at(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        match self.inner.read_exact(buf) {
            Ok(()) => {
                self.offset += buf.len() as u64;
                Ok(())
            }
            Err(e) => Err(Error::FeatureFormat {
                offset: self.offset,
                message: format!("truncated while reading {what}: {e}"),
            }),
        }
    }
}
