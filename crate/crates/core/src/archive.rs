//! Binary container for named float arrays plus a JSON header.
//!
//! Layout (all integers little-endian `u32`):
//!
//! ```text
//! magic "CAMNOISE" | version | json_len | json bytes | array_count |
//!   repeated: name_len | name | ndim | dims[ndim] | f32 payload (LE)
//! ```
//!
//! Checkpoints, optimizer state and extractor weights all use this format.

use std::io::{Read, Write};
use std::path::Path;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

const MAGIC: &[u8; 8] = b"CAMNOISE";
const VERSION: u32 = 1;

#[derive(Clone, Debug, Default)]
pub struct Archive {
    pub meta: serde_json::Value,
    pub arrays: IndexMap<String, Tensor<f32>>,
}

impl Archive {
    pub fn new(meta: serde_json::Value) -> Self {
        Archive { meta, arrays: IndexMap::new() }
    }

    pub fn insert<T: Scalar>(&mut self, name: impl Into<String>, t: &Tensor<T>) {
        self.arrays.insert(name.into(), t.cast());
    }

    pub fn write_to(&self, mut out: impl Write) -> Result<()> {
        let json = serde_json::to_vec(&self.meta)?;
        out.write_all(MAGIC)?;
        out.write_all(&VERSION.to_le_bytes())?;
        out.write_all(&(json.len() as u32).to_le_bytes())?;
        out.write_all(&json)?;
        out.write_all(&(self.arrays.len() as u32).to_le_bytes())?;
        for (name, t) in &self.arrays {
            out.write_all(&(name.len() as u32).to_le_bytes())?;
            out.write_all(name.as_bytes())?;
            out.write_all(&4u32.to_le_bytes())?;
            for d in t.shape().dims() {
                out.write_all(&(d as u32).to_le_bytes())?;
            }
            let mut buf = Vec::with_capacity(t.len() * 4);
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            out.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from(mut input: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a camnoise archive".into()));
        }
        let version = read_u32(&mut input)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported archive version {version}")));
        }
        let json_len = read_u32(&mut input)? as usize;
        let mut json = vec![0u8; json_len];
        input.read_exact(&mut json)?;
        let meta = serde_json::from_slice(&json)?;
        let count = read_u32(&mut input)?;
        let mut arrays = IndexMap::new();
        for _ in 0..count {
            let len = read_u32(&mut input)? as usize;
            let mut name = vec![0u8; len];
            input.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| Error::Format("array name is not UTF-8".into()))?;
            let ndim = read_u32(&mut input)? as usize;
            if ndim == 0 || ndim > 4 {
                return Err(Error::Format(format!("array {name} has {ndim} dimensions")));
            }
            let mut dims = [1usize; 4];
            for d in dims.iter_mut().skip(4 - ndim) {
                *d = read_u32(&mut input)? as usize;
            }
            let shape = Shape::new(dims[0], dims[1], dims[2], dims[3]);
            let mut bytes = vec![0u8; shape.numel() * 4];
            input.read_exact(&mut bytes)?;
            let data = bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
            if arrays.insert(name.clone(), Tensor::from_vec(shape, data)?).is_some() {
                return Err(Error::Format(format!("duplicate array {name}")));
            }
        }
        Ok(Archive { meta, arrays })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Archive::read_from(bytes.as_slice())
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}
