//! Model checkpoints.
//!
//! Layout (little-endian): magic `MODIFCK\0`, u32 version, u64 config length,
//! config JSON, u32 tensor count, then per tensor u32 name length, name bytes,
//! u32 rows, u32 cols and `rows * cols` f64 values in row-major order.

use std::path::Path;

use ndarray::Array2;

use super::model::{Layout, ModelConfig, ModelState};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MODIFCK\0";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn to_bytes(state: &ModelState) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let cfg = serde_json::to_vec(&state.config).expect("config serializes");
    out.extend_from_slice(&(cfg.len() as u64).to_le_bytes());
    out.extend_from_slice(&cfg);
    out.extend_from_slice(&(state.tensors.len() as u32).to_le_bytes());
    for (name, t) in state.layout.names.iter().zip(&state.tensors) {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.nrows() as u32).to_le_bytes());
        out.extend_from_slice(&(t.ncols() as u32).to_le_bytes());
        for v in t.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.pos as u64,
                msg: "truncated checkpoint".into(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<ModelState> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::Format {
            offset: 0,
            msg: "bad checkpoint magic".into(),
        });
    }
    let version = c.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format {
            offset: 8,
            msg: format!("unsupported checkpoint version {version}"),
        });
    }
    let len = c.u64()? as usize;
    let config: ModelConfig = serde_json::from_slice(c.take(len)?)?;
    config.validate()?;
    let layout = Layout::new(&config);
    let count = c.u32()? as usize;
    if count != layout.len() {
        return Err(Error::Config(format!("checkpoint has {count} tensors, config implies {}", layout.len())));
    }
    let mut tensors = Vec::with_capacity(count);
    for i in 0..count {
        let n = c.u32()? as usize;
        let name = String::from_utf8_lossy(c.take(n)?).into_owned();
        let rows = c.u32()? as usize;
        let cols = c.u32()? as usize;
        if name != layout.names[i] || (rows, cols) != layout.shapes[i] {
            return Err(Error::Config(format!(
                "tensor {i} is {name} {rows}x{cols}, expected {} {:?}",
                layout.names[i], layout.shapes[i]
            )));
        }
        let raw = c.take(rows * cols * 8)?;
        let vals = raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
        tensors.push(Array2::from_shape_vec((rows, cols), vals).expect("shape checked"));
    }
    if c.pos != bytes.len() {
        return Err(Error::Format {
            offset: c.pos as u64,
            msg: "trailing bytes".into(),
        });
    }
    Ok(ModelState {
        config,
        layout,
        tensors,
    })
}

pub fn save(state: &ModelState, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(state))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ModelState> {
    from_bytes(&std::fs::read(path)?)
}

/// Loads and checks the stored config against `expected`.
pub fn load_expecting(path: &Path, expected: &ModelConfig) -> Result<ModelState> {
    let state = load(path)?;
    if &state.config != expected {
        return Err(Error::Config(format!(
            "checkpoint config {} does not match expected {}",
            serde_json::to_string(&state.config)?,
            serde_json::to_string(expected)?
        )));
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_every_bit() {
        let state = ModelState::init(&ModelConfig::tiny(2), 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save(&state, &path).unwrap();
        let back = load_expecting(&path, &state.config).unwrap();
        assert_eq!(back.hash(), state.hash());
        assert_eq!(to_bytes(&back), to_bytes(&state));
    }

    #[test]
    fn mismatched_config_is_a_config_error() {
        let state = ModelState::init(&ModelConfig::tiny(2), 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save(&state, &path).unwrap();
        let other = ModelConfig::tiny(3);
        assert!(matches!(load_expecting(&path, &other), Err(Error::Config(_))));
    }

    #[test]
    fn corrupted_header_is_rejected() {
        let state = ModelState::init(&ModelConfig::tiny(1), 5).unwrap();
        let mut bytes = to_bytes(&state);
        bytes[0] = 0;
        assert!(matches!(from_bytes(&bytes), Err(Error::Format { offset: 0, .. })));
        let bytes = to_bytes(&state);
        assert!(from_bytes(&bytes[..bytes.len() - 3]).is_err());
    }
}
