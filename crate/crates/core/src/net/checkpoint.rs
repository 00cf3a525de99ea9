//! Checkpoint serialization.
//!
//! Layout: magic `EPTW`, version `u16 = 1`, a length-prefixed flat-text model
//! config, a `u32` buffer count, then per parameter: length-prefixed name,
//! `u8` rank, `u32` extents, and the little-endian `f32` payload. Loading
//! validates every name and extent against the embedded config.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{EpitConfig, EpitWeights, NetError};
use crate::tensor::Tensor;

const MAGIC: [u8; 4] = *b"EPTW";
const VERSION: u16 = 1;

fn fail(path: &Path, msg: impl Into<String>) -> NetError {
    NetError::Checkpoint { path: path.to_path_buf(), msg: msg.into() }
}

pub fn save_checkpoint(
    path: &Path,
    config: &EpitConfig,
    weights: &EpitWeights<Tensor<f32>>,
) -> Result<(), NetError> {
    weights.validate_against(config)?;
    let mut buf = Vec::new();
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let config_text = config.to_text();
    buf.extend_from_slice(&(config_text.len() as u32).to_le_bytes());
    buf.extend_from_slice(config_text.as_bytes());

    let mut entries: Vec<(String, Tensor<f32>)> = Vec::new();
    weights.visit(&mut |name, t| entries.push((name.to_string(), t.clone())));
    buf.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, tensor) in &entries {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(tensor.shape().len() as u8);
        for &dim in tensor.shape() {
            buf.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        for v in tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut file = fs::File::create(path)
        .map_err(|e| NetError::CheckpointIo { path: path.to_path_buf(), source: e })?;
    file.write_all(&buf)
        .map_err(|e| NetError::CheckpointIo { path: path.to_path_buf(), source: e })
}

pub fn load_checkpoint(path: &Path) -> Result<(EpitConfig, EpitWeights<Tensor<f32>>), NetError> {
    let mut file = fs::File::open(path)
        .map_err(|e| NetError::CheckpointIo { path: path.to_path_buf(), source: e })?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)
        .map_err(|e| NetError::CheckpointIo { path: path.to_path_buf(), source: e })?;

    let mut cursor = Cursor { bytes: &bytes, pos: 0, path };
    let magic = cursor.take(4)?;
    if magic != MAGIC {
        return Err(fail(path, "bad magic, not an EPTW checkpoint"));
    }
    let version = u16::from_le_bytes(cursor.take(2)?.try_into().unwrap());
    if version != VERSION {
        return Err(fail(path, format!("unsupported version {version}")));
    }
    let config_len = cursor.take_u32()? as usize;
    let config_text = std::str::from_utf8(cursor.take(config_len)?)
        .map_err(|_| fail(path, "config text is not UTF-8"))?;
    let config = EpitConfig::from_text(config_text)?;

    let mut weights = EpitWeights::zeros(&config)?;
    let mut expected: Vec<(String, Vec<usize>)> = Vec::new();
    weights.visit(&mut |name, t| expected.push((name.to_string(), t.shape().to_vec())));

    let count = cursor.take_u32()? as usize;
    if count != expected.len() {
        return Err(fail(
            path,
            format!("config implies {} parameter buffers, file holds {count}", expected.len()),
        ));
    }

    let mut loaded: std::collections::HashMap<String, Tensor<f32>> = std::collections::HashMap::new();
    for _ in 0..count {
        let name_len = cursor.take_u32()? as usize;
        let name = std::str::from_utf8(cursor.take(name_len)?)
            .map_err(|_| fail(path, "parameter name is not UTF-8"))?
            .to_string();
        let rank = cursor.take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cursor.take_u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let payload = cursor.take(numel * 4)?;
        let data: Vec<f32> = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let tensor = Tensor::new(shape.clone(), data)
            .map_err(|e| fail(path, format!("parameter `{name}`: {e}")))?;
        let slot = expected.iter().find(|(n, _)| *n == name);
        match slot {
            None => return Err(fail(path, format!("unknown parameter `{name}` for this config"))),
            Some((_, expect_shape)) if *expect_shape != shape => {
                return Err(NetError::WeightShape {
                    name,
                    expected: expect_shape.clone(),
                    got: shape,
                })
            }
            Some(_) => {}
        }
        if loaded.insert(name.clone(), tensor).is_some() {
            return Err(fail(path, format!("duplicate parameter `{name}`")));
        }
    }
    if cursor.pos != bytes.len() {
        return Err(fail(path, format!("{} trailing bytes after last parameter", bytes.len() - cursor.pos)));
    }
    for (name, _) in &expected {
        if !loaded.contains_key(name) {
            return Err(fail(path, format!("missing parameter `{name}`")));
        }
    }
    weights.visit_mut(&mut |name, t| {
        *t = loaded.remove(name).expect("presence checked above");
    });
    Ok((config, weights))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NetError> {
        if self.pos + n > self.bytes.len() {
            return Err(fail(self.path, format!("truncated at byte {}", self.pos)));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn take_u32(&mut self) -> Result<u32, NetError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
