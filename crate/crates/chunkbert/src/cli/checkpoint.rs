//! Binary checkpoint container.
//!
//! Layout: the 5-byte magic `CBKT1`, a little-endian u32 byte length, that
//! many bytes of UTF-8 JSON header, a little-endian u32 tensor count, then
//! each tensor as rank (u32), dims (u32 each), and row-major f32 values,
//! all little-endian. Tensors appear in [`Model::all_parameters`] order, so
//! a model rebuilt from the header can load them positionally. Values are
//! written verbatim from memory, which makes save followed by load
//! bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::aggregation::TextCnnConfig;
use crate::chunking::ChunkMode;
use crate::encoder::EncoderConfig;
use crate::numerics::Parameter;
use crate::trainer::{Model, ModelKind, TaskKind};

use super::CliError;

pub const MAGIC: &[u8; 5] = b"CBKT1";
pub const FORMAT_VERSION: u32 = 1;

/// Everything needed to rebuild the model's shape before loading values.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub model: ModelKind,
    pub task: TaskKind,
    pub encoder: EncoderConfig,
    pub head: TextCnnConfig,
    pub chunk_size: usize,
    pub mode: ChunkMode,
    pub max_tokens: usize,
    /// Seed the model was initialized with; rebuilds reuse it so derived
    /// seeds (such as the random-selection baseline's) match exactly.
    pub seed: u64,
    /// FNV-1a hash of the vocabulary file the model was trained with.
    pub vocab_hash: u64,
}

fn io_err(path: &Path, source: std::io::Error) -> CliError {
    CliError::Io { path: path.display().to_string(), source }
}

pub fn save_checkpoint(
    path: &Path,
    header: &CheckpointHeader,
    params: &[&Parameter<f32>],
) -> Result<(), CliError> {
    let header_json = serde_json::to_vec(header)?;
    let mut buf = Vec::with_capacity(header_json.len() + 64);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header_json);
    buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params {
        buf.extend_from_slice(&(p.shape().len() as u32).to_le_bytes());
        for &dim in p.shape() {
            buf.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        for value in p.values() {
            buf.extend_from_slice(&value.to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| io_err(path, e))
}

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CliError> {
        if self.at + n > self.bytes.len() {
            return Err(CliError::Truncated { path: self.path.display().to_string() });
        }
        let slice = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32, CliError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32, CliError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn load_checkpoint(
    path: &Path,
) -> Result<(CheckpointHeader, Vec<(Vec<usize>, Vec<f32>)>), CliError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let mut r = Reader { path, bytes: &bytes, at: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(CliError::BadMagic { path: path.display().to_string() });
    }
    let header_len = r.u32()? as usize;
    let header: CheckpointHeader = serde_json::from_slice(r.take(header_len)?)?;
    if header.format_version != FORMAT_VERSION {
        return Err(CliError::BadVersion {
            path: path.display().to_string(),
            found: header.format_version,
            supported: FORMAT_VERSION,
        });
    }
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut values = Vec::with_capacity(numel);
        for _ in 0..numel {
            values.push(r.f32()?);
        }
        tensors.push((shape, values));
    }
    if r.at != bytes.len() {
        return Err(CliError::Truncated { path: path.display().to_string() });
    }
    Ok((header, tensors))
}

/// Rebuilds the model described by `header` and loads the saved values
/// into it, verifying every tensor's shape.
pub fn model_from_checkpoint(
    header: &CheckpointHeader,
    tensors: &[(Vec<usize>, Vec<f32>)],
) -> Result<Model<f32>, CliError> {
    let model = Model::init(
        header.model,
        header.encoder.clone(),
        header.head.clone(),
        header.chunk_size,
        header.mode,
        header.seed,
    )?;
    let params = model.all_parameters();
    if params.len() != tensors.len() {
        return Err(CliError::TensorCount { expected: params.len(), found: tensors.len() });
    }
    for (p, (shape, values)) in params.iter().zip(tensors) {
        if p.shape() != shape.as_slice() {
            return Err(CliError::TensorShape {
                name: p.name().to_string(),
                expected: p.shape().to_vec(),
                found: shape.clone(),
            });
        }
        p.load_values(values);
    }
    Ok(model)
}
