//! Binary checkpoint container: a JSON header followed by raw parameters.
//!
//! Layout: `b"CFCN"`, format version (u32 LE), header length (u64 LE), the
//! header as UTF-8 JSON, then every parameter as little-endian `f32` in
//! module order. The header records each parameter's name and shape so a
//! checkpoint can never be loaded into a different architecture.

use std::io::{Read, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::param::Param;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"CFCN";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Envelope<H> {
    meta: H,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq, Eq)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

pub fn write_checkpoint<W: Write, H: Serialize>(
    mut out: W,
    meta: &H,
    params: &[&Param],
) -> Result<()> {
    let envelope = Envelope {
        meta,
        tensors: params
            .iter()
            .map(|p| TensorEntry {
                name: p.name.clone(),
                shape: p.shape.clone(),
            })
            .collect(),
    };
    let header = serde_json::to_vec(&envelope)?;
    out.write_all(MAGIC)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes())?;
    out.write_all(&(header.len() as u64).to_le_bytes())?;
    out.write_all(&header)?;
    let mut buf = Vec::new();
    for p in params {
        buf.clear();
        buf.reserve(p.value.len() * 4);
        for v in &p.value {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads only the header, e.g. to decide which architecture to build.
pub fn read_meta<R: Read, H: DeserializeOwned>(input: R) -> Result<H> {
    Ok(read_envelope::<R, H>(input)?.0.meta)
}

/// Reads a checkpoint into `params`, which must match the stored names and
/// shapes exactly.
pub fn read_checkpoint<R: Read, H: DeserializeOwned>(
    input: R,
    params: Vec<&mut Param>,
) -> Result<H> {
    let (envelope, mut input) = read_envelope::<R, H>(input)?;
    if envelope.tensors.len() != params.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {} tensors, model has {}",
            envelope.tensors.len(),
            params.len()
        )));
    }
    for (entry, p) in envelope.tensors.iter().zip(&params) {
        if entry.name != p.name || entry.shape != p.shape {
            return Err(Error::Checkpoint(format!(
                "architecture mismatch: checkpoint has {} {:?}, model expects {} {:?}",
                entry.name, entry.shape, p.name, p.shape
            )));
        }
    }
    let mut bytes = Vec::new();
    for p in params {
        bytes.resize(p.value.len() * 4, 0);
        input.read_exact(&mut bytes).map_err(|e| {
            Error::Checkpoint(format!("truncated tensor data for {}: {e}", p.name))
        })?;
        for (v, chunk) in p.value.iter_mut().zip(bytes.chunks_exact(4)) {
            *v = f32::from_le_bytes(chunk.try_into().unwrap());
        }
    }
    Ok(envelope.meta)
}

fn read_envelope<R: Read, H: DeserializeOwned>(mut input: R) -> Result<(Envelope<H>, R)> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let mut word = [0u8; 4];
    input.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint format {version}, expected {FORMAT_VERSION}"
        )));
    }
    let mut len = [0u8; 8];
    input.read_exact(&mut len)?;
    let mut header = vec![0u8; u64::from_le_bytes(len) as usize];
    input.read_exact(&mut header)?;
    let envelope: Envelope<H> = serde_json::from_slice(&header)?;
    Ok((envelope, input))
}
