//! Binary checkpoint persistence.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! magic "CPSR" | u32 version | u64 meta_len | meta (JSON)
//! per parameter, canonical name order:
//!   u16 name_len | name | u8 rank | u64 × rank dims | f32 × count values
//! u64 payload_len   (all bytes after the version field, before this trailer)
//! ```
//!
//! The metadata block carries the model config, vocabulary word list, rng
//! seed, and epoch counter, so a checkpoint alone is enough to rebuild the
//! model and keep training or predicting. Section names, ranks, and dims
//! are fully determined by the config, so every structural byte is
//! validated on load; the trailer catches truncation and length drift.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::data::Vocabulary;
use crate::error::{Error, Result};
use crate::model::{expected_shapes, ModelConfig, ModelParams};
use crate::tensor::Tensor;

const MAGIC: [u8; 4] = *b"CPSR";
const VERSION: u32 = 1;

/// Everything needed to resume or serve a training run.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub params: ModelParams<f32>,
    pub seed: u64,
    pub epoch: u64,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    config: ModelConfig,
    words: Vec<String>,
    seed: u64,
    epoch: u64,
}

/// Serializes a checkpoint. The embedding table must have one row per
/// vocabulary entry, or the file could never be loaded back.
pub fn save_checkpoint<W: Write>(checkpoint: &Checkpoint, mut sink: W) -> Result<()> {
    checkpoint.config.validate()?;
    let embed_rows = checkpoint.params.embed.shape()[0];
    if embed_rows != checkpoint.vocab.len() {
        return Err(Error::Contract(format!(
            "embedding table has {embed_rows} rows but the vocabulary has {} entries",
            checkpoint.vocab.len()
        )));
    }

    let meta = serde_json::to_vec(&Meta {
        config: checkpoint.config.clone(),
        words: checkpoint.vocab.non_reserved().to_vec(),
        seed: checkpoint.seed,
        epoch: checkpoint.epoch,
    })?;

    sink.write_all(&MAGIC)?;
    sink.write_all(&VERSION.to_le_bytes())?;
    sink.write_all(&(meta.len() as u64).to_le_bytes())?;
    sink.write_all(&meta)?;
    let mut payload = 8 + meta.len() as u64;

    for (name, tensor) in checkpoint.params.entries() {
        let name = name.as_bytes();
        sink.write_all(&(name.len() as u16).to_le_bytes())?;
        sink.write_all(name)?;
        sink.write_all(&[tensor.shape().len() as u8])?;
        for &dim in tensor.shape() {
            sink.write_all(&(dim as u64).to_le_bytes())?;
        }
        for &v in tensor.data() {
            sink.write_all(&v.to_le_bytes())?;
        }
        payload += 2 + name.len() as u64 + 1 + 8 * tensor.shape().len() as u64
            + 4 * tensor.data().len() as u64;
    }

    sink.write_all(&payload.to_le_bytes())?;
    Ok(())
}

/// Reads exactly `buf.len()` bytes; a short read is a truncation, which is
/// an integrity problem rather than an I/O one.
fn read_exact(source: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    source.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Integrity(format!("checkpoint truncated while reading {what}"))
        } else {
            Error::Io(e)
        }
    })
}

fn read_u16(source: &mut impl Read, what: &str) -> Result<u16> {
    let mut b = [0u8; 2];
    read_exact(source, &mut b, what)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32(source: &mut impl Read, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(source, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(source: &mut impl Read, what: &str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(source, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}

/// Deserializes and fully validates a checkpoint: magic and version,
/// metadata, every section's name/rank/dims against the config, value
/// finiteness, the payload-length trailer, and absence of trailing bytes.
pub fn load_checkpoint<R: Read>(mut source: R) -> Result<Checkpoint> {
    let mut magic = [0u8; 4];
    read_exact(&mut source, &mut magic, "magic bytes")?;
    if magic != MAGIC {
        return Err(Error::Format(format!(
            "not a checkpoint file: expected magic {MAGIC:?}, found {magic:?}"
        )));
    }
    let version = read_u32(&mut source, "format version")?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint format version {version} (this build reads {VERSION})"
        )));
    }

    let meta_len = read_u64(&mut source, "metadata length")?;
    if meta_len > 1 << 32 {
        return Err(Error::Integrity(format!(
            "implausible metadata length {meta_len}"
        )));
    }
    let mut meta_bytes = vec![0u8; meta_len as usize];
    read_exact(&mut source, &mut meta_bytes, "metadata block")?;
    let meta: Meta = serde_json::from_slice(&meta_bytes)
        .map_err(|e| Error::Format(format!("checkpoint metadata is not valid JSON: {e}")))?;
    meta.config.validate()?;
    let vocab = Vocabulary::from_words(&meta.words);
    let mut payload = 8 + meta_len;

    let expected = expected_shapes(&meta.config, vocab.len());
    let mut entries = Vec::with_capacity(expected.len());
    for (want_name, want_shape) in &expected {
        let name_len = read_u16(&mut source, "section name length")? as usize;
        let mut name_bytes = vec![0u8; name_len];
        read_exact(&mut source, &mut name_bytes, "section name")?;
        if name_bytes != want_name.as_bytes() {
            return Err(Error::Integrity(format!(
                "expected parameter section {want_name:?}, found {:?}",
                String::from_utf8_lossy(&name_bytes)
            )));
        }
        let rank = {
            let mut b = [0u8; 1];
            read_exact(&mut source, &mut b, "section rank")?;
            b[0] as usize
        };
        if rank != want_shape.len() {
            return Err(Error::Integrity(format!(
                "parameter {want_name:?} has rank {rank}, expected {}",
                want_shape.len()
            )));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(&mut source, "section dimension")? as usize);
        }
        if shape != *want_shape {
            return Err(Error::Integrity(format!(
                "parameter {want_name:?} has dims {shape:?}, expected {want_shape:?}"
            )));
        }

        let count: usize = shape.iter().product();
        let mut raw = vec![0u8; 4 * count];
        read_exact(&mut source, &mut raw, "section values")?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Integrity(format!(
                "non-finite value at index {i} of parameter {want_name:?}"
            )));
        }
        entries.push((want_name.to_string(), Tensor::new(shape, data)?));
        payload += 2 + name_len as u64 + 1 + 8 * rank as u64 + 4 * count as u64;
    }

    let trailer = read_u64(&mut source, "payload-length trailer")?;
    if trailer != payload {
        return Err(Error::Integrity(format!(
            "payload length mismatch: trailer says {trailer} bytes, read {payload}"
        )));
    }
    let mut probe = [0u8; 1];
    if source.read(&mut probe)? != 0 {
        return Err(Error::Integrity(
            "unexpected bytes after the checkpoint trailer".into(),
        ));
    }

    let params = ModelParams::from_entries(&meta.config, vocab.len(), entries)?;
    Ok(Checkpoint {
        config: meta.config,
        vocab,
        params,
        seed: meta.seed,
        epoch: meta.epoch,
    })
}
