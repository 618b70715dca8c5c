//! Binary checkpoint: `GZF1`, a little-endian `u32` header length, the JSON
//! header, raw little-endian `f32` tensor payloads in header order, and a
//! trailing CRC-32 of everything before it.

use std::io::{Read, Write};
use std::path::Path;

use gaze_tensor::Tensor;
use serde::{Deserialize, Serialize};

use super::{Arch, ModelConfig, ModelError, SequenceModel};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"GZF1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    schema_version: u32,
    arch: Arch,
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
}

pub fn write_checkpoint<W: Write>(model: &SequenceModel<f32>, mut w: W) -> Result<(), ModelError> {
    let header = Header {
        schema_version: CHECKPOINT_VERSION,
        arch: model.arch(),
        config: model.config,
        tensors: model
            .params
            .iter()
            .map(|(_, p)| TensorEntry {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| ModelError::CorruptFile(e.to_string()))?;
    let mut buf = Vec::with_capacity(12 + json.len() + 4 * model.param_count());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    for (_, p) in model.params.iter() {
        for v in p.value.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

pub fn save_checkpoint(model: &SequenceModel<f32>, path: &Path) -> Result<(), ModelError> {
    write_checkpoint(model, std::io::BufWriter::new(std::fs::File::create(path)?))
}

fn corrupt(msg: impl Into<String>) -> ModelError {
    ModelError::CorruptFile(msg.into())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<SequenceModel<f32>, ModelError> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    if buf.len() < 12 || &buf[..4] != CHECKPOINT_MAGIC {
        return Err(corrupt("missing GZF1 magic"));
    }
    let (body, tail) = buf.split_at(buf.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(corrupt("checksum mismatch (truncated or modified file)"));
    }
    let header_len = u32::from_le_bytes(body[4..8].try_into().expect("4 bytes")) as usize;
    let header_end = 8usize
        .checked_add(header_len)
        .filter(|&e| e <= body.len())
        .ok_or_else(|| corrupt("header length beyond end of file"))?;
    let header: Header = serde_json::from_slice(&body[8..header_end])
        .map_err(|e| corrupt(format!("header: {e}")))?;
    if header.schema_version != CHECKPOINT_VERSION {
        return Err(ModelError::VersionMismatch {
            found: header.schema_version,
            expected: CHECKPOINT_VERSION,
        });
    }
    if header.arch != header.config.arch() {
        return Err(corrupt("arch tag disagrees with config"));
    }
    let mut model = SequenceModel::<f32>::build(header.config, 0)?;
    let mut payload = &body[header_end..];
    let ids: Vec<_> = model.params.iter().map(|(id, _)| id).collect();
    if ids.len() != header.tensors.len() {
        return Err(corrupt("tensor list does not match the architecture"));
    }
    for (id, entry) in ids.into_iter().zip(&header.tensors) {
        let param = model.params.get_mut(id);
        if param.name != entry.name || param.value.shape() != entry.shape.as_slice() {
            return Err(corrupt(format!("unexpected tensor {} {:?}", entry.name, entry.shape)));
        }
        let n = param.value.len();
        if payload.len() < 4 * n {
            return Err(corrupt("payload shorter than declared tensors"));
        }
        let values = payload[..4 * n]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        param.value = Tensor::new(&entry.shape, values)?;
        payload = &payload[4 * n..];
    }
    if !payload.is_empty() {
        return Err(corrupt("trailing bytes after tensors"));
    }
    Ok(model)
}

pub fn load_checkpoint(path: &Path) -> Result<SequenceModel<f32>, ModelError> {
    read_checkpoint(std::io::BufReader::new(std::fs::File::open(path)?))
}

/// Loads a checkpoint and rejects any other architecture.
pub fn load_checkpoint_as(path: &Path, arch: Arch) -> Result<SequenceModel<f32>, ModelError> {
    let model = load_checkpoint(path)?;
    if model.arch() != arch {
        return Err(ModelError::ArchMismatch {
            expected: arch,
            found: model.arch(),
        });
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{LstmConfig, TransformerConfig};

    fn small_lstm() -> SequenceModel<f32> {
        let mut cfg = LstmConfig::new(4, 6, 3);
        cfg.units = 8;
        SequenceModel::build(ModelConfig::Lstm(cfg), 5).unwrap()
    }

    fn bytes(model: &SequenceModel<f32>) -> Vec<u8> {
        let mut buf = Vec::new();
        write_checkpoint(model, &mut buf).unwrap();
        buf
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let model = small_lstm();
        let back = read_checkpoint(bytes(&model).as_slice()).unwrap();
        let input: Vec<f32> = (0..2 * 4 * 6).map(|i| (i as f32 * 0.37).sin().abs()).collect();
        let a = model.predict(&input).unwrap();
        let b = back.predict(&input).unwrap();
        assert_eq!(
            a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn truncated_and_flipped_files_are_corrupt() {
        let buf = bytes(&small_lstm());
        for bad in [buf[..buf.len() - 9].to_vec(), {
            let mut b = buf.clone();
            b[40] ^= 1;
            b
        }] {
            assert!(matches!(
                read_checkpoint(bad.as_slice()),
                Err(ModelError::CorruptFile(_))
            ));
        }
        assert!(matches!(
            read_checkpoint(&b"nope"[..]),
            Err(ModelError::CorruptFile(_))
        ));
    }

    #[test]
    fn version_mismatch() {
        let buf = bytes(&small_lstm());
        let key = b"\"schema_version\":1";
        let pos = buf.windows(key.len()).position(|w| w == key).unwrap() + key.len() - 1;
        let mut body = buf[..buf.len() - 4].to_vec();
        body[pos] = b'7';
        let crc = crc32fast::hash(&body);
        body.extend_from_slice(&crc.to_le_bytes());
        assert!(matches!(
            read_checkpoint(body.as_slice()),
            Err(ModelError::VersionMismatch { found: 7, .. })
        ));
    }

    #[test]
    fn arch_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.gzf");
        save_checkpoint(&small_lstm(), &path).unwrap();
        assert!(load_checkpoint_as(&path, Arch::Lstm).is_ok());
        assert!(matches!(
            load_checkpoint_as(&path, Arch::Transformer),
            Err(ModelError::ArchMismatch {
                expected: Arch::Transformer,
                found: Arch::Lstm
            })
        ));
        let mut cfg = TransformerConfig::new(3, 4, 2);
        cfg.ffn_hidden = 8;
        let t = SequenceModel::<f32>::build(ModelConfig::Transformer(cfg), 1).unwrap();
        save_checkpoint(&t, &path).unwrap();
        assert_eq!(load_checkpoint_as(&path, Arch::Transformer).unwrap().param_count(), t.param_count());
    }
}
