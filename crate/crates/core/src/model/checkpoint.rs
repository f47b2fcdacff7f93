//! Checkpoint container: `CCKP` magic, u32 format version, u64 header
//! length, JSON header (model spec + tensor table), then every tensor as
//! little-endian f32 in table order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::params::ParamSpec;
use super::{Model, ModelSpec};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"CCKP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    spec: ModelSpec,
    tensors: Vec<ParamSpec>,
}

pub fn to_bytes(model: &Model<f32>) -> Result<Vec<u8>> {
    let header = Header {
        format_version: FORMAT_VERSION,
        spec: *model.spec(),
        tensors: model.store.specs().to_vec(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + json.len() + model.store.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for v in &model.store.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model<f32>> {
    let corrupt = |offset: usize, msg: &str| Error::Corrupt {
        offset: offset as u64,
        msg: msg.to_string(),
    };
    if bytes.len() < 16 {
        return Err(corrupt(bytes.len(), "truncated checkpoint header"));
    }
    if &bytes[..4] != MAGIC {
        return Err(corrupt(0, "bad magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(corrupt(4, &format!("unsupported checkpoint version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = 16usize
        .checked_add(hlen)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| corrupt(8, "header length past end of file"))?;
    let header: Header =
        serde_json::from_slice(&bytes[16..body]).map_err(|e| corrupt(16, &e.to_string()))?;
    if header.format_version != FORMAT_VERSION {
        return Err(corrupt(16, "header version disagrees with preamble"));
    }
    let mut model = Model::<f32>::zeroed(header.spec)?;
    let specs = model.store.specs();
    if specs.len() != header.tensors.len()
        || specs
            .iter()
            .zip(&header.tensors)
            .any(|(a, b)| a.name != b.name || a.shape != b.shape)
    {
        return Err(corrupt(16, "tensor table does not match the model spec"));
    }
    let need = model.store.len() * 4;
    if bytes.len() - body != need {
        return Err(corrupt(
            bytes.len(),
            &format!("expected {need} tensor bytes, found {}", bytes.len() - body),
        ));
    }
    for (v, c) in model.store.data.iter_mut().zip(bytes[body..].chunks_exact(4)) {
        *v = f32::from_le_bytes(c.try_into().unwrap());
    }
    for t in &header.tensors {
        if !t.trainable {
            // Single-tensor freeze flags are restored by group.
            model.store.set_trainable(t.group, false);
        }
    }
    Ok(model)
}

pub fn save(model: &Model<f32>, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(model)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Model<f32>> {
    from_bytes(&fs::read(path)?)
}

/// SHA-256 over the model spec and the raw tensor bytes. Freeze flags do
/// not change it.
pub fn fingerprint(model: &Model<f32>) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(model.spec()).expect("spec serializes"));
    for v in &model.store.data {
        h.update(v.to_le_bytes());
    }
    h.finalize().into()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, CompressorSpec, DecoderConfig, EncoderConfig, Group};

    fn spec() -> ModelSpec {
        ModelSpec {
            decoder: DecoderConfig {
                n_layers: 1,
                dim: 8,
                n_heads: 2,
                d_ff: 32,
                vocab: 40,
                max_len: 16,
            },
            compressor: CompressorSpec::Light {
                encoder: EncoderConfig {
                    n_layers: 1,
                    dim: 4,
                    n_heads: 1,
                    d_ff: 16,
                    vocab: 40,
                    max_len: 16,
                },
                rate: 4,
            },
        }
    }

    #[test]
    fn roundtrip_is_bitwise() {
        let mut m = init_params(spec(), 5).unwrap();
        m.store.set_trainable(Group::Decoder, false);
        let bytes = to_bytes(&m).unwrap();
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(back.store.data, m.store.data);
        assert_eq!(to_bytes(&back).unwrap(), bytes);
        assert!(!back.store.is_group_trainable(Group::Decoder));
        assert_eq!(fingerprint(&back), fingerprint(&m));
    }

    #[test]
    fn truncation_is_detected() {
        let bytes = to_bytes(&init_params(spec(), 5).unwrap()).unwrap();
        assert!(matches!(from_bytes(&bytes[..bytes.len() - 3]), Err(Error::Corrupt { .. })));
        assert!(matches!(from_bytes(&bytes[..10]), Err(Error::Corrupt { .. })));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(from_bytes(&bad), Err(Error::Corrupt { offset: 0, .. })));
    }

    #[test]
    fn fingerprint_tracks_weights() {
        let a = init_params(spec(), 5).unwrap();
        let mut b = a.clone();
        b.store.data[3] += 1.0;
        assert_ne!(fingerprint(&a), fingerprint(&b));
    }
}
