//! "SPNET v1" model files: a JSON manifest plus an adjacent blob of
//! little-endian `f64` tensors.
//!
//! The manifest lists layers in order. Each weight/bias tensor is a byte
//! range of the blob together with the SHA-256 of exactly those bytes.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{Layer, NetworkModel};
use crate::tensor::DenseTensor;

pub const FORMAT_TAG: &str = "spnet-v1";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub shape: Vec<usize>,
    /// Byte offset into the blob.
    pub offset: usize,
    /// Byte length.
    pub length: usize,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<TensorEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<TensorEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub padding: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub input_shape: Vec<usize>,
    /// Blob file name, relative to the manifest's directory.
    pub blob: String,
    pub layers: Vec<LayerEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn tensor_bytes(t: &DenseTensor) -> Vec<u8> {
    t.data().iter().flat_map(|v| v.to_le_bytes()).collect()
}

/// Serializes `model` into a manifest and blob held in memory.
pub fn encode(model: &NetworkModel, blob_name: &str) -> (Manifest, Vec<u8>) {
    let mut blob = Vec::new();
    let mut push = |t: &DenseTensor| {
        let bytes = tensor_bytes(t);
        let entry = TensorEntry {
            shape: t.shape().to_vec(),
            offset: blob.len(),
            length: bytes.len(),
            sha256: sha256_hex(&bytes),
        };
        blob.extend_from_slice(&bytes);
        entry
    };
    let layers = model
        .layers()
        .iter()
        .map(|layer| {
            let mut e = LayerEntry {
                kind: layer.kind().to_string(),
                weight: None,
                bias: None,
                stride: None,
                padding: None,
                size: None,
            };
            match layer {
                Layer::Dense { weight, bias } => {
                    e.weight = Some(push(weight));
                    e.bias = bias.as_ref().map(&mut push);
                }
                Layer::Conv {
                    weight,
                    bias,
                    stride,
                    padding,
                } => {
                    e.weight = Some(push(weight));
                    e.bias = bias.as_ref().map(&mut push);
                    e.stride = Some(*stride);
                    e.padding = Some(*padding);
                }
                Layer::MaxPool { size, stride } | Layer::AvgPool { size, stride } => {
                    e.size = Some(*size);
                    e.stride = Some(*stride);
                }
                Layer::Relu | Layer::Flatten => {}
            }
            e
        })
        .collect();
    (
        Manifest {
            format: FORMAT_TAG.to_string(),
            input_shape: model.input_shape().to_vec(),
            blob: blob_name.to_string(),
            layers,
        },
        blob,
    )
}

fn read_tensor(blob: &[u8], entry: &TensorEntry, what: &str) -> Result<DenseTensor> {
    let end = entry
        .offset
        .checked_add(entry.length)
        .filter(|&e| e <= blob.len())
        .ok_or_else(|| {
            Error::Format(format!(
                "{what}: range {}+{} exceeds blob of {} bytes",
                entry.offset,
                entry.length,
                blob.len()
            ))
        })?;
    let bytes = &blob[entry.offset..end];
    if sha256_hex(bytes) != entry.sha256 {
        return Err(Error::Integrity(format!("{what}: SHA-256 mismatch")));
    }
    if entry.length % 8 != 0 {
        return Err(Error::Format(format!("{what}: length is not a multiple of 8")));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    DenseTensor::new(entry.shape.clone(), data)
        .map_err(|e| Error::Format(format!("{what}: {e}")))
}

/// Rebuilds a model from a manifest and its blob bytes.
pub fn decode(manifest: &Manifest, blob: &[u8]) -> Result<NetworkModel> {
    if manifest.format != FORMAT_TAG {
        return Err(Error::Format(format!(
            "unsupported format {:?}, expected {FORMAT_TAG:?}",
            manifest.format
        )));
    }
    let mut layers = Vec::with_capacity(manifest.layers.len());
    for (i, e) in manifest.layers.iter().enumerate() {
        let need = |v: Option<usize>, name: &str| {
            v.ok_or_else(|| Error::Format(format!("layer {i} ({}): missing {name}", e.kind)))
        };
        let weight = || {
            let w = e
                .weight
                .as_ref()
                .ok_or_else(|| Error::Format(format!("layer {i} ({}): missing weight", e.kind)))?;
            read_tensor(blob, w, &format!("layer {i} weight"))
        };
        let bias = || {
            e.bias
                .as_ref()
                .map(|b| read_tensor(blob, b, &format!("layer {i} bias")))
                .transpose()
        };
        let layer = match e.kind.as_str() {
            "dense" => Layer::Dense {
                weight: weight()?,
                bias: bias()?,
            },
            "conv" => Layer::Conv {
                weight: weight()?,
                bias: bias()?,
                stride: need(e.stride, "stride")?,
                padding: need(e.padding, "padding")?,
            },
            "relu" => Layer::Relu,
            "flatten" => Layer::Flatten,
            "maxpool" => Layer::MaxPool {
                size: need(e.size, "size")?,
                stride: need(e.stride, "stride")?,
            },
            "avgpool" => Layer::AvgPool {
                size: need(e.size, "size")?,
                stride: need(e.stride, "stride")?,
            },
            other => {
                return Err(Error::Format(format!(
                    "layer {i}: unsupported kind {other:?} (only sequential dense/conv/relu/pool/flatten networks are supported)"
                )))
            }
        };
        if !layer.is_weighted() && (e.weight.is_some() || e.bias.is_some()) {
            return Err(Error::Format(format!("layer {i} ({}) must not carry weights", e.kind)));
        }
        layers.push(layer);
    }
    NetworkModel::new(manifest.input_shape.clone(), layers)
}

/// Path of the blob that accompanies `manifest_path`.
pub fn blob_path(manifest_path: &Path) -> PathBuf {
    manifest_path.with_extension("bin")
}

/// Writes `<path>` (manifest) and `<path>.bin` (blob).
pub fn save(model: &NetworkModel, manifest_path: &Path) -> Result<()> {
    let blob_file = blob_path(manifest_path);
    let blob_name = blob_file
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::Format(format!("bad model path {}", manifest_path.display())))?
        .to_string();
    let (manifest, blob) = encode(model, &blob_name);
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(&blob_file, &blob).map_err(|e| Error::io(&blob_file, e))?;
    fs::write(manifest_path, text).map_err(|e| Error::io(manifest_path, e))?;
    Ok(())
}

pub fn load(manifest_path: &Path) -> Result<NetworkModel> {
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", manifest_path.display())))?;
    let blob_file = manifest_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&manifest.blob);
    let blob = fs::read(&blob_file).map_err(|e| Error::io(&blob_file, e))?;
    decode(&manifest, &blob)
}

/// SHA-256 of every weight/bias tensor, in layer order.
pub fn tensor_hashes(model: &NetworkModel) -> Vec<String> {
    encode(model, "-")
        .0
        .layers
        .into_iter()
        .flat_map(|l| l.weight.into_iter().chain(l.bias))
        .map(|t| t.sha256)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> NetworkModel {
        NetworkModel::new(
            vec![1, 4, 4],
            vec![
                Layer::Conv {
                    weight: DenseTensor::from_fn(&[2, 1, 3, 3], |i| i as f64 * 0.1 - 0.4),
                    bias: Some(DenseTensor::vector(vec![0.5, -0.25])),
                    stride: 1,
                    padding: 1,
                },
                Layer::Relu,
                Layer::AvgPool { size: 2, stride: 2 },
                Layer::Flatten,
                Layer::Dense {
                    weight: DenseTensor::from_fn(&[3, 8], |i| (i as f64).sin()),
                    bias: None,
                },
            ],
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let m = toy();
        save(&m, &path).unwrap();
        let back = load(&path).unwrap();
        assert_eq!(back, m);
        let first = fs::read(blob_path(&path)).unwrap();
        save(&back, &path).unwrap();
        assert_eq!(fs::read(blob_path(&path)).unwrap(), first);
    }

    #[test]
    fn manifest_carries_format_tag() {
        let (manifest, blob) = encode(&toy(), "m.bin");
        assert_eq!(manifest.format, "spnet-v1");
        let json = serde_json::to_value(&manifest).unwrap();
        assert_eq!(json["layers"][0]["kind"], "conv");
        assert_eq!(json["layers"][0]["weight"]["length"], 18 * 8);
        assert_eq!(blob.len(), (18 + 2 + 24) * 8);
    }

    #[test]
    fn corrupted_blob_is_rejected() {
        let (manifest, mut blob) = encode(&toy(), "m.bin");
        blob[3] ^= 0x10;
        assert!(matches!(decode(&manifest, &blob), Err(Error::Integrity(_))));
        assert!(matches!(decode(&manifest, &blob[..16]), Err(Error::Format(_))));
    }

    #[test]
    fn rejects_foreign_formats_and_kinds() {
        let (mut manifest, blob) = encode(&toy(), "m.bin");
        manifest.format = "onnx".into();
        assert!(decode(&manifest, &blob).is_err());
        let (mut manifest, blob) = encode(&toy(), "m.bin");
        manifest.layers[1].kind = "residual_add".into();
        let err = decode(&manifest, &blob).unwrap_err().to_string();
        assert!(err.contains("sequential"), "{err}");
    }
}
